#include "bownet/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "bownet/error.hpp"

namespace bownet {

void PerturbConfig::validate() const {
  auto prob = [](float p, const char* what) {
    if (!(p >= 0.0f && p <= 1.0f)) throw ConfigError(std::string(what) + " must lie in [0,1]");
  };
  auto range = [](std::pair<float, float> r, const char* what) {
    if (!(r.first <= r.second)) throw ConfigError(std::string(what) + " range has min > max");
  };
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0) {
    throw ConfigError("colour jitter strengths must be non-negative");
  }
  if (hue > 0.5f) throw ConfigError("hue strength above half a turn");
  prob(grayscale_prob, "grayscale_prob");
  prob(flip_prob, "flip_prob");
  range(crop_scale, "crop_scale");
  range(aspect, "aspect");
  if (crop_scale.first <= 0.0f || crop_scale.second > 1.0f) throw ConfigError("crop_scale must lie in (0,1]");
  if (aspect.first <= 0.0f) throw ConfigError("aspect ratios must be positive");
  if (out_size < 2) throw ConfigError("out_size must be at least 2");
}

PerturbConfig PerturbConfig::identity(int size) {
  PerturbConfig c;
  c.brightness = c.contrast = c.saturation = c.hue = 0.0f;
  c.grayscale_prob = 0.0f;
  c.flip_prob = 0.0f;
  c.crop_scale = {1.0f, 1.0f};
  c.aspect = {1.0f, 1.0f};
  c.out_size = size;
  return c;
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

namespace {

std::size_t plane(const Image& img) { return static_cast<std::size_t>(img.width) * img.height; }

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

Image adjust_brightness(const Image& img, float factor) {
  Image out = img;
  for (float& v : out.pixels) v = clamp01(static_cast<double>(v) * factor);
  return out;
}

Image adjust_contrast(const Image& img, float factor) {
  const std::size_t n = plane(img);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += luma(img.pixels[i], img.pixels[n + i], img.pixels[2 * n + i]);
  mean /= static_cast<double>(n);
  Image out = img;
  for (float& v : out.pixels) v = clamp01(mean + factor * (v - mean));
  return out;
}

Image adjust_saturation(const Image& img, float factor) {
  const std::size_t n = plane(img);
  Image out = img;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = luma(img.pixels[i], img.pixels[n + i], img.pixels[2 * n + i]);
    for (int c = 0; c < 3; ++c) {
      float& v = out.pixels[c * n + i];
      v = clamp01(y + factor * (v - y));
    }
  }
  return out;
}

Image adjust_hue(const Image& img, float turns) {
  const double th = 2.0 * std::numbers::pi * turns;
  const double cs = std::cos(th), sn = std::sin(th);
  const std::size_t n = plane(img);
  Image out = img;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[i], g = img.pixels[n + i], b = img.pixels[2 * n + i];
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double ci = 0.595716 * r - 0.274453 * g - 0.321263 * b;
    const double cq = 0.211456 * r - 0.522591 * g + 0.311135 * b;
    const double i2 = cs * ci - sn * cq;
    const double q2 = sn * ci + cs * cq;
    out.pixels[i] = clamp01(y + 0.9563 * i2 + 0.6210 * q2);
    out.pixels[n + i] = clamp01(y - 0.2721 * i2 - 0.6474 * q2);
    out.pixels[2 * n + i] = clamp01(y - 1.1070 * i2 + 1.7046 * q2);
  }
  return out;
}

Image color_jitter(const Image& img, Rng& rng, const PerturbConfig& cfg) {
  std::array<int, 4> order = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  Image out = img;
  for (int op : order) {
    switch (op) {
      case 0:
        if (cfg.brightness > 0) out = adjust_brightness(out, static_cast<float>(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)));
        break;
      case 1:
        if (cfg.contrast > 0) out = adjust_contrast(out, static_cast<float>(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)));
        break;
      case 2:
        if (cfg.saturation > 0) out = adjust_saturation(out, static_cast<float>(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)));
        break;
      default:
        if (cfg.hue > 0) out = adjust_hue(out, static_cast<float>(rng.uniform(-cfg.hue, cfg.hue)));
        break;
    }
  }
  return out;
}

Image to_grayscale(const Image& img) {
  const std::size_t n = plane(img);
  Image out = img;
  for (std::size_t i = 0; i < n; ++i) {
    const float y = luma(img.pixels[i], img.pixels[n + i], img.pixels[2 * n + i]);
    out.pixels[i] = out.pixels[n + i] = out.pixels[2 * n + i] = std::clamp(y, 0.0f, 1.0f);
  }
  return out;
}

float bilinear_sample(const Image& img, int channel, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = (1 - fx) * img.at(channel, y0, x0) + fx * img.at(channel, y0, x1);
  const double bot = (1 - fx) * img.at(channel, y1, x0) + fx * img.at(channel, y1, x1);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

Image crop_resize(const Image& img, int x0, int y0, int w, int h, int out_w, int out_h) {
  if (w < 1 || h < 1 || x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height) {
    throw DimensionError("crop window outside the image");
  }
  Image out(out_w, out_h);
  out.label = img.label;
  const double sx = static_cast<double>(w) / out_w, sy = static_cast<double>(h) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double y = std::clamp(y0 + (oy + 0.5) * sy - 0.5, static_cast<double>(y0), static_cast<double>(y0 + h - 1));
    for (int ox = 0; ox < out_w; ++ox) {
      const double x = std::clamp(x0 + (ox + 0.5) * sx - 0.5, static_cast<double>(x0), static_cast<double>(x0 + w - 1));
      for (int c = 0; c < 3; ++c) out.at(c, oy, ox) = bilinear_sample(img, c, y, x);
    }
  }
  return out;
}

Image random_resized_crop(const Image& img, Rng& rng, const PerturbConfig& cfg) {
  const double area = static_cast<double>(img.width) * img.height;
  const double log_lo = std::log(cfg.aspect.first), log_hi = std::log(cfg.aspect.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(cfg.crop_scale.first, cfg.crop_scale.second);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= img.width && h <= img.height) {
      const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(img.width - w) + 1));
      const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(img.height - h) + 1));
      return crop_resize(img, x0, y0, w, h, cfg.out_size, cfg.out_size);
    }
  }
  const int side = std::min(img.width, img.height);
  return crop_resize(img, (img.width - side) / 2, (img.height - side) / 2, side, side, cfg.out_size, cfg.out_size);
}

Image hflip(const Image& img) {
  Image out = img;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image rotate90(const Image& img, int k) {
  if (!img.square()) throw DimensionError("rotate90 needs a square image");
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  const int s = img.width;
  Image out = img;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        float v;
        switch (k) {
          case 1: v = img.at(c, x, s - 1 - y); break;
          case 2: v = img.at(c, s - 1 - y, s - 1 - x); break;
          default: v = img.at(c, s - 1 - x, y); break;
        }
        out.at(c, y, x) = v;
      }
    }
  }
  return out;
}

Image perturb(const Image& img, Rng& rng, const PerturbConfig& cfg) {
  Image out = random_resized_crop(img, rng, cfg);
  out = color_jitter(out, rng, cfg);
  if (cfg.grayscale_prob > 0 && rng.bernoulli(cfg.grayscale_prob)) out = to_grayscale(out);
  if (cfg.flip_prob > 0 && rng.bernoulli(cfg.flip_prob)) out = hflip(out);
  return out;
}

CutBox sample_cutbox(Rng& rng, int width, int height, std::pair<double, double> frac_range) {
  const auto [lo, hi] = frac_range;
  if (!(0.0 <= lo && lo <= hi && hi <= 1.0)) throw ConfigError("cutmix fraction range must satisfy 0 <= min <= max <= 1");
  CutBox box;
  box.w = static_cast<int>(std::lround(rng.uniform(lo, hi) * width));
  box.h = static_cast<int>(std::lround(rng.uniform(lo, hi) * height));
  box.w = std::clamp(box.w, 0, width);
  box.h = std::clamp(box.h, 0, height);
  box.x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(width - box.w) + 1));
  box.y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(height - box.h) + 1));
  box.lambda = 1.0 - static_cast<double>(box.w) * box.h / (static_cast<double>(width) * height);
  return box;
}

Image cutmix_images(const Image& a, const Image& b, const CutBox& box) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("cutmix images differ in size");
  if (box.x0 < 0 || box.y0 < 0 || box.x0 + box.w > a.width || box.y0 + box.h > a.height) {
    throw DimensionError("cutmix box outside the image");
  }
  Image out = a;
  for (int c = 0; c < 3; ++c)
    for (int y = box.y0; y < box.y0 + box.h; ++y)
      for (int x = box.x0; x < box.x0 + box.w; ++x) out.at(c, y, x) = b.at(c, y, x);
  return out;
}

}  // namespace bownet
