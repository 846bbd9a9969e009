#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "bownet/data.hpp"
#include "bownet/error.hpp"

namespace bownet {

namespace {

// Glyphs are drawn in a unit box (u right, v down) from straight strokes and
// circular arcs. Each has a clear upright orientation, so 90-degree
// rotations of an image are distinguishable only through its shape.
struct Stroke {
  bool arc = false;
  double x0, y0, x1, y1;  // segment ends, or arc centre (x0, y0), radius x1
  double a0 = 0, a1 = 0;  // arc angles (radians, y down)
};

struct Glyph {
  const char* name;
  std::vector<Stroke> strokes;
};

Stroke seg(double x0, double y0, double x1, double y1) { return {false, x0, y0, x1, y1}; }
Stroke arc(double cx, double cy, double r, double a0, double a1) { return {true, cx, cy, r, 0, a0, a1}; }

const std::vector<Glyph>& glyphs() {
  constexpr double kPi = std::numbers::pi;
  static const std::vector<Glyph> g = {
      {"T", {seg(0.1, 0.12, 0.9, 0.12), seg(0.5, 0.12, 0.5, 0.9)}},
      {"L", {seg(0.25, 0.1, 0.25, 0.9), seg(0.25, 0.9, 0.85, 0.9)}},
      {"F", {seg(0.25, 0.1, 0.25, 0.9), seg(0.25, 0.1, 0.85, 0.1), seg(0.25, 0.48, 0.7, 0.48)}},
      {"A", {seg(0.5, 0.1, 0.15, 0.9), seg(0.5, 0.1, 0.85, 0.9), seg(0.3, 0.62, 0.7, 0.62)}},
      {"Y", {seg(0.15, 0.1, 0.5, 0.5), seg(0.85, 0.1, 0.5, 0.5), seg(0.5, 0.5, 0.5, 0.9)}},
      {"P", {seg(0.25, 0.1, 0.25, 0.9), seg(0.25, 0.1, 0.5, 0.1), seg(0.25, 0.5, 0.5, 0.5),
             arc(0.5, 0.3, 0.2, -kPi / 2, kPi / 2)}},
      {"arch", {arc(0.5, 0.45, 0.32, kPi, 2 * kPi), seg(0.18, 0.45, 0.18, 0.9), seg(0.82, 0.45, 0.82, 0.9)}},
      {"J", {seg(0.65, 0.1, 0.65, 0.65), arc(0.42, 0.65, 0.23, 0, kPi), seg(0.4, 0.1, 0.9, 0.1)}},
      {"seven", {seg(0.15, 0.1, 0.85, 0.1), seg(0.85, 0.1, 0.4, 0.9)}},
      {"K", {seg(0.25, 0.1, 0.25, 0.9), seg(0.25, 0.55, 0.8, 0.1), seg(0.4, 0.45, 0.8, 0.9)}},
      {"h", {seg(0.25, 0.1, 0.25, 0.9), arc(0.5, 0.6, 0.25, kPi, 2 * kPi), seg(0.75, 0.6, 0.75, 0.9)}},
      {"four", {seg(0.6, 0.1, 0.15, 0.62), seg(0.15, 0.62, 0.85, 0.62), seg(0.6, 0.1, 0.6, 0.9)}},
  };
  return g;
}

double seg_distance(double px, double py, const Stroke& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double t = std::clamp(((px - s.x0) * dx + (py - s.y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return std::hypot(px - s.x0 - t * dx, py - s.y0 - t * dy);
}

double arc_distance(double px, double py, const Stroke& s) {
  constexpr double kTwoPi = 2 * std::numbers::pi;
  double a = std::atan2(py - s.y0, px - s.x0);
  while (a < s.a0) a += kTwoPi;
  while (a >= s.a0 + kTwoPi) a -= kTwoPi;
  if (a <= s.a1) return std::abs(std::hypot(px - s.x0, py - s.y0) - s.x1);
  const double e0 = std::hypot(px - s.x0 - s.x1 * std::cos(s.a0), py - s.y0 - s.x1 * std::sin(s.a0));
  const double e1 = std::hypot(px - s.x0 - s.x1 * std::cos(s.a1), py - s.y0 - s.x1 * std::sin(s.a1));
  return std::min(e0, e1);
}

double glyph_distance(const Glyph& g, double u, double v) {
  double d = 1e9;
  for (const auto& s : g.strokes) d = std::min(d, s.arc ? arc_distance(u, v, s) : seg_distance(u, v, s));
  return d;
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

Image render(int cls, int size, Rng& rng, double jitter) {
  const auto& all = glyphs();
  const Glyph& glyph = all[static_cast<std::size_t>(cls) % all.size()];
  // Classes beyond the glyph count reuse glyphs with heavier strokes.
  const double weight = 1.0 + 0.5 * static_cast<double>(static_cast<std::size_t>(cls) / all.size());

  // Pose: scale, position, small tilt and shear, all scaled by jitter.
  const double scale = 0.62 + jitter * rng.uniform(-0.14, 0.12);
  const double cx = 0.5 + jitter * rng.uniform(-1.0, 1.0) * (0.5 - scale / 2) * 0.8;
  const double cy = 0.5 + jitter * rng.uniform(-1.0, 1.0) * (0.5 - scale / 2) * 0.8;
  const double tilt = jitter * rng.uniform(-0.2, 0.2);
  const double shear = jitter * rng.uniform(-0.15, 0.15);
  const double aspect = 1.0 + jitter * rng.uniform(-0.15, 0.15);
  const double half_width = (0.055 + jitter * rng.uniform(-0.012, 0.012)) * weight;

  // Colours are independent of the class: random hues with a random
  // light-on-dark or dark-on-light polarity.
  const double fg_hue = jitter > 0 ? rng.uniform() : 0.0;
  const double bg_hue = jitter > 0 ? rng.uniform() : 0.5;
  const bool light_fg = jitter > 0 ? rng.bernoulli(0.5) : true;
  const double fg_val = light_fg ? rng.uniform(0.7, 1.0) : rng.uniform(0.05, 0.35);
  const double bg_val = light_fg ? rng.uniform(0.05, 0.4) : rng.uniform(0.65, 1.0);
  const Rgb fg = hsv_to_rgb(fg_hue, jitter * rng.uniform(0.2, 0.9), fg_val);
  const Rgb bg = hsv_to_rgb(bg_hue, jitter * rng.uniform(0.1, 0.6), bg_val);
  // Background texture: a faint plane wave in a random direction.
  const double wave_amp = 0.06 * jitter;
  const double wave_dir = rng.uniform(0.0, 2 * std::numbers::pi);
  const double wave_freq = rng.uniform(2.0, 5.0);
  const double wave_phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double noise = 0.03 * jitter;

  const double ct = std::cos(tilt), st = std::sin(tilt);
  const double aa = 0.7 / size / scale;  // anti-aliasing width in glyph units
  Image img(size, size);
  img.label = cls;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      // Image point -> glyph box coordinates.
      double gx = (u - cx) / scale, gy = (v - cy) / scale;
      const double rx = ct * gx + st * gy, ry = -st * gx + ct * gy;
      gx = rx / aspect - shear * ry + 0.5;
      gy = ry + 0.5;
      const double d = glyph_distance(glyph, gx, gy);
      const double a = 1.0 - smoothstep(half_width - aa, half_width + aa, d);
      const double wave = wave_amp * std::sin(wave_freq * 2 * std::numbers::pi *
                                                  (u * std::cos(wave_dir) + v * std::sin(wave_dir)) +
                                              wave_phase);
      const double px[3] = {bg.r + a * (fg.r - bg.r), bg.g + a * (fg.g - bg.g), bg.b + a * (fg.b - bg.b)};
      for (int c = 0; c < 3; ++c) {
        const double val = px[c] + (1.0 - a) * wave + noise * rng.normal();
        img.at(c, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

std::vector<std::string> synthetic_family_names() {
  std::vector<std::string> names;
  for (const auto& g : glyphs()) names.emplace_back(g.name);
  return names;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (spec.per_class < 1) throw ConfigError("synthetic dataset needs at least 1 image per class");
  if (spec.size < 8) throw ConfigError("synthetic image size must be at least 8");
  if (spec.jitter < 0.0 || spec.jitter > 1.0) throw ConfigError("synthetic jitter must lie in [0,1]");

  Dataset ds;
  const auto& all = glyphs();
  for (int c = 0; c < spec.n_classes; ++c) {
    std::string name = all[static_cast<std::size_t>(c) % all.size()].name;
    if (static_cast<std::size_t>(c) >= all.size()) name += "_w" + std::to_string(static_cast<std::size_t>(c) / all.size());
    ds.class_names.push_back(name);
  }
  const Rng root(spec.seed);
  ds.images.reserve(static_cast<std::size_t>(spec.n_classes) * spec.per_class);
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i) {
      Rng rng = root.split(static_cast<std::uint64_t>(c) * spec.per_class + i);
      ds.images.push_back(render(c, spec.size, rng, spec.jitter));
    }
  }
  return ds;
}

}  // namespace bownet
