#pragma once

#include <utility>

#include "bownet/data.hpp"
#include "bownet/numerics.hpp"

namespace bownet {

// Parameters of the perturbation operator applied to training images.
struct PerturbConfig {
  float brightness = 0.4f;
  float contrast = 0.4f;
  float saturation = 0.4f;
  float hue = 0.1f;  // turns
  float grayscale_prob = 0.2f;
  std::pair<float, float> crop_scale{0.3f, 1.0f};
  std::pair<float, float> aspect{3.0f / 4.0f, 4.0f / 3.0f};
  float flip_prob = 0.5f;
  int out_size = 32;

  // Throws ConfigError on inverted ranges or probabilities outside [0, 1].
  void validate() const;
  // A config under which perturb() is the identity for `size`-pixel images.
  static PerturbConfig identity(int size);
};

// Pasted CutMix patch. lambda is the fraction of the first image that survives.
struct CutBox {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  double lambda = 1.0;
};

float luma(float r, float g, float b);

Image adjust_brightness(const Image& img, float factor);
Image adjust_contrast(const Image& img, float factor);
Image adjust_saturation(const Image& img, float factor);
// Rotation of chroma in YIQ space by `turns`; luma is preserved.
Image adjust_hue(const Image& img, float turns);

Image color_jitter(const Image& img, Rng& rng, const PerturbConfig& cfg);
Image to_grayscale(const Image& img);

// Bilinear sample with edge clamping; (y, x) in pixel-centre coordinates.
float bilinear_sample(const Image& img, int channel, double y, double x);
// Crop [x0, x0+w) x [y0, y0+h) and resample to out_w x out_h.
Image crop_resize(const Image& img, int x0, int y0, int w, int h, int out_w, int out_h);
Image random_resized_crop(const Image& img, Rng& rng, const PerturbConfig& cfg);

Image hflip(const Image& img);
// Counter-clockwise rotation by k * 90 degrees (k taken mod 4).
Image rotate90(const Image& img, int k);

// crop -> colour jitter -> grayscale (p) -> horizontal flip (p)
Image perturb(const Image& img, Rng& rng, const PerturbConfig& cfg);

CutBox sample_cutbox(Rng& rng, int width, int height, std::pair<double, double> frac_range);
Image cutmix_images(const Image& a, const Image& b, const CutBox& box);

}  // namespace bownet
