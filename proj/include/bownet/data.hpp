#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bownet/numerics.hpp"

namespace bownet {

// RGB raster, channel-planar (R plane, G plane, B plane), values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  std::optional<int> label;

  Image() = default;
  Image(int w, int h, float fill = 0.0f);

  static constexpr int kChannels = 3;

  float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool square() const { return width == height; }
  bool operator==(const Image&) const = default;
};

// Throws FormatError unless the image has consistent extents and every value in [0, 1].
void validate_image(const Image& img);

struct Dataset {
  std::vector<Image> images;
  std::vector<std::string> class_names;
  std::string split_tag;

  std::size_t size() const { return images.size(); }
  int image_size() const { return images.empty() ? 0 : images.front().width; }
  std::size_t num_classes() const { return class_names.size(); }
  std::vector<int> labels() const;
};

// Shared dimensions, square images, labels below the class count.
void validate_dataset(const Dataset& ds);

// Stack images [begin, begin + count) into an NCHW tensor.
Tensor to_batch(const Dataset& ds, std::span<const std::size_t> indices);
Tensor to_batch(std::span<const Image> images);

enum class CifarVariant { kCifar10, kCifar100 };

// Decodes the public CIFAR binary distribution. CIFAR-100 keeps the fine label.
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths, CifarVariant variant);
// Inverse of load_cifar_binary (pixels rounded to bytes). CIFAR-100 writes
// the coarse byte as 0.
void write_cifar_binary(const std::filesystem::path& path, const Dataset& ds, CifarVariant variant);

struct SyntheticSpec {
  int n_classes = 8;
  int per_class = 500;
  int size = 32;
  std::uint64_t seed = 1;
  // Per-image nuisance magnitude in [0, 1]; scales pose, colour, background
  // texture and noise variation.
  double jitter = 0.3;
};

// Procedural dataset: one upright glyph shape per class, drawn with random
// pose and colours.
Dataset gen_synthetic(const SyntheticSpec& spec);
std::vector<std::string> synthetic_family_names();

// One epoch worth of shuffled index batches; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n_items, std::size_t batch, Rng& rng);

// Dataset directories: either "<dir>/<split>.bwnt" written by save_dataset,
// or a CIFAR binary directory (data_batch_*.bin / test_batch.bin for
// CIFAR-10, train.bin / test.bin for CIFAR-100).
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& split);

}  // namespace bownet
