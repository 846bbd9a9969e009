#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bownet/vocab.hpp"

namespace bownet {

enum class BowMode { kCount, kBinary };

const char* bow_mode_name(BowMode mode);
BowMode parse_bow_mode(const std::string& name);

// Sparse non-negative K-vector; indices strictly increasing.
struct BowTarget {
  std::uint32_t k = 0;
  BowMode mode = BowMode::kCount;
  std::vector<std::uint32_t> index;
  std::vector<float> weight;

  std::size_t nnz() const { return index.size(); }
  double mass() const;
  bool operator==(const BowTarget&) const = default;
};

// Throws unless indices are sorted, unique, < K and weights positive.
void validate_target(const BowTarget& t);

// Word occurrence counts (unnormalized). With exclude_border the outermost
// ring of the grid is skipped.
BowTarget bow_count(const WordMap& wm, std::uint32_t k, bool exclude_border);
// Word presence (0/1, unnormalized).
BowTarget bow_binary(const WordMap& wm, std::uint32_t k, bool exclude_border);
BowTarget bow_build(const WordMap& wm, std::uint32_t k, BowMode mode, bool exclude_border);

BowTarget l1_normalize(const BowTarget& t);
// Combines the words of an image and of its mirror: sum (count) or max
// (binary), then normalizes.
BowTarget merge_flip(const BowTarget& orig, const BowTarget& flipped);
// lambda * a + (1 - lambda) * b.
BowTarget mix_targets(const BowTarget& a, const BowTarget& b, double lambda);

// Mirror a word grid left-right.
WordMap hflip_words(const WordMap& wm);

// Whole-map BoW followed by the four quadrant BoWs (top-left, top-right,
// bottom-left, bottom-right), each normalized.
std::vector<BowTarget> pyramid_bow(const WordMap& wm, std::uint32_t k, BowMode mode, bool exclude_border = false);

// Dense copy, mostly for tests and diagnostics.
std::vector<float> to_dense(const BowTarget& t);
// Entropy of a normalized target (natural log).
double target_entropy(const BowTarget& t);

struct BowOptions {
  BowMode mode = BowMode::kCount;
  bool exclude_border = true;
  bool merge_flip = true;
  bool pyramid = false;

  std::size_t levels() const { return pyramid ? 5 : 1; }
};

// Normalized target(s) of one image given its word map and that of its
// mirror (ignored unless merge_flip is set).
std::vector<BowTarget> build_targets(const WordMap& wm, const WordMap* flipped_wm, std::uint32_t k,
                                     const BowOptions& opts);

// Pre-computed targets for a dataset.
//   "BWC1" | u32 K | u32 record count | u64 config hash |
//   records x (u32 nnz | nnz x (u32 index, f32 weight))
// With the pyramid option each image contributes 5 consecutive records.
struct BowCache {
  std::uint32_t k = 0;
  std::uint64_t config_hash = 0;
  std::size_t levels = 1;
  std::vector<BowTarget> targets;

  std::size_t num_images() const { return levels ? targets.size() / levels : 0; }
  const BowTarget& at(std::size_t image, std::size_t level = 0) const { return targets[image * levels + level]; }

  void save(const std::filesystem::path& path) const;
  static BowCache load(const std::filesystem::path& path, std::size_t levels = 1);
};

// Fingerprint of everything that determines the cached targets.
std::uint64_t bow_config_hash(const Encoder& base, const Vocabulary& vocab, const BowOptions& opts);

// Targets of the unperturbed images of `ds` under the frozen base encoder.
BowCache build_bow_cache(const Encoder& base, const Vocabulary& vocab, const Dataset& ds, const BowOptions& opts);

// Targets for a batch of images computed on the fly.
std::vector<std::vector<BowTarget>> compute_targets(const Encoder& base, const Vocabulary& vocab,
                                                    std::span<const Image> images, const BowOptions& opts);

}  // namespace bownet
