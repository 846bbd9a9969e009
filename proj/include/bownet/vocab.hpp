#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bownet/checkpoint.hpp"
#include "bownet/data.hpp"
#include "bownet/encoder.hpp"
#include "bownet/numerics.hpp"

namespace bownet {

// Mean-centred projection onto the leading principal directions.
struct Pca {
  Tensor mean;         // [c]
  Tensor basis;        // [d x c], orthonormal rows, decreasing variance
  Tensor eigenvalues;  // [d]

  int input_dim() const { return static_cast<int>(basis.dim(1)); }
  int output_dim() const { return static_cast<int>(basis.dim(0)); }
  void apply(std::span<const float> v, std::span<float> out) const;
  std::vector<float> apply(std::span<const float> v) const;
  // Row-wise projection of [N x c].
  Tensor apply_rows(const Tensor& rows) const;
};

Pca pca_fit(const Tensor& rows, int components);

struct Vocabulary {
  Tensor centroids;  // [K x d]; d is the PCA output dim when pca is set
  int tap_layer = 0;
  std::optional<Pca> pca;

  int size() const { return static_cast<int>(centroids.dim(0)); }
  int centroid_dim() const { return static_cast<int>(centroids.dim(1)); }
  // Channel count expected from the feature map.
  int input_dim() const { return pca ? pca->input_dim() : centroid_dim(); }

  Checkpoint to_checkpoint() const;
  static Vocabulary from_checkpoint(const Checkpoint& ckpt);
};

struct KMeansResult {
  Tensor centroids;
  // objective[t]: sum over points of the squared distance to the nearest
  // centroid after t update steps (t = 0 is the k-means++ seeding).
  std::vector<double> objective;
  // Centroids matching each objective entry, when requested.
  std::vector<Tensor> history;
  std::vector<std::uint32_t> assignment;
  int iterations = 0;
  bool converged = false;
};

// k-means++ seeding followed by Lloyd iterations. Ties go to the lowest
// centroid index; an empty cluster takes the point farthest from its
// current centroid.
KMeansResult kmeans_fit(const Tensor& rows, int k, int max_iters, Rng& rng, bool keep_history = false);

// Per-position feature vectors of block `tap` (1-based), sampled uniformly
// over (image, position) pairs without replacement. Returns [N x c].
Tensor collect_features(const Encoder& enc, const Dataset& ds, int tap, std::size_t max_vectors, Rng& rng);

struct WordMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> words;  // row-major

  std::uint32_t at(int y, int x) const { return words[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const WordMap&) const = default;
};

// Nearest centroid per spatial position of a [c x h x w] (or [1 x c x h x w]) map.
WordMap quantize(const Tensor& feature_map, const Vocabulary& vocab);
// Quantizes every map of an NCHW batch.
std::vector<WordMap> quantize_batch(const Tensor& maps, const Vocabulary& vocab);

struct VocabOptions {
  int k = 128;
  int tap = -1;  // -1: last block
  std::size_t max_vectors = 200000;
  int max_iters = 50;
  int pca_dim = 0;  // 0: no PCA
};

Vocabulary build_vocabulary(const Encoder& enc, const Dataset& ds, const VocabOptions& opts, Rng& rng,
                            KMeansResult* report = nullptr);

}  // namespace bownet
