#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bownet/data.hpp"
#include "bownet/encoder.hpp"

namespace bownet {

// Pooled encoder features of every image, [N x c], in dataset order.
Tensor extract_features(const Encoder& enc, const Dataset& ds);

struct ProbeConfig {
  int epochs = 30;
  double lr = 0.1;
  double lr_mult = 0.3;  // applied every lr_every epochs
  int lr_every = 10;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 1;
  // Shift/scale features by the training-set mean and standard deviation.
  bool standardize = true;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class;

  std::string to_json() const;
};

// Multinomial logistic regression on fixed features.
ProbeResult linear_probe_features(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                                  std::span<const int> test_y, int num_classes, const ProbeConfig& cfg);
ProbeResult linear_probe(const Encoder& enc, const Dataset& train, const Dataset& test, const ProbeConfig& cfg);

struct EpisodeConfig {
  int ways = 5;
  int shots = 1;
  int queries = 15;
  int episodes = 2000;
  std::vector<int> class_pool;  // empty: every class
  std::uint64_t seed = 1;
};

// Indices into the dataset; labels are episode-local (0..ways-1) and
// `classes` maps them back to dataset classes.
struct Episode {
  std::vector<int> classes;
  std::vector<std::size_t> support, query;
  std::vector<int> support_labels, query_labels;
};

Episode sample_episode(std::span<const int> labels, const EpisodeConfig& cfg, Rng& rng);

// Prototype per class = mean of the L2-normalized support features; each
// query goes to the prototype of largest cosine, ties to the lower class.
std::vector<int> cosine_proto_classify(const Tensor& support, std::span<const int> support_labels,
                                       const Tensor& query);

struct FewShotResult {
  int shots = 0;
  int episodes = 0;
  double mean_acc = 0.0;
  double stderr_ = 0.0;
  std::vector<double> accuracies;  // per episode

  std::string to_json() const;
};

FewShotResult fewshot_features(const Tensor& feats, std::span<const int> labels, const EpisodeConfig& cfg);
FewShotResult fewshot_eval(const Encoder& enc, const Dataset& ds, const EpisodeConfig& cfg);

// CSV, one row per image: label followed by the pooled features (%.9g).
// Unlabelled images get label -1.
void export_features(const Encoder& enc, const Dataset& ds, const std::filesystem::path& path);

}  // namespace bownet
