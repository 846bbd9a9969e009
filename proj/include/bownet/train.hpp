#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bownet/augment.hpp"
#include "bownet/bow.hpp"
#include "bownet/encoder.hpp"
#include "bownet/optim.hpp"
#include "bownet/predictor.hpp"
#include "bownet/vocab.hpp"

namespace bownet {

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;

  // One {"epoch","loss","lr","seconds"} object per line.
  std::string jsonl() const;
  double first_loss() const { return epochs.empty() ? 0.0 : epochs.front().loss; }
  double last_loss() const { return epochs.empty() ? 0.0 : epochs.back().loss; }
};

using EpochHook = std::function<void(const EpochRecord&)>;

struct RotNetConfig {
  SgdConfig sgd{.lr = 0.05, .schedule = {{6, 0.2}, {8, 0.2}}, .epochs = 10};
  int head_width = 0;  // 0: encoder output width
  bool hflip = true;   // random mirror before rotating
  bool freeze_encoder = false;
};

// Each batch image is expanded to its four 90-degree rotations labelled 0..3.
TrainReport train_rotnet(const Dataset& ds, Encoder& enc, RotHead& head, const RotNetConfig& cfg,
                         const EpochHook& hook = {});

struct RotationEval {
  double loss = 0.0;
  double accuracy = 0.0;
};
RotationEval evaluate_rotation(const Encoder& enc, const RotHead& head, const Dataset& ds);

struct BowTrainConfig {
  // Larger rates or batches let gamma collapse before the encoder learns anything.
  SgdConfig sgd{.lr = 0.02, .batch_size = 16};
  PerturbConfig perturb;
  bool cutmix = true;
  double cutmix_prob = 0.5;
  std::pair<double, double> cutmix_frac{0.3, 0.7};
  // Target is the BoW of the perturbed image, recomputed on the fly.
  bool predict_perturbed = false;
  HeadVariant head = HeadVariant::kReparam;
  double gamma_init = 1.0;
  std::vector<int> channels = {32, 64, 128};

  void validate() const;
};

// The trained encoder and one head per BoW level.
struct BowNetModel {
  Encoder encoder;
  std::vector<Head> heads;

  Checkpoint to_checkpoint() const;
  static BowNetModel from_checkpoint(const Checkpoint& ckpt);
};

// Trains a freshly initialized encoder to predict the cached BoW targets of
// `ds` from perturbed images. The base encoder is only read.
BowNetModel train_bownet(const Dataset& ds, const Encoder& base, const Vocabulary& vocab, const BowCache& cache,
                         const BowOptions& bow, const BowTrainConfig& cfg, TrainReport* report = nullptr,
                         const EpochHook& hook = {});

enum class BaseKind { kRotNet, kRandom };

struct RoundPlan {
  int rounds = 1;
  BaseKind base = BaseKind::kRotNet;
  // PCA width for the first round's vocabulary when the base is random.
  int random_pca_dim = 32;
  std::uint64_t vocab_seed = 1;
};

struct RoundResult {
  Vocabulary vocab;
  std::uint64_t cache_hash = 0;
  BowNetModel model;
  TrainReport report;
};

// Round r builds the vocabulary and targets from the previous round's
// encoder (round 1: `first_base`) and trains a new encoder from scratch.
// Seeds advance by one per round.
std::vector<RoundResult> iterate_rounds(const Dataset& ds, const Encoder& first_base, const RoundPlan& plan,
                                        const VocabOptions& vocab_opts, const BowOptions& bow,
                                        const BowTrainConfig& cfg,
                                        const std::function<void(int, const RoundResult&)>& on_round = {});

}  // namespace bownet
