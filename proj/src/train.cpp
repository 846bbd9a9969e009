#include "bownet/train.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "bownet/error.hpp"

namespace bownet {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Mean cross-entropy of integer labels; fills dL/dlogits.
double label_xent(const Tensor& logits, std::span<const int> labels, Tensor* grad, std::size_t* correct) {
  const Tensor p = softmax_rows(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double loss = 0.0;
  if (grad) *grad = p;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    loss -= std::log(std::max(static_cast<double>(p[i * k + y]), 1e-12));
    if (grad) {
      (*grad)[i * k + y] -= 1.0f;
      for (std::size_t j = 0; j < k; ++j) (*grad)[i * k + j] /= static_cast<float>(n);
    }
    if (correct) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits[i * k + j] > logits[i * k + best]) best = j;
      if (best == y) ++*correct;
    }
  }
  return loss / static_cast<double>(n);
}

void rotated_copies(const Image& img, std::vector<Image>& out, std::vector<int>& labels) {
  for (int r = 0; r < 4; ++r) {
    out.push_back(rotate90(img, r));
    labels.push_back(r);
  }
}

void finish_epoch(TrainReport& report, const EpochHook& hook, int epoch, double loss, double lr,
                  Clock::time_point t0) {
  if (!std::isfinite(loss)) throw NumericError("training loss became non-finite in epoch " + std::to_string(epoch));
  EpochRecord rec{epoch, loss, lr, elapsed(t0)};
  report.epochs.push_back(rec);
  if (hook) hook(rec);
}

}  // namespace

std::string TrainReport::jsonl() const {
  std::ostringstream os;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}, {"seconds", e.seconds}};
    os << j.dump() << '\n';
  }
  return os.str();
}

TrainReport train_rotnet(const Dataset& ds, Encoder& enc, RotHead& head, const RotNetConfig& cfg,
                         const EpochHook& hook) {
  cfg.sgd.validate();
  if (ds.size() == 0) throw ConfigError("rotation training needs a non-empty dataset");
  for (const auto& img : ds.images)
    if (!img.square()) throw DimensionError("rotation training needs square images");

  std::vector<Parameter*> params = head.parameters();
  if (!cfg.freeze_encoder)
    for (Parameter* p : enc.parameters()) params.push_back(p);
  Sgd opt(params, cfg.sgd.momentum, cfg.sgd.weight_decay);
  const Rng root(cfg.sgd.seed);
  Rng order = root.split(2);

  TrainReport report;
  const auto start = Clock::now();
  for (int epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = cfg.sgd.lr_at_epoch(epoch);
    Rng aug = root.split(100 + static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : batch_indices(ds.size(), static_cast<std::size_t>(cfg.sgd.batch_size), order)) {
      std::vector<Image> imgs;
      std::vector<int> labels;
      imgs.reserve(idx.size() * 4);
      for (std::size_t i : idx) {
        const Image& src = ds.images[i];
        rotated_copies(cfg.hflip && aug.bernoulli(0.5) ? hflip(src) : src, imgs, labels);
      }
      Tensor final_map;
      if (cfg.freeze_encoder) {
        final_map = enc.forward(to_batch(imgs)).final_map;
      } else {
        final_map = enc.forward_train(to_batch(imgs)).final_map;
      }
      Tensor grad;
      const double loss = label_xent(head.forward_train(final_map), labels, &grad, nullptr);
      Tensor g_map = head.backward(grad);
      if (!cfg.freeze_encoder) enc.backward(g_map);
      opt.step(lr);
      total += loss * static_cast<double>(imgs.size());
      seen += imgs.size();
    }
    finish_epoch(report, hook, epoch, total / static_cast<double>(seen), lr, t0);
  }
  report.seconds = elapsed(start);
  return report;
}

RotationEval evaluate_rotation(const Encoder& enc, const RotHead& head, const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("cannot evaluate rotations on an empty dataset");
  double total = 0.0;
  std::size_t correct = 0, seen = 0;
  constexpr std::size_t kBatch = 64;
  for (std::size_t b0 = 0; b0 < ds.size(); b0 += kBatch) {
    std::vector<Image> imgs;
    std::vector<int> labels;
    for (std::size_t i = b0; i < std::min(ds.size(), b0 + kBatch); ++i) rotated_copies(ds.images[i], imgs, labels);
    const Tensor logits = head.forward(enc.forward(to_batch(imgs)).final_map);
    total += label_xent(logits, labels, nullptr, &correct) * static_cast<double>(imgs.size());
    seen += imgs.size();
  }
  return {total / static_cast<double>(seen), static_cast<double>(correct) / static_cast<double>(seen)};
}

void BowTrainConfig::validate() const {
  sgd.validate();
  perturb.validate();
  if (!(cutmix_prob >= 0.0 && cutmix_prob <= 1.0)) throw ConfigError("cutmix_prob must lie in [0, 1]");
  if (!(cutmix_frac.first > 0.0 && cutmix_frac.first <= cutmix_frac.second && cutmix_frac.second <= 1.0)) {
    throw ConfigError("cutmix box fractions must satisfy 0 < lo <= hi <= 1");
  }
  if (!(gamma_init > 0.0)) throw ConfigError("gamma_init must be positive");
  if (channels.empty()) throw ConfigError("encoder channel plan is empty");
}

Checkpoint BowNetModel::to_checkpoint() const {
  Checkpoint ckpt = encoder.to_checkpoint();
  for (const auto& h : heads) ckpt.merge(h.to_checkpoint());
  return ckpt;
}

BowNetModel BowNetModel::from_checkpoint(const Checkpoint& ckpt) {
  BowNetModel m;
  m.encoder = Encoder::from_checkpoint(ckpt);
  if (ckpt.contains("head.W")) m.heads.push_back(Head::from_checkpoint(ckpt, "head"));
  for (int j = 1; ckpt.contains("head.l" + std::to_string(j) + ".W"); ++j) {
    m.heads.push_back(Head::from_checkpoint(ckpt, "head.l" + std::to_string(j)));
  }
  return m;
}

BowNetModel train_bownet(const Dataset& ds, const Encoder& base, const Vocabulary& vocab, const BowCache& cache,
                         const BowOptions& bow, const BowTrainConfig& cfg, TrainReport* report,
                         const EpochHook& hook) {
  cfg.validate();
  if (cache.config_hash != bow_config_hash(base, vocab, bow)) {
    throw StaleCacheError("BoW cache does not match the base encoder, vocabulary and BoW options; rebuild it with cache-bow");
  }
  if (cache.levels != bow.levels() || cache.num_images() != ds.size() || cache.k != static_cast<std::uint32_t>(vocab.size())) {
    throw StaleCacheError("BoW cache shape does not match the dataset; rebuild it with cache-bow");
  }
  const std::size_t levels = bow.levels();
  const int k = vocab.size();

  const Rng root(cfg.sgd.seed);
  Rng init = root.split(1);
  Rng order = root.split(2);
  BowNetModel model;
  model.encoder = Encoder(cfg.channels, 3);
  model.encoder.init(init);
  for (std::size_t j = 0; j < levels; ++j) {
    model.heads.emplace_back(k, model.encoder.out_dim(), cfg.head, cfg.gamma_init,
                             j == 0 ? std::string("head") : "head.l" + std::to_string(j));
    model.heads.back().init(init);
  }
  std::vector<Parameter*> params = model.encoder.parameters();
  for (auto& h : model.heads)
    for (Parameter* p : h.parameters()) params.push_back(p);
  Sgd opt(params, cfg.sgd.momentum, cfg.sgd.weight_decay);

  TrainReport local;
  TrainReport& rep = report ? *report : local;
  rep = {};
  const auto start = Clock::now();
  for (int epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = cfg.sgd.lr_at_epoch(epoch);
    Rng aug = root.split(100 + static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : batch_indices(ds.size(), static_cast<std::size_t>(cfg.sgd.batch_size), order)) {
      const std::size_t b = idx.size();
      std::vector<Image> imgs;
      imgs.reserve(b);
      for (std::size_t i : idx) imgs.push_back(perturb(ds.images[i], aug, cfg.perturb));

      // targets[level][item]
      std::vector<std::vector<BowTarget>> targets(levels, std::vector<BowTarget>(b));
      if (!cfg.predict_perturbed) {
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t l = 0; l < levels; ++l) targets[l][i] = cache.at(idx[i], l);
      }

      if (cfg.cutmix && b > 1 && aug.bernoulli(cfg.cutmix_prob)) {
        std::vector<Image> mixed = imgs;
        auto mixed_targets = targets;
        for (std::size_t i = 0; i < b / 2; ++i) {
          const std::size_t j = b - 1 - i;
          const CutBox box = sample_cutbox(aug, imgs[i].width, imgs[i].height, cfg.cutmix_frac);
          mixed[i] = cutmix_images(imgs[i], imgs[j], box);
          mixed[j] = cutmix_images(imgs[j], imgs[i], box);
          if (!cfg.predict_perturbed) {
            for (std::size_t l = 0; l < levels; ++l) {
              mixed_targets[l][i] = mix_targets(targets[l][i], targets[l][j], box.lambda);
              mixed_targets[l][j] = mix_targets(targets[l][j], targets[l][i], box.lambda);
            }
          }
        }
        imgs = std::move(mixed);
        targets = std::move(mixed_targets);
      }

      if (cfg.predict_perturbed) {
        auto online = compute_targets(base, vocab, imgs, bow);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t l = 0; l < levels; ++l) targets[l][i] = std::move(online[i][l]);
      }

      const EncoderOutput out = model.encoder.forward_train(to_batch(imgs));
      Tensor grad_feat(out.pooled.shape());
      double loss = 0.0;
      for (std::size_t l = 0; l < levels; ++l) {
        const Tensor probs = model.heads[l].forward_train(out.pooled);
        loss += xent_loss(probs, targets[l]) / static_cast<double>(levels);
        const Tensor g = model.heads[l].backward(targets[l], 1.0 / static_cast<double>(levels));
        for (std::size_t i = 0; i < g.size(); ++i) grad_feat[i] += g[i];
      }
      model.encoder.backward_pooled(grad_feat);
      opt.step(lr);
      total += loss * static_cast<double>(b);
      seen += b;
    }
    finish_epoch(rep, hook, epoch, total / static_cast<double>(seen), lr, t0);
  }
  rep.seconds = elapsed(start);
  return model;
}

std::vector<RoundResult> iterate_rounds(const Dataset& ds, const Encoder& first_base, const RoundPlan& plan,
                                        const VocabOptions& vocab_opts, const BowOptions& bow,
                                        const BowTrainConfig& cfg,
                                        const std::function<void(int, const RoundResult&)>& on_round) {
  if (plan.rounds < 1) throw ConfigError("rounds must be >= 1");
  std::vector<RoundResult> results;
  results.reserve(static_cast<std::size_t>(plan.rounds));
  const Encoder* base = &first_base;
  for (int r = 0; r < plan.rounds; ++r) {
    VocabOptions vo = vocab_opts;
    if (r == 0 && plan.base == BaseKind::kRandom && vo.pca_dim == 0) {
      const int tap = vo.tap < 0 ? base->num_blocks() : vo.tap;
      vo.pca_dim = std::min(plan.random_pca_dim, base->block_channels(tap));
    }
    Rng vocab_rng(plan.vocab_seed + static_cast<std::uint64_t>(r));
    RoundResult res;
    res.vocab = build_vocabulary(*base, ds, vo, vocab_rng);
    const BowCache cache = build_bow_cache(*base, res.vocab, ds, bow);
    res.cache_hash = cache.config_hash;
    BowTrainConfig rc = cfg;
    rc.sgd.seed = cfg.sgd.seed + static_cast<std::uint64_t>(r);
    res.model = train_bownet(ds, *base, res.vocab, cache, bow, rc, &res.report);
    results.push_back(std::move(res));
    if (on_round) on_round(r + 1, results.back());
    base = &results.back().model.encoder;
  }
  return results;
}

}  // namespace bownet
