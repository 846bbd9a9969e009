#include "bownet/predictor.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bownet/error.hpp"

namespace bownet {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))}; }
MapMat view(Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))}; }

void check_targets(const Tensor& probs, std::span<const BowTarget> targets) {
  if (targets.size() != probs.dim(0)) throw DimensionError("target count does not match batch size");
  for (const auto& t : targets) {
    if (t.k != probs.dim(1)) throw DimensionError("target K does not match prediction width");
    if (std::abs(t.mass() - 1.0) > 1e-4) throw NumericError("BoW target is not normalized (mass " + std::to_string(t.mass()) + ")");
  }
}

}  // namespace

Head::Head(int k, int c, HeadVariant variant, double gamma, std::string prefix)
    : variant_(variant), prefix_(std::move(prefix)), gamma0_(gamma) {
  if (k < 2 || c < 1) throw ConfigError("head needs K >= 2 and a positive feature size");
  if (!(gamma > 0.0)) throw ConfigError("initial gamma must be positive");
  w_ = Parameter(prefix_ + ".W", {static_cast<std::size_t>(k), static_cast<std::size_t>(c)});
  log_gamma_ = Parameter(prefix_ + ".log_gamma", {1}, false);
  log_gamma_.value[0] = static_cast<float>(std::log(gamma0_));
}

void Head::init(Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(feat_dim()));
  for (float& v : w_.value.values()) v = static_cast<float>(sd * rng.normal());
  log_gamma_.value[0] = static_cast<float>(std::log(gamma0_));
}

double Head::gamma() const { return std::exp(static_cast<double>(log_gamma_.value[0])); }

Tensor Head::normalized_weights(std::vector<double>* norms) const {
  Tensor wbar = w_.value;
  if (norms) norms->assign(wbar.dim(0), 1.0);
  if (variant_ == HeadVariant::kPlain) return wbar;
  const std::size_t c = wbar.dim(1);
  for (std::size_t k = 0; k < wbar.dim(0); ++k) {
    std::span<float> row(wbar.data() + k * c, c);
    const double n = std::sqrt(squared_norm(row));
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("head weight row " + std::to_string(k) + " has zero norm");
    for (float& v : row) v = static_cast<float>(v / n);
    if (norms) (*norms)[k] = n;
  }
  return wbar;
}

Tensor Head::logits(const Tensor& feat) const {
  if (feat.rank() != 2 || feat.dim(1) != w_.value.dim(1)) {
    throw DimensionError("head expects [B x " + std::to_string(feat_dim()) + "] features, got " + shape_string(feat.shape()));
  }
  const Tensor wbar = normalized_weights(nullptr);
  Tensor z({feat.dim(0), wbar.dim(0)});
  view(z).noalias() = view(feat) * view(wbar).transpose();
  if (variant_ == HeadVariant::kReparam) {
    const float g = static_cast<float>(gamma());
    for (float& v : z.values()) v *= g;
  }
  return z;
}

Tensor Head::forward(const Tensor& feat) const { return softmax_rows(logits(feat)); }

Tensor Head::forward_train(const Tensor& feat) {
  feat_ = feat;
  probs_ = forward(feat);
  return probs_;
}

Tensor Head::backward(std::span<const BowTarget> targets, double scale) {
  if (probs_.rank() != 2) throw DimensionError("head backward without forward_train");
  check_targets(probs_, targets);
  const std::size_t batch = probs_.dim(0), k = probs_.dim(1), c = feat_.dim(1);
  const bool reparam = variant_ == HeadVariant::kReparam;
  const double gm = reparam ? gamma() : 1.0;

  // Redone in double: small feature gradients are differences of much larger
  // terms, and float softmax rounding swamps them.
  const Eigen::MatrixXd f = view(feat_).cast<double>();
  Eigen::MatrixXd wbar = view(w_.value).cast<double>();
  Eigen::VectorXd norms = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k));
  if (reparam) {
    norms = wbar.rowwise().norm();
    for (Eigen::Index j = 0; j < wbar.rows(); ++j) wbar.row(j) /= norms(j);
  }
  Eigen::MatrixXd g = gm * f * wbar.transpose();
  for (Eigen::Index b = 0; b < g.rows(); ++b) {
    const double mx = g.row(b).maxCoeff();
    g.row(b) = (g.row(b).array() - mx).exp();
    g.row(b) /= g.row(b).sum();
  }
  // dL/dz = (p - y) * scale / B
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& t = targets[b];
    for (std::size_t i = 0; i < t.nnz(); ++i) g(static_cast<Eigen::Index>(b), t.index[i]) -= t.weight[i];
  }
  g *= scale / static_cast<double>(batch);

  Tensor grad_feat({batch, c});
  view(grad_feat) = (gm * g * wbar).cast<float>();

  // u_k = dL/d(wbar_k) before the normalization Jacobian.
  Eigen::MatrixXd u = g.transpose() * f;
  log_gamma_.grad = Tensor({1});
  w_.grad = Tensor({k, c});
  if (!reparam) {
    view(w_.grad) = u.cast<float>();
    return grad_feat;
  }
  double dgamma = 0.0;
  for (Eigen::Index j = 0; j < u.rows(); ++j) {
    const double proj = u.row(j).dot(wbar.row(j));
    dgamma += proj;  // sum_b g_bj <f_b, wbar_j>
    u.row(j) = gm * (u.row(j) - proj * wbar.row(j)) / norms(j);
  }
  log_gamma_.grad[0] = static_cast<float>(gm * dgamma);
  view(w_.grad) = u.cast<float>();
  return grad_feat;
}

std::vector<Parameter*> Head::parameters() { return {&w_, &log_gamma_}; }

Checkpoint Head::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.put(w_.name, w_.value);
  ckpt.put(log_gamma_.name, log_gamma_.value);
  if (variant_ == HeadVariant::kPlain) ckpt.put(prefix_ + ".plain", Tensor({1}, 1.0f));
  return ckpt;
}

Head Head::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const Tensor& w = ckpt.get(prefix + ".W");
  const Tensor& lg = ckpt.get(prefix + ".log_gamma");
  if (w.rank() != 2 || lg.size() != 1) throw FormatError("malformed head tensors under '" + prefix + "'");
  const HeadVariant variant = ckpt.contains(prefix + ".plain") ? HeadVariant::kPlain : HeadVariant::kReparam;
  Head head(static_cast<int>(w.dim(0)), static_cast<int>(w.dim(1)), variant, std::exp(static_cast<double>(lg[0])), prefix);
  head.w_.value = w;
  head.log_gamma_.value = lg.shape() == Shape{1} ? lg : Tensor({1}, lg[0]);
  return head;
}

double xent_loss(const Tensor& probs, std::span<const BowTarget> targets) {
  if (probs.rank() != 2) throw DimensionError("xent_loss expects [B x K] probabilities");
  check_targets(probs, targets);
  if (targets.empty()) return 0.0;
  const std::size_t k = probs.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto& t = targets[b];
    for (std::size_t i = 0; i < t.nnz(); ++i) {
      const double p = std::max(static_cast<double>(probs[b * k + t.index[i]]), 1e-12);
      total -= t.weight[i] * std::log(p);
    }
  }
  return total / static_cast<double>(targets.size());
}

}  // namespace bownet
