#pragma once

#include <span>
#include <string>
#include <vector>

#include "bownet/bow.hpp"
#include "bownet/checkpoint.hpp"
#include "bownet/layers.hpp"

namespace bownet {

enum class HeadVariant { kReparam, kPlain };

// Linear-plus-softmax over K words. In the reparametrized variant the logits
// are gamma * <f, w_k / |w_k|> with a single learnable magnitude gamma,
// stored as log gamma; the plain variant uses <f, w_k>.
class Head {
 public:
  Head() = default;
  Head(int k, int c, HeadVariant variant = HeadVariant::kReparam, double gamma = 10.0,
       std::string prefix = "head");

  // W ~ Normal(0, 1/sqrt(c)); gamma reset to its initial value.
  void init(Rng& rng);

  int num_words() const { return static_cast<int>(w_.value.dim(0)); }
  int feat_dim() const { return static_cast<int>(w_.value.dim(1)); }
  HeadVariant variant() const { return variant_; }
  double gamma() const;
  const std::string& prefix() const { return prefix_; }

  Parameter& weight() { return w_; }
  const Parameter& weight() const { return w_; }
  Parameter& log_gamma() { return log_gamma_; }
  const Parameter& log_gamma() const { return log_gamma_; }

  Tensor logits(const Tensor& feat) const;
  // Row-wise probabilities [B x K].
  Tensor forward(const Tensor& feat) const;
  Tensor forward_train(const Tensor& feat);
  // Gradient of scale * xent_loss(forward_train(feat), targets). Overwrites
  // the parameter gradients and returns the gradient wrt feat.
  Tensor backward(std::span<const BowTarget> targets, double scale = 1.0);

  std::vector<Parameter*> parameters();
  Checkpoint to_checkpoint() const;
  static Head from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "head");

 private:
  Tensor normalized_weights(std::vector<double>* norms) const;

  HeadVariant variant_ = HeadVariant::kReparam;
  std::string prefix_ = "head";
  double gamma0_ = 10.0;
  Parameter w_;
  Parameter log_gamma_;
  Tensor feat_, probs_;
};

// Mean over the batch of -sum_k y_k log p_k over each target's support, with
// log clamped at 1e-12.
double xent_loss(const Tensor& probs, std::span<const BowTarget> targets);

}  // namespace bownet
