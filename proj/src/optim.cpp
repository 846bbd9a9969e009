#include "bownet/optim.hpp"

#include <cmath>

#include "bownet/error.hpp"

namespace bownet {

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].second > 0.0)) throw ConfigError("schedule multipliers must be positive");
    if (i > 0 && schedule[i].first <= schedule[i - 1].first) throw ConfigError("schedule epochs must be ascending");
  }
}

double SgdConfig::lr_at_epoch(int epoch) const {
  double r = lr;
  for (const auto& [e, mult] : schedule)
    if (epoch >= e) r *= mult;
  return r;
}

Sgd::Sgd(std::vector<Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void Sgd::step(double lr) {
  for (const Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape()) throw DimensionError("gradient shape mismatch for " + p->name);
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
  }
  const float m = static_cast<float>(momentum_);
  const float rate = static_cast<float>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    const float wd = p.decay ? static_cast<float>(weight_decay_) : 0.0f;
    float* v = velocity_[i].data();
    float* w = p.value.data();
    const float* g = p.grad.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = m * v[j] + g[j] + wd * w[j];
      w[j] -= rate * v[j];
    }
    if (!p.value.all_finite()) throw NumericError("parameter " + p.name + " became non-finite");
  }
}

}  // namespace bownet
