#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "bownet/layers.hpp"

namespace bownet {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // (epoch, multiplier): from that epoch on the rate is multiplied by the
  // product of all multipliers reached so far.
  std::vector<std::pair<int, double>> schedule = {{12, 0.1}, {18, 0.1}};
  int epochs = 20;
  int batch_size = 64;
  std::uint64_t seed = 1;

  void validate() const;
  // Rate used during `epoch` (0-based).
  double lr_at_epoch(int epoch) const;
};

// v <- m v + g + wd p;  p <- p - lr v. Parameters with decay == false skip
// the wd term.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double momentum, double weight_decay);

  void step(double lr);
  const std::vector<Tensor>& velocities() const { return velocity_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace bownet
