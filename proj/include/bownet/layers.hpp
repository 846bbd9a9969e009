#pragma once

#include <string>
#include <vector>

#include "bownet/numerics.hpp"

namespace bownet {

// A trainable tensor with its gradient buffer. Weight decay is skipped for
// parameters with decay == false.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool wd = true)
      : name(std::move(n)), value(shape), grad(shape), decay(wd) {}
};

// Activations are NCHW. Convolutions are stride 1 with "same" zero padding
// for odd square kernels.
struct ConvCache {
  Tensor input;
};

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvCache* cache);

struct ConvGrads {
  Tensor input;  // empty when not requested
  Tensor weight;
  Tensor bias;
};
ConvGrads conv2d_backward(const ConvCache& cache, const Tensor& weight, const Tensor& grad_out,
                          bool need_input_grad = true);

Tensor relu_forward(const Tensor& input);
// Masks by positivity of the forward output.
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

Tensor avgpool2_forward(const Tensor& input);
Tensor avgpool2_backward(const Shape& input_shape, const Tensor& grad_out);

Tensor global_avg_pool_forward(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

// y = x W^T + b with x [B, in], W [out, in], b [out].
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
struct LinearGrads {
  Tensor input, weight, bias;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

// Normal(0, sqrt(2 / fan_in)) where fan_in is the product of all but the
// leading extent.
void he_normal(Tensor& weight, Rng& rng);

}  // namespace bownet
