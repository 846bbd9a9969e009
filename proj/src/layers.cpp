#include "bownet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "bownet/error.hpp"

namespace bownet {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

namespace {

// Columns handled per GEMM; keeps the im2col buffer cache-resident while
// leaving the GEMM wide enough to run efficiently.
constexpr std::size_t kTargetCols = 2048;

struct ConvGeometry {
  std::size_t B, cin, H, W, cout, k;
  int pad;
  std::size_t hw() const { return H * W; }
  std::size_t rows() const { return cin * k * k; }
  std::size_t chunk() const { return std::max<std::size_t>(1, kTargetCols / hw()); }
};

// cols[(ci,ky,kx), (b - b0)*HW + p] for images [b0, b0 + nb).
void im2col(const float* input, const ConvGeometry& g, std::size_t b0, std::size_t nb, float* cols) {
  const std::size_t hw = g.hw(), ncols = nb * hw;
  const std::size_t k = g.k, W = g.W, H = g.H;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = cols + ((ci * k + ky) * k + kx) * ncols;
        const int dy = static_cast<int>(ky) - g.pad, dx = static_cast<int>(kx) - g.pad;
        for (std::size_t b = 0; b < nb; ++b) {
          const float* src = input + ((b0 + b) * g.cin + ci) * hw;
          float* dst = row + b * hw;
          for (std::size_t y = 0; y < H; ++y) {
            const int sy = static_cast<int>(y) + dy;
            float* d = dst + y * W;
            if (sy < 0 || sy >= static_cast<int>(H)) {
              std::fill(d, d + W, 0.0f);
              continue;
            }
            const float* s = src + static_cast<std::size_t>(sy) * W;
            const std::size_t xlo = static_cast<std::size_t>(std::max(0, -dx));
            const std::size_t xhi = std::min(W, static_cast<std::size_t>(static_cast<int>(W) - dx));
            const float* s2 = s + dx;
            for (std::size_t x = 0; x < W; ++x) d[x] = (x >= xlo && x < xhi) ? s2[x] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeometry& g, std::size_t b0, std::size_t nb, float* grad_in) {
  const std::size_t hw = g.hw(), ncols = nb * hw;
  const std::size_t k = g.k, W = g.W, H = g.H;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = cols + ((ci * k + ky) * k + kx) * ncols;
        const int dy = static_cast<int>(ky) - g.pad, dx = static_cast<int>(kx) - g.pad;
        for (std::size_t b = 0; b < nb; ++b) {
          float* dst = grad_in + ((b0 + b) * g.cin + ci) * hw;
          const float* src = row + b * hw;
          for (std::size_t y = 0; y < H; ++y) {
            const int sy = static_cast<int>(y) + dy;
            if (sy < 0 || sy >= static_cast<int>(H)) continue;
            float* d = dst + static_cast<std::size_t>(sy) * W;
            const float* s = src + y * W;
            const std::size_t xlo = static_cast<std::size_t>(std::max(0, -dx));
            const std::size_t xhi = std::min(W, static_cast<std::size_t>(static_cast<int>(W) - dx));
            float* dd = d + dx;
            for (std::size_t x = xlo; x < xhi; ++x) dd[x] += s[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvCache* cache) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), 0};
  if (weight.dim(1) != g.cin || weight.dim(3) != g.k || g.k % 2 == 0) {
    throw DimensionError("conv2d weight " + shape_string(weight.shape()) + " vs input " + shape_string(input.shape()));
  }
  if (bias.size() != g.cout) throw DimensionError("conv2d bias length differs from output channels");
  g.pad = static_cast<int>(g.k / 2);
  const std::size_t hw = g.hw(), nrows = g.rows(), chunk = g.chunk();

  Tensor out({g.B, g.cout, g.H, g.W});
  std::vector<float> cols(nrows * chunk * hw);
  MatR out_mat(g.cout, chunk * hw);
  const CMapR wmat(weight.data(), g.cout, nrows);
  for (std::size_t b0 = 0; b0 < g.B; b0 += chunk) {
    const std::size_t nb = std::min(chunk, g.B - b0), ncols = nb * hw;
    im2col(input.data(), g, b0, nb, cols.data());
    MapR om(out_mat.data(), g.cout, ncols);
    om.noalias() = wmat * CMapR(cols.data(), nrows, ncols);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const float* src = out_mat.data() + co * ncols + b * hw;
        float* dst = out.data() + ((b0 + b) * g.cout + co) * hw;
        const float bv = bias[co];
        for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + bv;
      }
    }
  }
  if (cache) cache->input = input;
  return out;
}

ConvGrads conv2d_backward(const ConvCache& cache, const Tensor& weight, const Tensor& grad_out,
                          bool need_input_grad) {
  const Tensor& input = cache.input;
  if (input.rank() != 4) throw DimensionError("conv2d_backward without a forward cache");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), 0};
  g.pad = static_cast<int>(g.k / 2);
  if (grad_out.shape() != Shape{g.B, g.cout, g.H, g.W}) {
    throw DimensionError("conv2d_backward grad " + shape_string(grad_out.shape()));
  }
  const std::size_t hw = g.hw(), nrows = g.rows(), chunk = g.chunk();

  ConvGrads grads;
  grads.weight = Tensor(weight.shape());
  grads.bias = Tensor({g.cout});
  if (need_input_grad) grads.input = Tensor(input.shape());

  std::vector<float> cols(nrows * chunk * hw);
  MatR gmat(g.cout, chunk * hw);
  MatR gcols(nrows, chunk * hw);
  MatR gw = MatR::Zero(g.cout, nrows);
  std::vector<double> gb(g.cout, 0.0);
  const CMapR wmat(weight.data(), g.cout, nrows);
  for (std::size_t b0 = 0; b0 < g.B; b0 += chunk) {
    const std::size_t nb = std::min(chunk, g.B - b0), ncols = nb * hw;
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t co = 0; co < g.cout; ++co) {
        const float* src = grad_out.data() + ((b0 + b) * g.cout + co) * hw;
        std::memcpy(gmat.data() + co * ncols + b * hw, src, hw * sizeof(float));
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p) s += src[p];
        gb[co] += s;
      }
    im2col(input.data(), g, b0, nb, cols.data());
    const CMapR gm(gmat.data(), g.cout, ncols);
    gw.noalias() += gm * CMapR(cols.data(), nrows, ncols).transpose();
    if (need_input_grad) {
      MapR gc(gcols.data(), nrows, ncols);
      gc.noalias() = wmat.transpose() * gm;
      col2im_add(gcols.data(), g, b0, nb, grads.input.data());
    }
  }
  std::memcpy(grads.weight.data(), gw.data(), gw.size() * sizeof(float));
  for (std::size_t co = 0; co < g.cout; ++co) grads.bias[co] = static_cast<float>(gb[co]);
  return grads;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
  if (output.shape() != grad_out.shape()) throw DimensionError("relu_backward shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(output[i] > 0.0f)) g[i] = 0.0f;
  return g;
}

Tensor avgpool2_forward(const Tensor& input) {
  require_rank(input, 4, "avgpool2 input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 || W % 2) throw DimensionError("avgpool2 needs even spatial extents, got " + shape_string(input.shape()));
  const std::size_t oh = H / 2, ow = W / 2;
  Tensor out({B, C, oh, ow});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const float* s = input.data() + bc * H * W;
    float* d = out.data() + bc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const float* p = s + 2 * y * W + 2 * x;
        d[y * ow + x] = 0.25f * ((p[0] + p[1]) + (p[W] + p[W + 1]));
      }
  }
  return out;
}

Tensor avgpool2_backward(const Shape& input_shape, const Tensor& grad_out) {
  const std::size_t B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t oh = H / 2, ow = W / 2;
  if (grad_out.shape() != Shape{B, C, oh, ow}) throw DimensionError("avgpool2_backward shape mismatch");
  Tensor g(input_shape);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const float* s = grad_out.data() + bc * oh * ow;
    float* d = g.data() + bc * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) d[y * W + x] = 0.25f * s[(y / 2) * ow + x / 2];
  }
  return g;
}

Tensor global_avg_pool_forward(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t B = input.dim(0), C = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor out({B, C});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    const float* p = input.data() + bc * hw;
    for (std::size_t i = 0; i < hw; ++i) s += p[i];
    out[bc] = static_cast<float>(s / static_cast<double>(hw));
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  const std::size_t B = input_shape[0], C = input_shape[1], hw = input_shape[2] * input_shape[3];
  if (grad_out.shape() != Shape{B, C}) throw DimensionError("global_avg_pool_backward shape mismatch");
  Tensor g(input_shape);
  const float inv = 1.0f / static_cast<float>(hw);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const float v = grad_out[bc] * inv;
    std::fill(g.data() + bc * hw, g.data() + (bc + 1) * hw, v);
  }
  return g;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (weight.dim(1) != x.dim(1) || bias.size() != weight.dim(0)) {
    throw DimensionError("linear weight " + shape_string(weight.shape()) + " vs input " + shape_string(x.shape()));
  }
  const std::size_t B = x.dim(0), in = x.dim(1), out = weight.dim(0);
  Tensor y({B, out});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias[o];
      for (std::size_t i = 0; i < in; ++i) s += static_cast<double>(x[b * in + i]) * weight[o * in + i];
      y[b * out + o] = static_cast<float>(s);
    }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::size_t B = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (grad_out.shape() != Shape{B, out}) throw DimensionError("linear_backward shape mismatch");
  LinearGrads g{Tensor({B, in}), Tensor(weight.shape()), Tensor({out})};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < in; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < out; ++o) s += static_cast<double>(grad_out[b * out + o]) * weight[o * in + i];
      g.input[b * in + i] = static_cast<float>(s);
    }
  for (std::size_t o = 0; o < out; ++o) {
    double sb = 0.0;
    for (std::size_t b = 0; b < B; ++b) sb += grad_out[b * out + o];
    g.bias[o] = static_cast<float>(sb);
    for (std::size_t i = 0; i < in; ++i) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) s += static_cast<double>(grad_out[b * out + o]) * x[b * in + i];
      g.weight[o * in + i] = static_cast<float>(s);
    }
  }
  return g;
}

void he_normal(Tensor& weight, Rng& rng) {
  if (weight.rank() < 2) throw DimensionError("he_normal needs rank >= 2");
  const std::size_t fan_in = weight.size() / weight.dim(0);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (float& v : weight.values()) v = static_cast<float>(std * rng.normal());
}

}  // namespace bownet
