#include <cmath>
#include <numeric>

#include "bownet/encoder.hpp"
#include "bownet/error.hpp"
#include "bownet/layers.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace bownet;

namespace {

std::vector<float> to_vec(const Tensor& t) { return t.vector(); }

// Loss = <coeffs, conv(x)> evaluated in double.
struct ConvProblem {
  Tensor x, w, b;
  std::vector<double> c;
  std::size_t co;
  double loss(std::span<const float> xs, std::span<const float> ws, std::span<const float> bs) const {
    ref::Map in = ref::from_values(xs, x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    ref::Map out = ref::conv(in, ws, bs, co, 3);
    return ref::project(out.v, c);
  }
};

}  // namespace

TEST_CASE("conv with a centred delta kernel is the identity") {
  Rng rng(1);
  Tensor x = ref::random_tensor({2, 3, 5, 5}, rng);
  Tensor w({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0f;
  Tensor y = conv2d_forward(x, w, Tensor({3}), nullptr);
  CHECK(y == x);
}

TEST_CASE("conv with zero weights outputs the bias") {
  Rng rng(2);
  Tensor x = ref::random_tensor({1, 2, 4, 4}, rng);
  Tensor b({3}, {0.5f, -1.0f, 2.0f});
  Tensor y = conv2d_forward(x, Tensor({3, 2, 3, 3}), b, nullptr);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 16; ++i) CHECK(y[o * 16 + i] == b[o]);
  CHECK_THROWS_AS(conv2d_forward(x, Tensor({3, 4, 3, 3}), b, nullptr), DimensionError);
}

TEST_CASE("conv forward matches the double reference") {
  Rng rng(3);
  Tensor x = ref::random_tensor({2, 3, 6, 7}, rng);
  Tensor w = ref::random_tensor({4, 3, 3, 3}, rng);
  Tensor b = ref::random_tensor({4}, rng);
  Tensor y = conv2d_forward(x, w, b, nullptr);
  ref::Map r = ref::conv(ref::from_tensor(x), w.values(), b.values(), 4, 3);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(r.v[i]).epsilon(1e-5));
}

TEST_CASE("conv backward by finite differences") {
  Rng rng(4);
  ConvProblem p{ref::random_tensor({1, 2, 4, 4}, rng), ref::random_tensor({3, 2, 3, 3}, rng),
                ref::random_tensor({3}, rng), ref::random_coeffs(48, 5), 3};
  ConvCache cache;
  conv2d_forward(p.x, p.w, p.b, &cache);
  ConvGrads g = conv2d_backward(cache, p.w, ref::coeff_tensor(p.c, {1, 3, 4, 4}));
  auto xs = to_vec(p.x), ws = to_vec(p.w), bs = to_vec(p.b);
  CHECK(grad_check([&](auto v) { return p.loss(v, ws, bs); }, xs, g.input.values()).max_relative_error < 1e-3);
  CHECK(grad_check([&](auto v) { return p.loss(xs, v, bs); }, ws, g.weight.values()).max_relative_error < 1e-3);
  CHECK(grad_check([&](auto v) { return p.loss(xs, ws, v); }, bs, g.bias.values()).max_relative_error < 1e-3);
}

TEST_CASE("relu") {
  Tensor neg({1, 1, 2, 2}, {-1, -2, -0.5f, -3});
  Tensor y = relu_forward(neg);
  for (float v : y.values()) CHECK(v == 0.0f);
  Tensor g = relu_backward(y, Tensor({1, 1, 2, 2}, 1.0f));
  for (float v : g.values()) CHECK(v == 0.0f);

  Rng rng(6);
  Tensor x = ref::random_tensor({2, 2, 6, 6}, rng);
  for (float& v : x.values())
    if (std::abs(v) < 0.01f) v = 0.5f;  // keep away from the kink
  auto c = ref::random_coeffs(x.size(), 7);
  Tensor gx = relu_backward(relu_forward(x), ref::coeff_tensor(c, x.shape()));
  auto f = [&](std::span<const float> v) {
    return ref::project(ref::relu(ref::from_values(v, 2, 2, 6, 6)).v, c);
  };
  CHECK(grad_check(f, x.values(), gx.values()).max_relative_error < 1e-3);
}

TEST_CASE("avgpool2") {
  Tensor k({1, 2, 4, 4}, 0.7f);
  Tensor y = avgpool2_forward(k);
  CHECK(y.shape() == Shape{1, 2, 2, 2});
  for (float v : y.values()) CHECK(v == doctest::Approx(0.7f));
  CHECK_THROWS_AS(avgpool2_forward(Tensor({1, 1, 3, 4})), DimensionError);

  Rng rng(8);
  Tensor x = ref::random_tensor({2, 2, 6, 6}, rng);
  auto c = ref::random_coeffs(2 * 2 * 3 * 3, 9);
  Tensor gx = avgpool2_backward(x.shape(), ref::coeff_tensor(c, {2, 2, 3, 3}));
  auto f = [&](std::span<const float> v) { return ref::project(ref::avgpool2(ref::from_values(v, 2, 2, 6, 6)).v, c); };
  CHECK(grad_check(f, x.values(), gx.values()).max_relative_error < 1e-3);
}

TEST_CASE("global average pool") {
  Rng rng(10);
  Tensor x = ref::random_tensor({2, 3, 6, 6}, rng);
  Tensor y = global_avg_pool_forward(x);
  auto r = ref::gap(ref::from_tensor(x));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(r[i]).epsilon(1e-6));
  auto c = ref::random_coeffs(6, 11);
  Tensor gx = global_avg_pool_backward(x.shape(), ref::coeff_tensor(c, {2, 3}));
  auto f = [&](std::span<const float> v) { return ref::project(ref::gap(ref::from_values(v, 2, 3, 6, 6)), c); };
  CHECK(grad_check(f, x.values(), gx.values()).max_relative_error < 1e-3);
}

TEST_CASE("linear layer backward") {
  Rng rng(12);
  Tensor x = ref::random_tensor({3, 5}, rng), w = ref::random_tensor({4, 5}, rng), b = ref::random_tensor({4}, rng);
  auto c = ref::random_coeffs(12, 13);
  LinearGrads g = linear_backward(x, w, ref::coeff_tensor(c, {3, 4}));
  auto xs = to_vec(x), ws = to_vec(w), bs = to_vec(b);
  auto loss = [&](std::span<const float> xv, std::span<const float> wv, std::span<const float> bv) {
    std::vector<double> xd(xv.begin(), xv.end());
    return ref::project(ref::linear(xd, 3, 5, wv, bv, 4), c);
  };
  CHECK(grad_check([&](auto v) { return loss(v, ws, bs); }, xs, g.input.values()).max_relative_error < 1e-3);
  CHECK(grad_check([&](auto v) { return loss(xs, v, bs); }, ws, g.weight.values()).max_relative_error < 1e-3);
  CHECK(grad_check([&](auto v) { return loss(xs, ws, v); }, bs, g.bias.values()).max_relative_error < 1e-3);
}

TEST_CASE("encoder shapes") {
  Encoder enc({32, 64, 128});
  Rng rng(14);
  enc.init(rng);
  Tensor x({2, 3, 32, 32}, 0.5f);
  EncoderOutput out = enc.forward(x);
  REQUIRE(out.taps.size() == 3);
  CHECK(out.taps[0].shape() == Shape{2, 32, 32, 32});
  CHECK(out.taps[1].shape() == Shape{2, 64, 16, 16});
  CHECK(out.taps[2].shape() == Shape{2, 128, 8, 8});
  CHECK(out.pooled.shape() == Shape{2, 128});
  CHECK(enc.out_dim() == 128);
  CHECK_THROWS_AS(enc.forward(Tensor({1, 3, 20, 20})), DimensionError);
  CHECK(enc.forward(x, 2).taps.size() == 2);
}

TEST_CASE("zero-weight encoder propagates its biases") {
  Encoder enc({2, 3});
  for (Parameter* p : enc.parameters()) p->value.fill(0.0f);
  auto params = enc.parameters();
  params[1]->value = Tensor({2}, {0.5f, -0.5f});  // block1 bias
  params[3]->value = Tensor({3}, {1.0f, 2.0f, -1.0f});
  Rng rng(15);
  EncoderOutput out = enc.forward(ref::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(out.pooled.at(i, 0) == 1.0f);
    CHECK(out.pooled.at(i, 1) == 2.0f);
    CHECK(out.pooled.at(i, 2) == 0.0f);
  }
}

TEST_CASE("he init statistics and determinism") {
  Encoder enc({16, 400});
  Rng rng(16);
  enc.init(rng);
  auto params = enc.parameters();
  const Tensor& w = params[2]->value;  // 400 x 16 x 3 x 3
  double s2 = 0.0;
  for (float v : w.values()) s2 += static_cast<double>(v) * v;
  double var = s2 / static_cast<double>(w.size());
  CHECK(std::abs(var / (2.0 / 144.0) - 1.0) < 0.1);
  for (float v : params[1]->value.values()) CHECK(v == 0.0f);
  for (float v : params[3]->value.values()) CHECK(v == 0.0f);
  Encoder again({16, 400});
  Rng rng2(16);
  again.init(rng2);
  CHECK(again == enc);
}

TEST_CASE("encoder is batch-order equivariant") {
  Encoder enc({4, 6});
  Rng rng(17);
  enc.init(rng);
  Tensor x = ref::random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor perm({3, 3, 8, 8});
  const std::size_t per = 3 * 64;
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i)
    std::copy_n(x.data() + order[i] * per, per, perm.data() + i * per);
  Tensor a = enc.forward(x).pooled, b = enc.forward(perm).pooled;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(b.at(i, j) == a.at(order[i], j));
}

namespace {

// Double-precision pooled output of a 2-block encoder with the given flat parameters.
std::vector<double> ref_encoder_pooled(const Encoder& enc, const Tensor& x, std::span<const float> w1,
                                       std::span<const float> b1, std::span<const float> w2,
                                       std::span<const float> b2) {
  ref::Map m = ref::standardize(ref::from_tensor(x));
  m = ref::avgpool2(ref::relu(ref::conv(m, w1, b1, static_cast<std::size_t>(enc.channels()[0]), 3)));
  m = ref::avgpool2(ref::relu(ref::conv(m, w2, b2, static_cast<std::size_t>(enc.channels()[1]), 3)));
  return ref::gap(m);
}

double ref_kink_margin(const Encoder& enc, const Tensor& x) {
  auto ps = enc.parameters();
  ref::Map m = ref::standardize(ref::from_tensor(x));
  ref::Map z1 = ref::conv(m, ps[0]->value.values(), ps[1]->value.values(), static_cast<std::size_t>(enc.channels()[0]), 3);
  m = ref::avgpool2(ref::relu(z1));
  ref::Map z2 = ref::conv(m, ps[2]->value.values(), ps[3]->value.values(), static_cast<std::size_t>(enc.channels()[1]), 3);
  return std::min(ref::kink_margin(z1), ref::kink_margin(z2));
}

}  // namespace

TEST_CASE("full encoder backward by finite differences") {
  // Central differences straddling a ReLU kink are meaningless, so draw inputs until every
  // pre-activation sits clear of zero by more than a perturbation can move it.
  Encoder enc({3, 4});
  Tensor x;
  for (std::uint64_t seed = 18;; ++seed) {
    Rng rng(seed);
    enc.init(rng);
    x = ref::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    if (ref_kink_margin(enc, x) > 0.01) break;
    REQUIRE(seed < 2000);
  }
  auto c = ref::random_coeffs(8, 19);
  enc.forward_train(x);
  enc.backward_pooled(ref::coeff_tensor(c, {2, 4}));
  auto params = enc.parameters();
  std::vector<std::vector<float>> vals;
  for (Parameter* p : params) vals.push_back(p->value.vector());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](std::span<const float> v) {
      auto local = vals;
      local[k].assign(v.begin(), v.end());
      return ref::project(ref_encoder_pooled(enc, x, local[0], local[1], local[2], local[3]), c);
    };
    GradCheckResult r = grad_check(f, vals[k], params[k]->grad.values());
    CAPTURE(params[k]->name);
    CAPTURE(r.analytic);
    CAPTURE(r.numeric);
    CHECK(r.max_relative_error < 1e-3);
  }
}

TEST_CASE("rotation head") {
  RotHead zero(4, 5);
  for (Parameter* p : zero.parameters()) p->value.fill(0.0f);
  Rng rng(20);
  Tensor fm = ref::random_tensor({4, 4, 2, 2}, rng);
  Tensor logits = zero.forward(fm);
  REQUIRE(logits.shape() == Shape{4, 4});
  for (float v : logits.values()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(zero.forward(Tensor({1, 3, 2, 2})), DimensionError);

  RotHead head(4, 5);
  head.init(rng);
  Tensor all = head.forward(fm);
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor one({1, 4, 2, 2});
    std::copy_n(fm.data() + i * 16, 16, one.data());
    Tensor row = head.forward(one);
    for (std::size_t j = 0; j < 4; ++j) CHECK(row[j] == all.at(i, j));
  }

  auto c = ref::random_coeffs(16, 21);
  head.forward_train(fm);
  Tensor gfm = head.backward(ref::coeff_tensor(c, {4, 4}));
  auto params = head.parameters();
  std::vector<std::vector<float>> vals;
  for (Parameter* p : params) vals.push_back(p->value.vector());
  auto ref_head = [&](std::span<const float> in, const std::vector<std::vector<float>>& v) {
    ref::Map a = ref::relu(ref::conv(ref::from_values(in, 4, 4, 2, 2), v[0], v[1], 5, 3));
    return ref::project(ref::linear(ref::gap(a), 4, 5, v[2], v[3], 4), c);
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](std::span<const float> v) {
      auto local = vals;
      local[k].assign(v.begin(), v.end());
      return ref_head(fm.values(), local);
    };
    CAPTURE(params[k]->name);
    CHECK(grad_check(f, vals[k], params[k]->grad.values()).max_relative_error < 1e-3);
  }
  CHECK(grad_check([&](std::span<const float> v) { return ref_head(v, vals); }, fm.values(), gfm.values())
            .max_relative_error < 1e-3);
}

TEST_CASE("encoder checkpoint round trip") {
  Encoder enc({4, 8});
  Rng rng(22);
  enc.init(rng);
  Checkpoint ck = enc.to_checkpoint();
  CHECK(ck.contains("block1.w"));
  CHECK(ck.contains("block2.b"));
  CHECK(Encoder::from_checkpoint(Checkpoint::deserialize(ck.serialize())) == enc);
  RotHead head(8, 8);
  head.init(rng);
  Checkpoint hk = head.to_checkpoint();
  CHECK(hk.contains("rothead.conv.w"));
  CHECK(hk.contains("rothead.fc.b"));
  CHECK(RotHead::from_checkpoint(hk).to_checkpoint().serialize() == hk.serialize());
}
