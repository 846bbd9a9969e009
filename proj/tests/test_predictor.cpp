#include <algorithm>
#include <cmath>

#include "bownet/error.hpp"
#include "bownet/predictor.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace bownet;

namespace {

BowTarget one_hot(std::uint32_t k, std::uint32_t j) { return {.k = k, .index = {j}, .weight = {1.0f}}; }

std::vector<BowTarget> random_targets(std::size_t n, std::uint32_t k, Rng& rng) {
  std::vector<BowTarget> out;
  for (std::size_t i = 0; i < n; ++i) {
    WordMap wm{3, 3, {}};
    for (int u = 0; u < 9; ++u) wm.words.push_back(static_cast<std::uint32_t>(rng.uniform_int(k)));
    out.push_back(l1_normalize(bow_count(wm, k, false)));
  }
  return out;
}

double max_abs(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST_CASE("head forward is a distribution and matches a direct evaluation") {
  Rng rng(1);
  Head head(7, 5, HeadVariant::kReparam, 3.0);
  head.init(rng);
  CHECK(head.gamma() == doctest::Approx(3.0));
  Tensor f = ref::random_tensor({4, 5}, rng);
  Tensor p = head.forward(f);
  const Tensor& w = head.weight().value;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> z(7);
    double mx = -1e300;
    for (std::size_t k = 0; k < 7; ++k) {
      double nrm = 0.0, d = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        nrm += static_cast<double>(w.at(k, j)) * w.at(k, j);
        d += static_cast<double>(w.at(k, j)) * f.at(i, j);
      }
      z[k] = 3.0 * d / std::sqrt(nrm);
      mx = std::max(mx, z[k]);
    }
    double s = 0.0;
    for (double& v : z) s += (v = std::exp(v - mx));
    for (std::size_t k = 0; k < 7; ++k) CHECK(p.at(i, k) == doctest::Approx(z[k] / s).epsilon(1e-5));
  }
}

TEST_CASE("row rescaling leaves the reparametrized head unchanged but not the plain one") {
  Rng rng(2);
  Tensor f = ref::random_tensor({6, 8}, rng);
  for (HeadVariant v : {HeadVariant::kReparam, HeadVariant::kPlain}) {
    Head head(10, 8, v, 1.0);
    head.init(rng);
    Tensor base = head.forward(f);
    double worst = 0.0;
    for (float s : {1e-3f, 1.0f, 1e3f}) {
      Head scaled = head;
      for (std::size_t j = 0; j < 8; ++j) scaled.weight().value.at(4, j) *= s;
      worst = std::max(worst, max_abs(scaled.forward(f), base));
    }
    if (v == HeadVariant::kReparam) CHECK(worst < 1e-6);
    else CHECK(worst > 1e-3);
  }
}

TEST_CASE("head gradients by finite differences") {
  Rng rng(3);
  for (HeadVariant v : {HeadVariant::kReparam, HeadVariant::kPlain}) {
    Head head(16, 8, v, 2.0);
    head.init(rng);
    Tensor f = ref::random_tensor({5, 8}, rng);
    auto targets = random_targets(5, 16, rng);
    head.forward_train(f);
    Tensor gf = head.backward(targets, 0.7);
    const bool rp = v == HeadVariant::kReparam;
    const double lg0 = head.log_gamma().value[0];
    auto loss_w = [&](std::span<const float> w) { return 0.7 * ref::head_loss(rp, w, lg0, f.values(), 16, 8, targets); };
    auto loss_f = [&](std::span<const float> x) {
      return 0.7 * ref::head_loss(rp, head.weight().value.values(), lg0, x, 16, 8, targets);
    };
    auto loss_g = [&](std::span<const float> lg) {
      return 0.7 * ref::head_loss(rp, head.weight().value.values(), lg[0], f.values(), 16, 8, targets);
    };
    CHECK(grad_check(loss_w, head.weight().value.values(), head.weight().grad.values()).max_relative_error < 1e-3);
    CHECK(grad_check(loss_f, f.values(), gf.values()).max_relative_error < 1e-3);
    if (v == HeadVariant::kReparam) {
      CHECK(grad_check(loss_g, head.log_gamma().value.values(), head.log_gamma().grad.values()).max_relative_error <
            1e-3);
    } else {
      CHECK(head.log_gamma().grad[0] == 0.0f);
    }
  }
}

TEST_CASE("log gamma is exempt from weight decay") {
  Head head(4, 3);
  CHECK_FALSE(head.log_gamma().decay);
  CHECK(head.weight().decay);
}

TEST_CASE("xent loss") {
  Tensor p({2, 3}, {0.5f, 0.25f, 0.25f, 1.0f / 3, 1.0f / 3, 1.0f / 3});
  std::vector<BowTarget> t = {one_hot(3, 0), {.k = 3, .index = {1, 2}, .weight = {0.5f, 0.5f}}};
  CHECK(xent_loss(p, t) == doctest::Approx((std::log(2.0) + std::log(3.0)) / 2).epsilon(1e-6));
  Tensor zero({1, 3}, {1.0f, 0.0f, 0.0f});
  std::vector<BowTarget> miss = {one_hot(3, 2)};
  CHECK(xent_loss(zero, miss) == doctest::Approx(-std::log(1e-12)));
  std::vector<BowTarget> bad = {{.k = 3, .index = {0}, .weight = {0.5f}}};
  CHECK_THROWS_AS(xent_loss(zero, bad), NumericError);
  CHECK_THROWS_AS(xent_loss(p, miss), DimensionError);
}

TEST_CASE("zero weight row is rejected") {
  Head head(3, 2);
  Rng rng(4);
  head.init(rng);
  head.weight().value.at(1, 0) = 0.0f;
  head.weight().value.at(1, 1) = 0.0f;
  CHECK_THROWS_AS(head.forward(Tensor({1, 2}, 1.0f)), NumericError);
}

TEST_CASE("head checkpoint round trip") {
  Rng rng(5);
  Head head(6, 4, HeadVariant::kReparam, 5.0, "head.l2");
  head.init(rng);
  head.log_gamma().value[0] = 0.3f;
  Checkpoint ck = head.to_checkpoint();
  CHECK(ck.contains("head.l2.W"));
  CHECK(ck.contains("head.l2.log_gamma"));
  Head back = Head::from_checkpoint(ck, "head.l2");
  Tensor f = ref::random_tensor({2, 4}, rng);
  CHECK(back.forward(f) == head.forward(f));
  Head plain(6, 4, HeadVariant::kPlain);
  plain.init(rng);
  CHECK(Head::from_checkpoint(plain.to_checkpoint()).variant() == HeadVariant::kPlain);
}
