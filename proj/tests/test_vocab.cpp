#include <cmath>
#include <limits>

#include "bownet/error.hpp"
#include "bownet/vocab.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace bownet;

namespace {

double objective(const Tensor& x, const Tensor& c) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c.dim(0); ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < x.dim(1); ++j) {
        double t = static_cast<double>(x.at(i, j)) - c.at(k, j);
        d += t * t;
      }
      best = std::min(best, d);
    }
    total += best;
  }
  return total;
}

// Nearest centroid in long double, ties to the lowest index.
std::uint32_t brute_nearest(const Tensor& fm, std::size_t y, std::size_t x, const Tensor& cent) {
  const std::size_t c = fm.dim(0), h = fm.dim(1), w = fm.dim(2);
  long double best = std::numeric_limits<long double>::infinity();
  std::uint32_t arg = 0;
  for (std::size_t k = 0; k < cent.dim(0); ++k) {
    long double d = 0.0L;
    for (std::size_t ch = 0; ch < c; ++ch) {
      long double t = static_cast<long double>(fm[(ch * h + y) * w + x]) - cent.at(k, ch);
      d += t * t;
    }
    if (d < best) {
      best = d;
      arg = static_cast<std::uint32_t>(k);
    }
  }
  return arg;
}

Vocabulary make_vocab(Tensor centroids) {
  Vocabulary v;
  v.centroids = std::move(centroids);
  v.tap_layer = 3;
  return v;
}

}  // namespace

TEST_CASE("quantize exact hits and ties") {
  Tensor cent({5, 2}, {0, 0, 1, 0, 0, 1, 3, 3, -1, 0});
  Vocabulary v = make_vocab(cent);
  Tensor fm({2, 1, 3});
  // positions 0 and 1 sit exactly on v_3 and v_0; position 2 is near v_2
  fm[0] = 3;
  fm[3] = 3;
  fm[1] = 0;
  fm[4] = 0;
  fm[2] = 0.1f;
  fm[5] = 0.9f;
  WordMap wm = quantize(fm, v);
  CHECK(wm.height == 1);
  CHECK(wm.width == 3);
  CHECK(wm.words[0] == 3);
  CHECK(wm.words[1] == 0);
  CHECK(wm.words[2] == 2);
  CHECK_THROWS_AS(quantize(Tensor({3, 1, 1}), v), DimensionError);
}

TEST_CASE("quantize equidistant point goes to the lower index") {
  Tensor cent({5, 1}, {10, -1, 7, 5, 1});
  WordMap wm = quantize(Tensor({1, 1, 1}, {0.0f}), make_vocab(cent));
  CHECK(wm.words[0] == 1);
}

TEST_CASE("quantize matches a brute-force scan") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor cent = ref::random_tensor({64, 8}, rng);
    Vocabulary v = make_vocab(cent);
    Tensor fm = ref::random_tensor({8, 5, 6}, rng);
    WordMap wm = quantize(fm, v);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) REQUIRE(wm.at(static_cast<int>(y), static_cast<int>(x)) == brute_nearest(fm, y, x, cent));
  }
}

TEST_CASE("quantize is invariant to a common positive scale") {
  Rng rng(2);
  Tensor cent = ref::random_tensor({16, 4}, rng);
  Tensor fm = ref::random_tensor({4, 4, 4}, rng);
  WordMap base = quantize(fm, make_vocab(cent));
  for (float s : {0.5f, 4.0f, 1024.0f}) {
    Tensor c2 = cent, f2 = fm;
    for (float& v : c2.values()) v *= s;
    for (float& v : f2.values()) v *= s;
    CHECK(quantize(f2, make_vocab(c2)) == base);
  }
}

TEST_CASE("kmeans with K = N recovers the points") {
  Rng rng(3);
  Tensor x = ref::random_tensor({12, 3}, rng);
  Rng krng(4);
  KMeansResult r = kmeans_fit(x, 12, 50, krng);
  CHECK(r.objective.back() < 1e-10);
  CHECK(objective(x, r.centroids) < 1e-10);
}

TEST_CASE("kmeans on identical points") {
  Tensor x({10, 2}, 0.25f);
  Rng rng(5);
  KMeansResult r = kmeans_fit(x, 2, 20, rng);
  CHECK(r.objective.back() == 0.0);
  for (float v : r.centroids.values()) CHECK(v == 0.25f);
}

TEST_CASE("kmeans objective is non-increasing and matches a direct recount") {
  Rng rng(6);
  Tensor x = ref::random_tensor({500, 16}, rng);
  Rng krng(7);
  KMeansResult r = kmeans_fit(x, 16, 50, krng, true);
  REQUIRE(r.history.size() == r.objective.size());
  for (std::size_t t = 0; t < r.objective.size(); ++t) {
    double direct = objective(x, r.history[t]);
    CHECK(r.objective[t] == doctest::Approx(direct).epsilon(1e-6));
    if (t > 0) CHECK(direct <= objective(x, r.history[t - 1]));
  }
  CHECK_THROWS_AS(kmeans_fit(ref::random_tensor({3, 2}, rng), 4, 10, krng), ConfigError);
}

TEST_CASE("kmeans is seed deterministic") {
  Rng rng(8);
  Tensor x = ref::random_tensor({200, 4}, rng);
  Rng a(1), b(1);
  CHECK(kmeans_fit(x, 8, 30, a).centroids == kmeans_fit(x, 8, 30, b).centroids);
}

TEST_CASE("pca on axis-aligned data") {
  Rng rng(9);
  Tensor x({400, 3});
  for (std::size_t i = 0; i < 400; ++i) {
    x.at(i, 0) = static_cast<float>(0.1 * rng.normal());
    x.at(i, 1) = static_cast<float>(3.0 * rng.normal());
    x.at(i, 2) = static_cast<float>(1.0 * rng.normal());
  }
  Pca p = pca_fit(x, 3);
  CHECK(std::abs(std::abs(p.basis.at(0, 1)) - 1.0) < 1e-2);
  CHECK(std::abs(std::abs(p.basis.at(1, 2)) - 1.0) < 1e-2);
  CHECK(std::abs(std::abs(p.basis.at(2, 0)) - 1.0) < 1e-2);
  CHECK_THROWS_AS(pca_fit(x, 4), ConfigError);
}

TEST_CASE("full-width pca preserves distances and has orthonormal rows") {
  Rng rng(10);
  Tensor x = ref::random_tensor({50, 5}, rng);
  Pca p = pca_fit(x, 5);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < 5; ++j) d += static_cast<double>(p.basis.at(a, j)) * p.basis.at(b, j);
      CHECK(d == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-5).scale(1.0));
    }
  Tensor y = p.apply_rows(x);
  for (std::size_t i = 0; i < 10; ++i) {
    double dx = 0.0, dy = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      double t = static_cast<double>(x.at(i, j)) - x.at(i + 1, j);
      double u = static_cast<double>(y.at(i, j)) - y.at(i + 1, j);
      dx += t * t;
      dy += u * u;
    }
    CHECK(std::abs(dx - dy) < 1e-4);
  }
}

TEST_CASE("pca top eigenvalue agrees with power iteration") {
  Rng rng(11);
  Tensor x({300, 6});
  for (std::size_t i = 0; i < 300; ++i) {
    double z = rng.normal();
    for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = static_cast<float>(z * (j + 1) * 0.3 + rng.normal());
  }
  std::vector<double> mean(6, 0.0);
  for (std::size_t i = 0; i < 300; ++i)
    for (std::size_t j = 0; j < 6; ++j) mean[j] += x.at(i, j) / 300.0;
  std::vector<double> cov(36, 0.0);
  for (std::size_t i = 0; i < 300; ++i)
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) cov[a * 6 + b] += (x.at(i, a) - mean[a]) * (x.at(i, b) - mean[b]);
  Pca p = pca_fit(x, 2);
  std::vector<double> v(6, 1.0);
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> w(6, 0.0);
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) w[a] += cov[a * 6 + b] * v[b];
    double n = 0.0;
    for (double t : w) n += t * t;
    n = std::sqrt(n);
    lambda = n;
    for (std::size_t a = 0; a < 6; ++a) v[a] = w[a] / n;
  }
  // Unbiased sample covariance.
  CHECK(p.eigenvalues[0] == doctest::Approx(lambda / 299.0).epsilon(1e-4));
}

TEST_CASE("collect features takes every position in order when asked for all") {
  Encoder enc({4, 6});
  Rng rng(12);
  enc.init(rng);
  Dataset ds = gen_synthetic({.n_classes = 2, .per_class = 2, .size = 8});
  Rng a(3);
  Tensor all = collect_features(enc, ds, 2, 4 * 16, a);
  REQUIRE(all.shape() == Shape{64, 6});
  Tensor taps = enc.forward(to_batch(std::span<const Image>(ds.images)), 2).taps[1];
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t u = 0; u < 16; ++u)
      for (std::size_t c = 0; c < 6; ++c) CHECK(all.at(n * 16 + u, c) == taps[(n * 6 + c) * 16 + u]);
}

TEST_CASE("collect features subsample is seeded and matches the encoder taps") {
  Encoder enc({4, 6});
  Rng rng(13);
  enc.init(rng);
  Dataset ds = gen_synthetic({.n_classes = 2, .per_class = 3, .size = 8});
  Rng a(5), b(5);
  Tensor s1 = collect_features(enc, ds, 1, 40, a);
  Tensor s2 = collect_features(enc, ds, 1, 40, b);
  CHECK(s1 == s2);
  Tensor taps = enc.forward(to_batch(std::span<const Image>(ds.images)), 1).taps[0];
  // Every sampled row appears among the true tap vectors.
  for (std::size_t r = 0; r < 40; ++r) {
    bool found = false;
    for (std::size_t n = 0; n < 6 && !found; ++n)
      for (std::size_t u = 0; u < 64 && !found; ++u) {
        bool same = true;
        for (std::size_t c = 0; c < 4; ++c) same = same && taps[(n * 4 + c) * 64 + u] == s1.at(r, c);
        found = same;
      }
    CHECK(found);
  }
  Dataset empty;
  CHECK_THROWS(collect_features(enc, empty, 1, 10, a));
}

TEST_CASE("vocabulary checkpoint round trip with pca") {
  Rng rng(14);
  Tensor x = ref::random_tensor({100, 6}, rng);
  Vocabulary v;
  v.pca = pca_fit(x, 3);
  Rng k(2);
  v.centroids = kmeans_fit(v.pca->apply_rows(x), 4, 10, k).centroids;
  v.tap_layer = 2;
  Checkpoint ck = v.to_checkpoint();
  Vocabulary back = Vocabulary::from_checkpoint(Checkpoint::deserialize(ck.serialize()));
  CHECK(back.centroids == v.centroids);
  CHECK(back.tap_layer == 2);
  REQUIRE(back.pca.has_value());
  CHECK(back.pca->basis == v.pca->basis);
  CHECK(back.input_dim() == 6);
  Tensor fm = ref::random_tensor({6, 2, 2}, rng);
  CHECK(quantize(fm, back) == quantize(fm, v));
}
