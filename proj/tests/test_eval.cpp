#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "bownet/error.hpp"
#include "bownet/eval.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace bownet;

namespace {

std::vector<int> balanced_labels(int classes, int per_class) {
  std::vector<int> y;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) y.push_back(c);
  return y;
}

}  // namespace

TEST_CASE("probe on separable features") {
  Rng rng(1);
  auto ytr = balanced_labels(4, 50), yte = balanced_labels(4, 20);
  auto make = [&](const std::vector<int>& y) {
    Tensor x({y.size(), 6});
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = static_cast<float>(0.3 * rng.normal());
      x.at(i, static_cast<std::size_t>(y[i])) += 3.0f;
    }
    return x;
  };
  Tensor xtr = make(ytr), xte = make(yte);
  ProbeResult r = linear_probe_features(xtr, ytr, xte, yte, 4, {});
  CHECK(r.accuracy >= 0.99);
  CHECK(r.per_class.size() == 4);
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("protocol") == "probe");
  CHECK(j.at("acc").get<double>() == r.accuracy);
}

TEST_CASE("probe on random labels is at chance") {
  Rng rng(2);
  auto draw = [&](std::size_t n) {
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.uniform_int(8));
    return y;
  };
  auto ytr = draw(2000), yte = draw(2000);
  Tensor xtr = ref::random_tensor({2000, 16}, rng), xte = ref::random_tensor({2000, 16}, rng);
  ProbeConfig cfg;
  cfg.epochs = 5;
  ProbeResult r = linear_probe_features(xtr, ytr, xte, yte, 8, cfg);
  CHECK(std::abs(r.accuracy - 0.125) < 0.05);
}

TEST_CASE("probe needs two classes and leaves the encoder untouched") {
  Tensor x({4, 2}, 1.0f);
  std::vector<int> y(4, 0);
  CHECK_THROWS_AS(linear_probe_features(x, y, x, y, 1, {}), ConfigError);
  CHECK_THROWS_AS(linear_probe_features(x, y, x, y, 3, {}), ConfigError);

  Dataset tr = gen_synthetic({.n_classes = 2, .per_class = 6, .size = 8});
  Dataset te = gen_synthetic({.n_classes = 2, .per_class = 3, .size = 8, .seed = 4});
  Encoder enc({4, 4});
  Rng rng(3);
  enc.init(rng);
  const Encoder before = enc;
  ProbeConfig cfg;
  cfg.epochs = 2;
  linear_probe(enc, tr, te, cfg);
  EpisodeConfig ec{.ways = 2, .shots = 1, .queries = 2, .episodes = 3};
  fewshot_eval(enc, te, ec);
  CHECK(enc == before);
}

TEST_CASE("episodes are disjoint and seeded") {
  auto labels = balanced_labels(10, 30);
  EpisodeConfig cfg{.ways = 5, .shots = 5, .queries = 15};
  Rng rng(4);
  for (int e = 0; e < 10000; ++e) {
    Episode ep = sample_episode(labels, cfg, rng);
    REQUIRE(ep.classes.size() == 5);
    REQUIRE(ep.support.size() == 25);
    REQUIRE(ep.query.size() == 75);
    std::set<std::size_t> s(ep.support.begin(), ep.support.end());
    for (std::size_t q : ep.query) REQUIRE(s.count(q) == 0);
    std::set<std::size_t> all = s;
    all.insert(ep.query.begin(), ep.query.end());
    REQUIRE(all.size() == 100);
    for (std::size_t i = 0; i < ep.support.size(); ++i)
      REQUIRE(labels[ep.support[i]] == ep.classes[static_cast<std::size_t>(ep.support_labels[i])]);
  }
  Rng a(9), b(9);
  Episode e1 = sample_episode(labels, cfg, a), e2 = sample_episode(labels, cfg, b);
  CHECK(e1.support == e2.support);
  CHECK(e1.query == e2.query);
}

TEST_CASE("episode exhausting a class and too-small classes") {
  auto labels = balanced_labels(5, 4);
  EpisodeConfig cfg{.ways = 5, .shots = 1, .queries = 3};
  Rng rng(5);
  Episode ep = sample_episode(labels, cfg, rng);
  CHECK(ep.support.size() + ep.query.size() == 20);
  cfg.queries = 4;
  CHECK_THROWS_AS(sample_episode(labels, cfg, rng), ConfigError);
  cfg.queries = 1;
  cfg.ways = 6;
  CHECK_THROWS_AS(sample_episode(labels, cfg, rng), ConfigError);
}

TEST_CASE("cosine prototype classification") {
  Tensor support({2, 2}, {1, 0, 0, 1});
  std::vector<int> sl = {0, 1};
  CHECK(cosine_proto_classify(support, sl, Tensor({1, 2}, {0.9f, 0.1f})) == std::vector<int>{0});
  CHECK(cosine_proto_classify(support, sl, Tensor({1, 2}, {0.0f, 1.0f})) == std::vector<int>{1});
  CHECK(cosine_proto_classify(support, sl, Tensor({1, 2}, {1.0f, 1.0f})) == std::vector<int>{0});

  Rng rng(6);
  Tensor s = ref::random_tensor({10, 5}, rng), q = ref::random_tensor({30, 5}, rng);
  std::vector<int> labels = {0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  auto base = cosine_proto_classify(s, labels, q);
  Tensor q5 = q;
  for (float& v : q5.values()) v *= 5.0f;
  CHECK(cosine_proto_classify(s, labels, q5) == base);
  Tensor srow = s;
  for (std::size_t j = 0; j < 5; ++j) srow.at(3, j) *= 40.0f;
  CHECK(cosine_proto_classify(srow, labels, q) == base);
  Tensor one({5, 5});
  for (std::size_t j = 0; j < 5; ++j) one.at(j, j) = 1.0f;
  CHECK(cosine_proto_classify(one, std::vector<int>{0, 1, 2, 3, 4}, Tensor({1, 5}, {0, 0, 0, 1, 0})) == std::vector<int>{3});
  CHECK_THROWS_AS(cosine_proto_classify(support, sl, Tensor({1, 2}, 0.0f)), NumericError);
}

TEST_CASE("few-shot accuracy on random features is near chance") {
  Rng rng(7);
  auto labels = balanced_labels(8, 100);
  Tensor feats = ref::random_tensor({800, 32}, rng);
  EpisodeConfig cfg{.shots = 5, .episodes = 500};
  FewShotResult r = fewshot_features(feats, labels, cfg);
  CHECK(std::abs(r.mean_acc - 0.2) < 0.03);
  CHECK(r.accuracies.size() == 500);
  double m = 0.0, v = 0.0;
  for (double a : r.accuracies) m += a / 500.0;
  for (double a : r.accuracies) v += (a - m) * (a - m) / 499.0;
  CHECK(r.stderr_ == doctest::Approx(std::sqrt(v / 500.0)));
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("protocol") == "fewshot");
  CHECK(j.at("n") == 5);
  CHECK(j.at("episodes") == 500);
}

TEST_CASE("a single episode reports its own accuracy") {
  Rng rng(8);
  auto labels = balanced_labels(6, 20);
  Tensor feats = ref::random_tensor({120, 8}, rng);
  EpisodeConfig cfg{.shots = 2, .episodes = 1, .seed = 3};
  FewShotResult r = fewshot_features(feats, labels, cfg);
  Rng er = Rng(3).split(0);
  Episode ep = sample_episode(labels, cfg, er);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    Tensor t({idx.size(), 8});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < 8; ++j) t.at(i, j) = feats.at(idx[i], j);
    return t;
  };
  auto pred = cosine_proto_classify(gather(ep.support), ep.support_labels, gather(ep.query));
  double correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ep.query_labels[i];
  CHECK(r.mean_acc == doctest::Approx(correct / static_cast<double>(pred.size())));
  CHECK(r.stderr_ == 0.0);
}

TEST_CASE("feature export") {
  Dataset ds = gen_synthetic({.n_classes = 3, .per_class = 2, .size = 8});
  ds.images[1].label.reset();
  Encoder enc({4, 6});
  Rng rng(9);
  enc.init(rng);
  auto dir = std::filesystem::temp_directory_path();
  auto p1 = dir / "bownet_feats1.csv", p2 = dir / "bownet_feats2.csv";
  export_features(enc, ds, p1);
  export_features(enc, ds, p2);
  CHECK(read_file_bytes(p1) == read_file_bytes(p2));
  Tensor feats = extract_features(enc, ds);
  std::ifstream in(p1);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    int label = std::stoi(cell);
    CHECK(label == (ds.images[row].label ? *ds.images[row].label : -1));
    std::size_t j = 0;
    while (std::getline(ss, cell, ',')) {
      CHECK(std::stof(cell) == feats.at(row, j));
      ++j;
    }
    CHECK(j == 6);
    ++row;
  }
  CHECK(row == ds.size());
}
