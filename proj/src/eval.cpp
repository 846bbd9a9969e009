#include "bownet/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "bownet/error.hpp"

namespace bownet {

Tensor extract_features(const Encoder& enc, const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("cannot extract features of an empty dataset");
  const auto c = static_cast<std::size_t>(enc.out_dim());
  Tensor feats({ds.size(), c});
  constexpr std::size_t kBatch = 128;
  for (std::size_t b0 = 0; b0 < ds.size(); b0 += kBatch) {
    const std::size_t nb = std::min(kBatch, ds.size() - b0);
    const Tensor pooled = enc.forward(to_batch(std::span<const Image>(ds.images.data() + b0, nb))).pooled;
    std::copy(pooled.values().begin(), pooled.values().end(), feats.data() + b0 * c);
  }
  return feats;
}

std::string ProbeResult::to_json() const {
  return nlohmann::json{{"protocol", "probe"}, {"acc", accuracy}, {"per_class", per_class}}.dump();
}

namespace {

void check_labels(std::span<const int> y, int num_classes, const char* what) {
  for (int v : y)
    if (v < 0 || v >= num_classes) throw ConfigError(std::string(what) + " has a missing or out-of-range label");
}

}  // namespace

ProbeResult linear_probe_features(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                                  std::span<const int> test_y, int num_classes, const ProbeConfig& cfg) {
  if (num_classes < 2) throw ConfigError("linear probe needs at least two classes");
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1)) {
    throw DimensionError("probe feature matrices disagree");
  }
  if (train_x.dim(0) != train_y.size() || test_x.dim(0) != test_y.size() || train_y.empty() || test_y.empty()) {
    throw DimensionError("probe label counts disagree with features");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) throw ConfigError("invalid probe schedule");
  check_labels(train_y, num_classes, "probe training set");
  check_labels(test_y, num_classes, "probe test set");
  std::vector<int> distinct(static_cast<std::size_t>(num_classes), 0);
  int present = 0;
  for (int v : train_y) present += distinct[static_cast<std::size_t>(v)]++ == 0;
  if (present < 2) throw ConfigError("linear probe training set holds a single class");

  const std::size_t n = train_x.dim(0), d = train_x.dim(1), k = static_cast<std::size_t>(num_classes);
  std::vector<double> mean(d, 0.0), inv_sd(d, 1.0);
  if (cfg.standardize) {
    std::vector<double> sq(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += train_x.at(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) sq[j] += std::pow(train_x.at(i, j) - mean[j], 2);
    for (std::size_t j = 0; j < d; ++j) inv_sd[j] = 1.0 / std::max(std::sqrt(sq[j] / static_cast<double>(n)), 1e-6);
  }
  auto standardized = [&](const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (x.at(i, j) - mean[j]) * inv_sd[j];
    return out;
  };
  const std::vector<double> xs = standardized(train_x);

  std::vector<double> w(k * d, 0.0), b(k, 0.0), vw(k * d, 0.0), vb(k, 0.0), gw(k * d), gb(k), z(k);
  auto scores = [&](const double* x, std::vector<double>& out) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += w[c * d + j] * x[j];
      out[c] = s;
    }
  };

  Rng order(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_mult, epoch / std::max(cfg.lr_every, 1));
    for (const auto& batch : batch_indices(n, static_cast<std::size_t>(cfg.batch_size), order)) {
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t i : batch) {
        const double* x = &xs[i * d];
        scores(x, z);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (auto& v : z) sum += (v = std::exp(v - zmax));
        for (std::size_t c = 0; c < k; ++c) {
          const double g = (z[c] / sum - (static_cast<int>(c) == train_y[i] ? 1.0 : 0.0)) / static_cast<double>(batch.size());
          gb[c] += g;
          for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += g * x[j];
        }
      }
      for (std::size_t t = 0; t < w.size(); ++t) {
        vw[t] = cfg.momentum * vw[t] + gw[t] + cfg.weight_decay * w[t];
        w[t] -= lr * vw[t];
      }
      for (std::size_t c = 0; c < k; ++c) {
        vb[c] = cfg.momentum * vb[c] + gb[c];
        b[c] -= lr * vb[c];
      }
    }
  }

  const std::vector<double> xt = standardized(test_x);
  std::vector<std::size_t> hits(k, 0), totals(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    scores(&xt[i * d], z);
    const auto pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    const auto y = static_cast<std::size_t>(test_y[i]);
    ++totals[y];
    if (pred == test_y[i]) {
      ++hits[y];
      ++correct;
    }
  }
  ProbeResult res;
  res.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
  for (std::size_t c = 0; c < k; ++c)
    res.per_class.push_back(totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c]) : 0.0);
  return res;
}

ProbeResult linear_probe(const Encoder& enc, const Dataset& train, const Dataset& test, const ProbeConfig& cfg) {
  const int classes = static_cast<int>(std::max(train.num_classes(), test.num_classes()));
  const std::vector<int> ytr = train.labels(), yte = test.labels();
  return linear_probe_features(extract_features(enc, train), ytr, extract_features(enc, test), yte, classes, cfg);
}

Episode sample_episode(std::span<const int> labels, const EpisodeConfig& cfg, Rng& rng) {
  if (cfg.ways < 1 || cfg.shots < 1 || cfg.queries < 1) throw ConfigError("episode sizes must be positive");
  int max_label = -1;
  for (int v : labels) max_label = std::max(max_label, v);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  std::vector<int> pool = cfg.class_pool;
  if (pool.empty())
    for (int c = 0; c <= max_label; ++c) pool.push_back(c);
  if (pool.size() < static_cast<std::size_t>(cfg.ways)) {
    throw ConfigError("class pool of " + std::to_string(pool.size()) + " is smaller than " + std::to_string(cfg.ways) + " ways");
  }
  const auto need = static_cast<std::size_t>(cfg.shots + cfg.queries);
  for (int c : pool) {
    if (c < 0 || c > max_label || by_class[static_cast<std::size_t>(c)].size() < need) {
      throw ConfigError("class " + std::to_string(c) + " has fewer than " + std::to_string(need) + " images");
    }
  }

  rng.shuffle(pool);
  Episode ep;
  ep.classes.assign(pool.begin(), pool.begin() + cfg.ways);
  for (int local = 0; local < cfg.ways; ++local) {
    std::vector<std::size_t> members = by_class[static_cast<std::size_t>(ep.classes[static_cast<std::size_t>(local)])];
    // Partial Fisher-Yates: the first shots+queries entries form a uniform sample.
    for (std::size_t i = 0; i < need; ++i) std::swap(members[i], members[i + rng.uniform_int(members.size() - i)]);
    for (std::size_t i = 0; i < need; ++i) {
      const bool support = i < static_cast<std::size_t>(cfg.shots);
      (support ? ep.support : ep.query).push_back(members[i]);
      (support ? ep.support_labels : ep.query_labels).push_back(local);
    }
  }
  return ep;
}

namespace {

std::vector<double> unit_row(const Tensor& x, std::size_t i) {
  const std::size_t d = x.dim(1);
  std::span<const float> row(x.data() + i * d, d);
  const double n = std::sqrt(squared_norm(row));
  if (!(n > 0.0)) throw NumericError("zero-norm feature vector in cosine classifier");
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = row[j] / n;
  return out;
}

}  // namespace

std::vector<int> cosine_proto_classify(const Tensor& support, std::span<const int> support_labels,
                                       const Tensor& query) {
  if (support.rank() != 2 || query.rank() != 2 || support.dim(1) != query.dim(1)) {
    throw DimensionError("support and query features disagree");
  }
  if (support.dim(0) != support_labels.size() || support_labels.empty()) throw DimensionError("support label count mismatch");
  const std::size_t d = support.dim(1);
  int ways = 0;
  for (int v : support_labels) {
    if (v < 0) throw ConfigError("negative support label");
    ways = std::max(ways, v + 1);
  }
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(ways), std::vector<double>(d, 0.0));
  std::vector<int> counts(static_cast<std::size_t>(ways), 0);
  for (std::size_t i = 0; i < support.dim(0); ++i) {
    const auto u = unit_row(support, i);
    auto& p = protos[static_cast<std::size_t>(support_labels[i])];
    for (std::size_t j = 0; j < d; ++j) p[j] += u[j];
    ++counts[static_cast<std::size_t>(support_labels[i])];
  }
  std::vector<double> pnorm(protos.size(), 0.0);
  for (std::size_t c = 0; c < protos.size(); ++c) {
    if (counts[c] == 0) throw ConfigError("support set skips class " + std::to_string(c));
    double s = 0.0;
    for (double& v : protos[c]) {
      v /= counts[c];
      s += v * v;
    }
    pnorm[c] = std::sqrt(s);
  }
  std::vector<int> pred;
  pred.reserve(query.dim(0));
  for (std::size_t i = 0; i < query.dim(0); ++i) {
    const auto q = unit_row(query, i);
    int best = 0;
    double best_cos = -2.0;
    for (std::size_t c = 0; c < protos.size(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += q[j] * protos[c][j];
      const double cosv = pnorm[c] > 0.0 ? s / pnorm[c] : 0.0;
      if (cosv > best_cos) {
        best_cos = cosv;
        best = static_cast<int>(c);
      }
    }
    pred.push_back(best);
  }
  return pred;
}

std::string FewShotResult::to_json() const {
  return nlohmann::json{{"protocol", "fewshot"}, {"n", shots}, {"episodes", episodes}, {"mean_acc", mean_acc}, {"stderr", stderr_}}
      .dump();
}

namespace {

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * d, d, out.data() + i * d);
  return out;
}

}  // namespace

FewShotResult fewshot_features(const Tensor& feats, std::span<const int> labels, const EpisodeConfig& cfg) {
  if (cfg.episodes < 1) throw ConfigError("episodes must be >= 1");
  if (feats.rank() != 2 || feats.dim(0) != labels.size()) throw DimensionError("few-shot features and labels disagree");
  const Rng root(cfg.seed);
  FewShotResult res;
  res.shots = cfg.shots;
  res.episodes = cfg.episodes;
  for (int e = 0; e < cfg.episodes; ++e) {
    Rng rng = root.split(static_cast<std::uint64_t>(e));
    const Episode ep = sample_episode(labels, cfg, rng);
    const auto pred = cosine_proto_classify(gather_rows(feats, ep.support), ep.support_labels, gather_rows(feats, ep.query));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ep.query_labels[i];
    res.accuracies.push_back(static_cast<double>(hit) / static_cast<double>(pred.size()));
  }
  double sum = 0.0;
  for (double a : res.accuracies) sum += a;
  res.mean_acc = sum / cfg.episodes;
  if (cfg.episodes > 1) {
    double ss = 0.0;
    for (double a : res.accuracies) ss += (a - res.mean_acc) * (a - res.mean_acc);
    res.stderr_ = std::sqrt(ss / (cfg.episodes - 1)) / std::sqrt(static_cast<double>(cfg.episodes));
  }
  return res;
}

FewShotResult fewshot_eval(const Encoder& enc, const Dataset& ds, const EpisodeConfig& cfg) {
  const std::vector<int> labels = ds.labels();
  return fewshot_features(extract_features(enc, ds), labels, cfg);
}

void export_features(const Encoder& enc, const Dataset& ds, const std::filesystem::path& path) {
  const Tensor feats = extract_features(enc, ds);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::size_t d = feats.dim(1);
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << (ds.images[i].label ? *ds.images[i].label : -1);
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(feats.at(i, j)));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace bownet
