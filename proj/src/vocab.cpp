#include "bownet/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "bownet/error.hpp"

namespace bownet {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rows(const Tensor& rows, const char* what) {
  if (rows.rank() != 2 || rows.dim(0) == 0 || rows.dim(1) == 0) {
    throw DimensionError(std::string(what) + ": expected non-empty [N x c], got " + shape_string(rows.shape()));
  }
}

MatD to_double(const float* data, std::size_t rows, std::size_t cols) {
  MatD m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) m.data()[i] = data[i];
  return m;
}

// Nearest centroid for each row via |x|^2 - 2 x.v + |v|^2 in double.
// Ties resolve to the lowest index.
struct Assigner {
  MatD centroids;  // [K x d]
  Eigen::VectorXd norms;

  explicit Assigner(const Tensor& c)
      : centroids(to_double(c.data(), c.dim(0), c.dim(1))), norms(centroids.rowwise().squaredNorm()) {}

  // Writes best index and squared distance for `n` rows starting at `data`.
  void assign(const float* data, std::size_t n, std::uint32_t* best, double* dist) const {
    constexpr std::size_t kChunk = 2048;
    const std::size_t d = static_cast<std::size_t>(centroids.cols());
    const std::size_t k = static_cast<std::size_t>(centroids.rows());
    MatD dots;
    for (std::size_t r0 = 0; r0 < n; r0 += kChunk) {
      const std::size_t nr = std::min(kChunk, n - r0);
      const MatD x = to_double(data + r0 * d, nr, d);
      dots.noalias() = x * centroids.transpose();
      for (std::size_t i = 0; i < nr; ++i) {
        const double xn = x.row(static_cast<Eigen::Index>(i)).squaredNorm();
        std::uint32_t bi = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
          const double dj = xn - 2.0 * dots(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                            norms[static_cast<Eigen::Index>(j)];
          if (dj < bd) {
            bd = dj;
            bi = static_cast<std::uint32_t>(j);
          }
        }
        best[r0 + i] = bi;
        if (dist) dist[r0 + i] = std::max(bd, 0.0);
      }
    }
  }
};

double sq_dist(const float* a, const float* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = static_cast<double>(a[i]) - b[i];
    s += t * t;
  }
  return s;
}

}  // namespace

void Pca::apply(std::span<const float> v, std::span<float> out) const {
  const std::size_t c = basis.dim(1), d = basis.dim(0);
  if (v.size() != c || out.size() != d) throw DimensionError("PCA input/output length mismatch");
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    const float* row = basis.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) s += static_cast<double>(row[j]) * (static_cast<double>(v[j]) - mean[j]);
    out[i] = static_cast<float>(s);
  }
}

std::vector<float> Pca::apply(std::span<const float> v) const {
  std::vector<float> out(basis.dim(0));
  apply(v, out);
  return out;
}

Tensor Pca::apply_rows(const Tensor& rows) const {
  require_rows(rows, "pca_apply");
  const std::size_t n = rows.dim(0), c = rows.dim(1), d = basis.dim(0);
  if (c != basis.dim(1)) throw DimensionError("PCA input dimension mismatch");
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    apply(std::span<const float>(rows.data() + i * c, c), std::span<float>(out.data() + i * d, d));
  }
  return out;
}

Pca pca_fit(const Tensor& rows, int components) {
  require_rows(rows, "pca_fit");
  const std::size_t n = rows.dim(0), c = rows.dim(1);
  if (components < 1 || static_cast<std::size_t>(components) > c) {
    throw ConfigError("PCA components must lie in [1, " + std::to_string(c) + "]");
  }
  if (n <= static_cast<std::size_t>(components)) throw ConfigError("PCA needs more samples than components");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[static_cast<Eigen::Index>(j)] += rows[i * c + j];
  mean /= static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
  Eigen::VectorXd x(static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) x[static_cast<Eigen::Index>(j)] = rows[i * c + j] - mean[static_cast<Eigen::Index>(j)];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");

  Pca pca;
  const std::size_t d = static_cast<std::size_t>(components);
  pca.mean = Tensor({c});
  for (std::size_t j = 0; j < c; ++j) pca.mean[j] = static_cast<float>(mean[static_cast<Eigen::Index>(j)]);
  pca.basis = Tensor({d, c});
  pca.eigenvalues = Tensor({d});
  for (std::size_t i = 0; i < d; ++i) {
    // Eigen sorts ascending.
    const Eigen::Index col = static_cast<Eigen::Index>(c - 1 - i);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (std::size_t j = 0; j < c; ++j) pca.basis[i * c + j] = static_cast<float>(v[static_cast<Eigen::Index>(j)]);
    pca.eigenvalues[i] = static_cast<float>(solver.eigenvalues()[col]);
  }
  return pca;
}

Checkpoint Vocabulary::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.put("centroids", centroids);
  if (pca) {
    ckpt.put("pca.mean", pca->mean);
    ckpt.put("pca.basis", pca->basis);
    ckpt.put("pca.eigenvalues", pca->eigenvalues);
  }
  ckpt.put("tap_layer", Tensor({1}, std::vector<float>{static_cast<float>(tap_layer)}));
  return ckpt;
}

Vocabulary Vocabulary::from_checkpoint(const Checkpoint& ckpt) {
  Vocabulary v;
  v.centroids = ckpt.get("centroids");
  if (v.centroids.rank() != 2 || v.centroids.dim(0) < 2) throw FormatError("vocabulary needs [K x d] centroids with K >= 2");
  v.tap_layer = static_cast<int>(ckpt.get("tap_layer")[0]);
  if (ckpt.contains("pca.basis")) {
    Pca p;
    p.mean = ckpt.get("pca.mean");
    p.basis = ckpt.get("pca.basis");
    p.eigenvalues = ckpt.contains("pca.eigenvalues") ? ckpt.get("pca.eigenvalues") : Tensor({p.basis.dim(0)});
    if (p.basis.rank() != 2 || p.basis.dim(0) != v.centroids.dim(1) || p.mean.size() != p.basis.dim(1)) {
      throw FormatError("vocabulary PCA tensors are inconsistent");
    }
    v.pca = std::move(p);
  }
  return v;
}

KMeansResult kmeans_fit(const Tensor& rows, int k, int max_iters, Rng& rng, bool keep_history) {
  require_rows(rows, "kmeans_fit");
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ConfigError("k-means needs 1 <= K <= N (K=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  if (max_iters < 0) throw ConfigError("max_iters must be non-negative");
  const std::size_t K = static_cast<std::size_t>(k);
  const float* x = rows.data();

  // k-means++ seeding.
  Tensor centroids({K, d});
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(n));
  for (std::size_t c = 0; c < K; ++c) {
    std::copy(x + pick * d, x + (pick + 1) * d, centroids.data() + c * d);
    if (c + 1 == K) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(x + i * d, centroids.data() + c * d, d));
      total += d2[i];
    }
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        r -= d2[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] <= 0.0) --pick;
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(n));
    }
  }

  KMeansResult res;
  std::vector<std::uint32_t> assign(n), prev(n);
  std::vector<double> dist(n);
  std::vector<double> sums(K * d);
  std::vector<std::size_t> counts(K);
  for (int it = 0;; ++it) {
    Assigner(centroids).assign(x, n, assign.data(), dist.data());
    res.objective.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
    if (keep_history) res.history.push_back(centroids);
    if (it > 0 && assign == prev) {
      res.converged = true;
      break;
    }
    if (it == max_iters) break;

    std::fill(counts.begin(), counts.end(), 0);
    for (std::uint32_t a : assign) ++counts[a];
    for (std::size_t c = 0; c < K; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] <= 1) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) throw NumericError("k-means could not reseed an empty cluster");
      --counts[assign[far]];
      assign[far] = static_cast<std::uint32_t>(c);
      counts[c] = 1;
      dist[far] = 0.0;
    }

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* s = sums.data() + assign[i] * d;
      const float* xi = x + i * d;
      for (std::size_t j = 0; j < d; ++j) s[j] += xi[j];
    }
    for (std::size_t c = 0; c < K; ++c)
      for (std::size_t j = 0; j < d; ++j)
        centroids[c * d + j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
    prev = assign;
    res.iterations = it + 1;
  }
  res.centroids = std::move(centroids);
  res.assignment = std::move(assign);
  return res;
}

Tensor collect_features(const Encoder& enc, const Dataset& ds, int tap, std::size_t max_vectors, Rng& rng) {
  if (ds.size() == 0) throw ConfigError("cannot collect features from an empty dataset");
  if (tap < 1 || tap > enc.num_blocks()) throw ConfigError("tap block " + std::to_string(tap) + " out of range");
  if (max_vectors == 0) throw ConfigError("max_vectors must be positive");
  const std::size_t side = static_cast<std::size_t>(ds.image_size()) >> (tap - 1);
  const std::size_t positions = side * side;
  const std::size_t total = ds.size() * positions;
  const std::size_t c = static_cast<std::size_t>(enc.block_channels(tap));

  std::vector<std::size_t> chosen;
  if (max_vectors >= total) {
    chosen.resize(total);
    std::iota(chosen.begin(), chosen.end(), 0);
  } else {
    std::vector<std::size_t> all(total);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < max_vectors; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(total - i));
      std::swap(all[i], all[j]);
    }
    chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(max_vectors));
    std::sort(chosen.begin(), chosen.end());
  }

  Tensor out({chosen.size(), c});
  constexpr std::size_t kBatch = 64;
  std::size_t next = 0;
  for (std::size_t b0 = 0; b0 < ds.size() && next < chosen.size(); b0 += kBatch) {
    const std::size_t nb = std::min(kBatch, ds.size() - b0);
    if (chosen[next] >= (b0 + nb) * positions) continue;
    std::vector<std::size_t> idx(nb);
    std::iota(idx.begin(), idx.end(), b0);
    const EncoderOutput fo = enc.forward(to_batch(ds, idx), tap);
    const Tensor& map = fo.taps.back();
    while (next < chosen.size() && chosen[next] < (b0 + nb) * positions) {
      const std::size_t img = chosen[next] / positions - b0, pos = chosen[next] % positions;
      for (std::size_t ch = 0; ch < c; ++ch) out[next * c + ch] = map[(img * c + ch) * positions + pos];
      ++next;
    }
  }
  return out;
}

std::vector<WordMap> quantize_batch(const Tensor& maps, const Vocabulary& vocab) {
  if (maps.rank() != 4) throw DimensionError("quantize_batch expects NCHW maps, got " + shape_string(maps.shape()));
  const std::size_t B = maps.dim(0), c = maps.dim(1), h = maps.dim(2), w = maps.dim(3), u = h * w;
  if (c != static_cast<std::size_t>(vocab.input_dim())) {
    throw DimensionError("feature map has " + std::to_string(c) + " channels, vocabulary expects " +
                         std::to_string(vocab.input_dim()));
  }
  const std::size_t d = static_cast<std::size_t>(vocab.centroid_dim());
  // Position-major rows, projected when the vocabulary carries a PCA.
  std::vector<float> rows(B * u * d);
  std::vector<float> v(c);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < u; ++p) {
      float* dst = rows.data() + (b * u + p) * d;
      if (vocab.pca) {
        for (std::size_t ch = 0; ch < c; ++ch) v[ch] = maps[(b * c + ch) * u + p];
        vocab.pca->apply(v, std::span<float>(dst, d));
      } else {
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = maps[(b * c + ch) * u + p];
      }
    }
  }
  std::vector<std::uint32_t> best(B * u);
  Assigner(vocab.centroids).assign(rows.data(), B * u, best.data(), nullptr);
  std::vector<WordMap> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    out[b].height = static_cast<int>(h);
    out[b].width = static_cast<int>(w);
    out[b].words.assign(best.begin() + static_cast<std::ptrdiff_t>(b * u),
                        best.begin() + static_cast<std::ptrdiff_t>((b + 1) * u));
  }
  return out;
}

WordMap quantize(const Tensor& feature_map, const Vocabulary& vocab) {
  Tensor m = feature_map;
  if (m.rank() == 3) m.reshape({1, m.dim(0), m.dim(1), m.dim(2)});
  if (m.rank() != 4 || m.dim(0) != 1) throw DimensionError("quantize expects one [c x h x w] map");
  return quantize_batch(m, vocab).front();
}

Vocabulary build_vocabulary(const Encoder& enc, const Dataset& ds, const VocabOptions& opts, Rng& rng,
                            KMeansResult* report) {
  const int tap = opts.tap < 0 ? enc.num_blocks() : opts.tap;
  if (opts.k < 2) throw ConfigError("vocabulary size must be at least 2");
  if (opts.max_vectors < static_cast<std::size_t>(opts.k)) throw ConfigError("max_vectors must be >= K");
  Rng sample_rng = rng.split(1);
  Rng kmeans_rng = rng.split(2);
  Tensor feats = collect_features(enc, ds, tap, opts.max_vectors, sample_rng);
  Vocabulary vocab;
  vocab.tap_layer = tap;
  if (opts.pca_dim > 0) {
    vocab.pca = pca_fit(feats, opts.pca_dim);
    feats = vocab.pca->apply_rows(feats);
  }
  KMeansResult km = kmeans_fit(feats, opts.k, opts.max_iters, kmeans_rng);
  vocab.centroids = km.centroids;
  if (report) *report = std::move(km);
  return vocab;
}

}  // namespace bownet
