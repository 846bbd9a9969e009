#include "bownet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bownet/error.hpp"

namespace bownet {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  if (shape_.size() > 4) throw DimensionError("tensor rank above 4: " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_.size() > 4) throw DimensionError("tensor rank above 4: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor " + shape_string(shape_) + " given " +
                         std::to_string(data_.size()) + " values");
  }
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_int over an empty range");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // Box-Muller, one value per call; 1 - u keeps the log argument positive.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::split(std::uint64_t tag) const {
  std::uint64_t mix = tag * 0xD1B54A32D192ED03ULL;
  for (std::uint64_t s : s_) {
    mix ^= s;
    splitmix64(mix);
    mix = rotl(mix, 23) + 0x632BE59BD9B4E019ULL;
  }
  return Rng(splitmix64(mix) ^ tag);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      const float* brow = b.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = static_cast<float>(row[j]);
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

namespace {
void softmax_into(const float* in, float* out, std::size_t k) {
  float mx = in[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, in[i]);
  double sum = 0.0;
  std::vector<double> e(k);
  for (std::size_t i = 0; i < k; ++i) {
    e[i] = std::exp(static_cast<double>(in[i]) - mx);
    sum += e[i];
  }
  for (std::size_t i = 0; i < k; ++i) out[i] = static_cast<float>(e[i] / sum);
}
}  // namespace

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw DimensionError("softmax expects a non-empty vector, got " + shape_string(logits.shape()));
  }
  Tensor out(logits.shape());
  softmax_into(logits.data(), out.data(), logits.size());
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) == 0) {
    throw DimensionError("softmax_rows expects [rows x K], got " + shape_string(logits.shape()));
  }
  Tensor out(logits.shape());
  const std::size_t k = logits.dim(1);
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    softmax_into(logits.data() + r * k, out.data() + r * k, k);
  }
  return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("dot of mismatched lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double squared_norm(std::span<const float> a) { return dot(a, a); }

GradCheckResult grad_check(const std::function<double(std::span<const float>)>& f,
                           std::span<const float> params, std::span<const float> analytic,
                           double eps) {
  if (eps <= 0.0) throw ConfigError("grad_check eps must be positive");
  if (params.size() != analytic.size()) {
    throw DimensionError("grad_check: analytic gradient length differs from parameter count");
  }
  std::vector<float> p(params.begin(), params.end());
  GradCheckResult result;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const float orig = p[i];
    const float hi = static_cast<float>(orig + eps);
    const float lo = static_cast<float>(orig - eps);
    p[i] = hi;
    const double f_hi = f(p);
    p[i] = lo;
    const double f_lo = f(p);
    p[i] = orig;
    if (!std::isfinite(f_hi) || !std::isfinite(f_lo)) {
      throw NumericError("grad_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace bownet
