#include "bownet/bow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "bownet/augment.hpp"
#include "bownet/error.hpp"

namespace bownet {

const char* bow_mode_name(BowMode mode) { return mode == BowMode::kCount ? "count" : "binary"; }

BowMode parse_bow_mode(const std::string& name) {
  if (name == "count" || name == "histogram") return BowMode::kCount;
  if (name == "binary") return BowMode::kBinary;
  throw ConfigError("unknown BoW mode '" + name + "' (expected count|binary)");
}

double BowTarget::mass() const {
  double s = 0.0;
  for (float w : weight) s += w;
  return s;
}

void validate_target(const BowTarget& t) {
  if (t.index.size() != t.weight.size()) throw FormatError("BoW target index/weight length mismatch");
  for (std::size_t i = 0; i < t.index.size(); ++i) {
    if (t.index[i] >= t.k) throw FormatError("BoW index " + std::to_string(t.index[i]) + " >= K");
    if (i > 0 && t.index[i] <= t.index[i - 1]) throw FormatError("BoW indices not strictly increasing");
    if (!(t.weight[i] > 0.0f) || !std::isfinite(t.weight[i])) throw FormatError("BoW weight not positive");
  }
}

namespace {

void check_words(const WordMap& wm, std::uint32_t k) {
  if (wm.height < 1 || wm.width < 1 ||
      wm.words.size() != static_cast<std::size_t>(wm.height) * static_cast<std::size_t>(wm.width)) {
    throw DimensionError("malformed word map");
  }
  for (std::uint32_t w : wm.words)
    if (w >= k) throw DimensionError("word index " + std::to_string(w) + " >= K=" + std::to_string(k));
}

// Words of the region [y0, y1) x [x0, x1), skipping the outer ring of the
// full grid when requested.
std::vector<std::uint32_t> region_words(const WordMap& wm, int y0, int y1, int x0, int x1, bool exclude_border) {
  std::vector<std::uint32_t> out;
  for (int y = y0; y < y1; ++y) {
    if (exclude_border && (y == 0 || y == wm.height - 1)) continue;
    for (int x = x0; x < x1; ++x) {
      if (exclude_border && (x == 0 || x == wm.width - 1)) continue;
      out.push_back(wm.at(y, x));
    }
  }
  return out;
}

BowTarget histogram(std::vector<std::uint32_t> words, std::uint32_t k, BowMode mode) {
  std::sort(words.begin(), words.end());
  BowTarget t;
  t.k = k;
  t.mode = mode;
  for (std::size_t i = 0; i < words.size();) {
    std::size_t j = i;
    while (j < words.size() && words[j] == words[i]) ++j;
    t.index.push_back(words[i]);
    t.weight.push_back(mode == BowMode::kCount ? static_cast<float>(j - i) : 1.0f);
    i = j;
  }
  return t;
}

void check_border(const WordMap& wm, bool exclude_border) {
  if (exclude_border && (wm.height < 3 || wm.width < 3)) {
    throw ConfigError("border exclusion needs a word grid of at least 3x3");
  }
}

std::vector<BowTarget> pyramid_raw(const WordMap& wm, std::uint32_t k, BowMode mode, bool exclude_border) {
  check_words(wm, k);
  if (wm.height < 2 || wm.width < 2) throw ConfigError("spatial pyramid needs a word grid of at least 2x2");
  check_border(wm, exclude_border);
  if (exclude_border && (wm.height < 4 || wm.width < 4)) {
    throw ConfigError("spatial pyramid with border exclusion needs a word grid of at least 4x4");
  }
  const int h2 = wm.height / 2, w2 = wm.width / 2;
  std::vector<BowTarget> out;
  out.push_back(histogram(region_words(wm, 0, wm.height, 0, wm.width, exclude_border), k, mode));
  out.push_back(histogram(region_words(wm, 0, h2, 0, w2, exclude_border), k, mode));
  out.push_back(histogram(region_words(wm, 0, h2, w2, wm.width, exclude_border), k, mode));
  out.push_back(histogram(region_words(wm, h2, wm.height, 0, w2, exclude_border), k, mode));
  out.push_back(histogram(region_words(wm, h2, wm.height, w2, wm.width, exclude_border), k, mode));
  return out;
}

}  // namespace

BowTarget bow_count(const WordMap& wm, std::uint32_t k, bool exclude_border) {
  check_words(wm, k);
  check_border(wm, exclude_border);
  return histogram(region_words(wm, 0, wm.height, 0, wm.width, exclude_border), k, BowMode::kCount);
}

BowTarget bow_binary(const WordMap& wm, std::uint32_t k, bool exclude_border) {
  check_words(wm, k);
  check_border(wm, exclude_border);
  return histogram(region_words(wm, 0, wm.height, 0, wm.width, exclude_border), k, BowMode::kBinary);
}

BowTarget bow_build(const WordMap& wm, std::uint32_t k, BowMode mode, bool exclude_border) {
  return mode == BowMode::kCount ? bow_count(wm, k, exclude_border) : bow_binary(wm, k, exclude_border);
}

BowTarget l1_normalize(const BowTarget& t) {
  const double total = t.mass();
  if (t.nnz() == 0 || !(total > 0.0)) throw NumericError("cannot normalize an empty BoW target");
  BowTarget out = t;
  for (float& w : out.weight) w = static_cast<float>(w / total);
  return out;
}

BowTarget merge_flip(const BowTarget& orig, const BowTarget& flipped) {
  if (orig.k != flipped.k) throw DimensionError("merge_flip of targets with different K");
  if (orig.mode != flipped.mode) throw ConfigError("merge_flip of targets with different modes");
  BowTarget out;
  out.k = orig.k;
  out.mode = orig.mode;
  std::size_t i = 0, j = 0;
  while (i < orig.nnz() || j < flipped.nnz()) {
    const std::uint32_t a = i < orig.nnz() ? orig.index[i] : UINT32_MAX;
    const std::uint32_t b = j < flipped.nnz() ? flipped.index[j] : UINT32_MAX;
    const std::uint32_t idx = std::min(a, b);
    const float wa = a == idx ? orig.weight[i++] : 0.0f;
    const float wb = b == idx ? flipped.weight[j++] : 0.0f;
    out.index.push_back(idx);
    out.weight.push_back(orig.mode == BowMode::kCount ? wa + wb : std::max(wa, wb));
  }
  return l1_normalize(out);
}

BowTarget mix_targets(const BowTarget& a, const BowTarget& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixing coefficient outside [0,1]");
  if (a.k != b.k) throw DimensionError("mix_targets of targets with different K");
  BowTarget out;
  out.k = a.k;
  // A pure B target stays B, tag included.
  out.mode = lambda == 0.0 ? b.mode : a.mode;
  const double mu = 1.0 - lambda;
  std::size_t i = 0, j = 0;
  while (i < a.nnz() || j < b.nnz()) {
    const std::uint32_t ia = i < a.nnz() ? a.index[i] : UINT32_MAX;
    const std::uint32_t ib = j < b.nnz() ? b.index[j] : UINT32_MAX;
    const std::uint32_t idx = std::min(ia, ib);
    const double wa = ia == idx ? a.weight[i++] : 0.0;
    const double wb = ib == idx ? b.weight[j++] : 0.0;
    const float w = static_cast<float>(lambda * wa + mu * wb);
    if (w > 0.0f) {
      out.index.push_back(idx);
      out.weight.push_back(w);
    }
  }
  return out;
}

WordMap hflip_words(const WordMap& wm) {
  WordMap out = wm;
  for (int y = 0; y < wm.height; ++y)
    for (int x = 0; x < wm.width; ++x)
      out.words[static_cast<std::size_t>(y) * wm.width + x] = wm.at(y, wm.width - 1 - x);
  return out;
}

std::vector<BowTarget> pyramid_bow(const WordMap& wm, std::uint32_t k, BowMode mode, bool exclude_border) {
  std::vector<BowTarget> out = pyramid_raw(wm, k, mode, exclude_border);
  for (auto& t : out) t = l1_normalize(t);
  return out;
}

std::vector<float> to_dense(const BowTarget& t) {
  std::vector<float> d(t.k, 0.0f);
  for (std::size_t i = 0; i < t.nnz(); ++i) d[t.index[i]] = t.weight[i];
  return d;
}

double target_entropy(const BowTarget& t) {
  double h = 0.0;
  for (float w : t.weight)
    if (w > 0.0f) h -= w * std::log(static_cast<double>(w));
  return h;
}

std::vector<BowTarget> build_targets(const WordMap& wm, const WordMap* flipped_wm, std::uint32_t k,
                                     const BowOptions& opts) {
  if (opts.merge_flip && !flipped_wm) throw ConfigError("flip merging needs the mirrored word map");
  if (!opts.pyramid) {
    BowTarget raw = bow_build(wm, k, opts.mode, opts.exclude_border);
    if (!opts.merge_flip) return {l1_normalize(raw)};
    return {merge_flip(raw, bow_build(*flipped_wm, k, opts.mode, opts.exclude_border))};
  }
  std::vector<BowTarget> raw = pyramid_raw(wm, k, opts.mode, opts.exclude_border);
  if (!opts.merge_flip) {
    for (auto& t : raw) t = l1_normalize(t);
    return raw;
  }
  // Un-mirror the flipped view so its quadrants line up with the original's.
  const std::vector<BowTarget> other = pyramid_raw(hflip_words(*flipped_wm), k, opts.mode, opts.exclude_border);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = merge_flip(raw[i], other[i]);
  return raw;
}

namespace {

constexpr char kCacheMagic[4] = {'B', 'W', 'C', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("BoW cache truncated at byte offset " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

void BowCache::save(const std::filesystem::path& path) const {
  std::vector<std::uint8_t> out(kCacheMagic, kCacheMagic + 4);
  put_u32(out, k);
  put_u32(out, static_cast<std::uint32_t>(targets.size()));
  put_u32(out, static_cast<std::uint32_t>(config_hash & 0xFFFFFFFFu));
  put_u32(out, static_cast<std::uint32_t>(config_hash >> 32));
  for (const auto& t : targets) {
    put_u32(out, static_cast<std::uint32_t>(t.nnz()));
    for (std::size_t i = 0; i < t.nnz(); ++i) {
      put_u32(out, t.index[i]);
      put_u32(out, std::bit_cast<std::uint32_t>(t.weight[i]));
    }
  }
  write_file_bytes(path, out);
}

BowCache BowCache::load(const std::filesystem::path& path, std::size_t levels) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 4 || !std::equal(kCacheMagic, kCacheMagic + 4, bytes.begin())) {
    throw FormatError("'" + path.string() + "' is not a BWC1 BoW cache");
  }
  std::size_t pos = 4;
  BowCache cache;
  cache.levels = levels;
  cache.k = get_u32(bytes, pos);
  const std::uint32_t count = get_u32(bytes, pos);
  const std::uint64_t lo = get_u32(bytes, pos);
  const std::uint64_t hi = get_u32(bytes, pos);
  cache.config_hash = lo | (hi << 32);
  if (levels == 0 || count % levels != 0) throw FormatError("BoW cache record count not a multiple of the pyramid levels");
  cache.targets.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    BowTarget t;
    t.k = cache.k;
    const std::uint32_t nnz = get_u32(bytes, pos);
    for (std::uint32_t i = 0; i < nnz; ++i) {
      t.index.push_back(get_u32(bytes, pos));
      t.weight.push_back(std::bit_cast<float>(get_u32(bytes, pos)));
    }
    validate_target(t);
    cache.targets.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes in BoW cache at offset " + std::to_string(pos));
  return cache;
}

std::uint64_t bow_config_hash(const Encoder& base, const Vocabulary& vocab, const BowOptions& opts) {
  const auto enc_bytes = base.to_checkpoint().serialize();
  const auto voc_bytes = vocab.to_checkpoint().serialize();
  std::uint64_t h = fnv1a64(enc_bytes.data(), enc_bytes.size());
  h = fnv1a64(voc_bytes.data(), voc_bytes.size(), h);
  std::ostringstream os;
  os << "mode=" << bow_mode_name(opts.mode) << ";border=" << opts.exclude_border << ";flip=" << opts.merge_flip
     << ";pyramid=" << opts.pyramid;
  return fnv1a64(os.str(), h);
}

std::vector<std::vector<BowTarget>> compute_targets(const Encoder& base, const Vocabulary& vocab,
                                                    std::span<const Image> images, const BowOptions& opts) {
  const int tap = vocab.tap_layer;
  const auto k = static_cast<std::uint32_t>(vocab.size());
  const std::vector<WordMap> words = quantize_batch(base.forward(to_batch(images), tap).taps.back(), vocab);
  std::vector<WordMap> flipped;
  if (opts.merge_flip) {
    std::vector<Image> mirrored;
    mirrored.reserve(images.size());
    for (const auto& img : images) mirrored.push_back(hflip(img));
    flipped = quantize_batch(base.forward(to_batch(mirrored), tap).taps.back(), vocab);
  }
  std::vector<std::vector<BowTarget>> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(build_targets(words[i], opts.merge_flip ? &flipped[i] : nullptr, k, opts));
  }
  return out;
}

BowCache build_bow_cache(const Encoder& base, const Vocabulary& vocab, const Dataset& ds, const BowOptions& opts) {
  if (ds.size() == 0) throw ConfigError("cannot build a BoW cache for an empty dataset");
  BowCache cache;
  cache.k = static_cast<std::uint32_t>(vocab.size());
  cache.levels = opts.levels();
  cache.config_hash = bow_config_hash(base, vocab, opts);
  cache.targets.reserve(ds.size() * cache.levels);
  constexpr std::size_t kBatch = 64;
  for (std::size_t b0 = 0; b0 < ds.size(); b0 += kBatch) {
    const std::size_t nb = std::min(kBatch, ds.size() - b0);
    auto targets = compute_targets(base, vocab, std::span<const Image>(ds.images.data() + b0, nb), opts);
    for (auto& per_image : targets)
      for (auto& t : per_image) cache.targets.push_back(std::move(t));
  }
  return cache;
}

}  // namespace bownet
