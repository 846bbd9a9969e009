#include "bownet/patches.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "bownet/checkpoint.hpp"
#include "bownet/error.hpp"

namespace bownet {

ReceptiveField receptive_field(const Encoder& enc, int tap) {
  if (tap < 1 || tap > enc.num_blocks()) throw ConfigError("tap layer " + std::to_string(tap) + " out of range");
  // Track size, jump and the centre of position 0 (doubled to stay integral).
  int size = 1, jump = 1, centre2 = 0;
  for (int b = 1; b <= tap; ++b) {
    size += 2 * jump;  // 3x3 conv, stride 1
    if (b == tap) break;
    size += jump;  // 2x2 pool, stride 2
    centre2 += jump;
    jump *= 2;
  }
  return {size, jump, (centre2 - (size - 1)) / 2};
}

Image extract_patch(const Image& img, const ReceptiveField& rf, int y, int x) {
  Image out(rf.size, rf.size, 0.0f);
  const int y0 = rf.offset + y * rf.stride, x0 = rf.offset + x * rf.stride;
  for (int c = 0; c < Image::kChannels; ++c)
    for (int py = 0; py < rf.size; ++py)
      for (int px = 0; px < rf.size; ++px) {
        const int sy = y0 + py, sx = x0 + px;
        if (sy >= 0 && sy < img.height && sx >= 0 && sx < img.width) out.at(c, py, px) = img.at(c, sy, sx);
      }
  return out;
}

std::vector<WordMember> nearest_members(const Encoder& enc, const Vocabulary& vocab, const Dataset& ds,
                                        std::uint32_t word, std::size_t count) {
  if (word >= static_cast<std::uint32_t>(vocab.size())) {
    throw ConfigError("word " + std::to_string(word) + " out of range for K=" + std::to_string(vocab.size()));
  }
  const std::size_t d = static_cast<std::size_t>(vocab.centroid_dim());
  const float* centroid = vocab.centroids.data() + word * d;
  std::vector<WordMember> members;
  constexpr std::size_t kBatch = 64;
  for (std::size_t b0 = 0; b0 < ds.size(); b0 += kBatch) {
    const std::size_t nb = std::min(kBatch, ds.size() - b0);
    const Tensor maps = enc.forward(to_batch(std::span<const Image>(ds.images.data() + b0, nb)), vocab.tap_layer).taps.back();
    const auto words = quantize_batch(maps, vocab);
    const std::size_t c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    std::vector<float> v(c);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t p = 0; p < h * w; ++p) {
        if (words[b].words[p] != word) continue;
        for (std::size_t ch = 0; ch < c; ++ch) v[ch] = maps[((b * c + ch) * h * w) + p];
        const std::vector<float> f = vocab.pca ? vocab.pca->apply(v) : v;
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) dist += std::pow(static_cast<double>(f[j]) - centroid[j], 2);
        members.push_back({b0 + b, static_cast<int>(p / w), static_cast<int>(p % w), dist});
      }
  }
  auto before = [](const WordMember& a, const WordMember& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.image != b.image) return a.image < b.image;
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  };
  const std::size_t keep = std::min(count, members.size());
  std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep), members.end(), before);
  members.resize(keep);
  return members;
}

Image tile_grid(const std::vector<Image>& tiles, int tile_size, std::size_t count) {
  if (count == 0) throw ConfigError("grid needs at least one cell");
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)) - 1e-9));
  Image grid(side * tile_size, side * tile_size, 0.0f);
  for (std::size_t t = 0; t < tiles.size() && t < count; ++t) {
    if (tiles[t].width != tile_size || tiles[t].height != tile_size) throw DimensionError("tile size mismatch");
    const int oy = static_cast<int>(t) / side * tile_size, ox = static_cast<int>(t) % side * tile_size;
    for (int c = 0; c < Image::kChannels; ++c)
      for (int y = 0; y < tile_size; ++y)
        for (int x = 0; x < tile_size; ++x) grid.at(c, oy + y, ox + x) = tiles[t].at(c, y, x);
  }
  return grid;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < Image::kChannels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
  write_file_bytes(path, bytes);
}

Image read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw FormatError("'" + path.string() + "' is not a binary PPM");
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  ++pos;
  if (maxval != 255 || bytes.size() - pos != static_cast<std::size_t>(w) * h * 3) throw FormatError("unsupported PPM layout");
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < Image::kChannels; ++c) img.at(c, y, x) = bytes[pos++] / 255.0f;
  return img;
}

std::vector<std::filesystem::path> dump_word_patches(const Encoder& enc, const Vocabulary& vocab, const Dataset& ds,
                                                     const std::vector<std::uint32_t>& words, std::size_t per_word,
                                                     const std::filesystem::path& out_dir) {
  if (per_word == 0) throw ConfigError("per_word must be positive");
  const ReceptiveField rf = receptive_field(enc, vocab.tap_layer);
  std::vector<std::filesystem::path> written;
  for (std::uint32_t word : words) {
    std::vector<Image> tiles;
    for (const auto& m : nearest_members(enc, vocab, ds, word, per_word))
      tiles.push_back(extract_patch(ds.images[m.image], rf, m.y, m.x));
    const auto path = out_dir / ("word_" + std::to_string(word) + ".ppm");
    write_ppm(path, tile_grid(tiles, rf.size, per_word));
    written.push_back(path);
  }
  return written;
}

}  // namespace bownet
