#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bownet/data.hpp"
#include "bownet/encoder.hpp"
#include "bownet/vocab.hpp"

namespace bownet {

// Image-space footprint of one position of block `tap`'s pre-pool map:
// position p covers pixels [offset + p * stride, offset + p * stride + size).
struct ReceptiveField {
  int size = 1;
  int stride = 1;
  int offset = 0;
};
ReceptiveField receptive_field(const Encoder& enc, int tap);

// Square patch for map position (y, x); pixels outside the image are black.
Image extract_patch(const Image& img, const ReceptiveField& rf, int y, int x);

struct WordMember {
  std::size_t image = 0;
  int y = 0, x = 0;
  double distance = 0.0;  // squared, in centroid space
};

// Positions assigned to `word`, nearest to its centroid first (ties by
// image, row, column), at most `count` of them.
std::vector<WordMember> nearest_members(const Encoder& enc, const Vocabulary& vocab, const Dataset& ds,
                                        std::uint32_t word, std::size_t count);

// Tiles in a side x side grid, side = ceil(sqrt(count)); empty cells black.
Image tile_grid(const std::vector<Image>& tiles, int tile_size, std::size_t count);

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

// Writes <out_dir>/word_<k>.ppm for every requested word and returns the paths.
std::vector<std::filesystem::path> dump_word_patches(const Encoder& enc, const Vocabulary& vocab, const Dataset& ds,
                                                     const std::vector<std::uint32_t>& words, std::size_t per_word,
                                                     const std::filesystem::path& out_dir);

}  // namespace bownet
