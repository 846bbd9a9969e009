#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bownet/numerics.hpp"

namespace bownet {

// Ordered collection of named tensors stored in the BWNT container:
//   "BWNT" | u32 version=1 | u32 count |
//   count x (u16 name_len | name | u8 rank | rank x u32 extent | f32 values)
// All integers and floats little-endian.
class Checkpoint {
 public:
  void put(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  // Entries whose names start with `prefix`, prefix stripped.
  Checkpoint with_prefix(const std::string& prefix) const;
  void merge(const Checkpoint& other, const std::string& prefix = "");

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// FNV-1a 64-bit over raw bytes; used for cache and config fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace bownet
