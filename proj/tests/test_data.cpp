#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "bownet/checkpoint.hpp"
#include "bownet/data.hpp"
#include "bownet/error.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace bownet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "bownet_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("cifar empty file gives no images") {
  fs::path p = scratch("empty.bin");
  write_bytes(p, {});
  CHECK(load_cifar_binary({p}, CifarVariant::kCifar10).size() == 0);
}

TEST_CASE("cifar handcrafted red record") {
  std::vector<std::uint8_t> rec(3074, 0);
  rec[0] = 3;  // coarse
  rec[1] = 17;  // fine
  std::fill(rec.begin() + 2, rec.begin() + 2 + 1024, 255);
  fs::path p = scratch("red100.bin");
  write_bytes(p, rec);
  Dataset ds = load_cifar_binary({p}, CifarVariant::kCifar100);
  REQUIRE(ds.size() == 1);
  const Image& img = ds.images[0];
  CHECK(img.width == 32);
  CHECK(*img.label == 17);
  CHECK(img.at(0, 0, 0) == 1.0f);
  CHECK(img.at(1, 0, 0) == 0.0f);
  CHECK(img.at(2, 0, 0) == 0.0f);
  CHECK(img.at(0, 31, 31) == 1.0f);
}

TEST_CASE("cifar planar decode matches byte layout") {
  std::vector<std::uint8_t> rec(3073);
  rec[0] = 6;
  for (std::size_t i = 0; i < 3072; ++i) rec[1 + i] = static_cast<std::uint8_t>((i * 7) % 256);
  fs::path p = scratch("ramp10.bin");
  write_bytes(p, rec);
  Dataset ds = load_cifar_binary({p}, CifarVariant::kCifar10);
  const Image& img = ds.images[0];
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; y += 5)
      for (int x = 0; x < 32; x += 3) {
        std::size_t i = static_cast<std::size_t>(c) * 1024 + static_cast<std::size_t>(y) * 32 + x;
        CHECK(img.at(c, y, x) == static_cast<float>((i * 7) % 256) / 255.0f);
      }
}

TEST_CASE("cifar truncated record reports byte offset") {
  std::vector<std::uint8_t> bytes(3073 + 100, 1);
  fs::path p = scratch("trunc.bin");
  write_bytes(p, bytes);
  try {
    load_cifar_binary({p}, CifarVariant::kCifar10);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  CHECK_THROWS_AS(load_cifar_binary({scratch("missing.bin")}, CifarVariant::kCifar10), IoError);
}

TEST_CASE("cifar write then read is the identity on byte-valued images") {
  Dataset ds;
  ds.class_names = std::vector<std::string>(100, "c");
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    Image img(32, 32);
    for (float& v : img.pixels) v = static_cast<float>(rng.uniform_int(256)) / 255.0f;
    img.label = static_cast<int>(rng.uniform_int(100));
    ds.images.push_back(img);
  }
  for (auto variant : {CifarVariant::kCifar10, CifarVariant::kCifar100}) {
    if (variant == CifarVariant::kCifar10)
      for (auto& img : ds.images) *img.label %= 10;
    fs::path p = scratch("roundtrip.bin");
    write_cifar_binary(p, ds, variant);
    Dataset back = load_cifar_binary({p}, variant);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.images[i] == ds.images[i]);
  }
}

TEST_CASE("synthetic dataset counts, balance and validity") {
  SyntheticSpec spec;
  spec.per_class = 500;
  Dataset ds = gen_synthetic(spec);
  CHECK(ds.size() == 4000);
  std::vector<int> counts(8, 0);
  for (const auto& img : ds.images) {
    REQUIRE(img.label.has_value());
    ++counts[*img.label];
    validate_image(img);
  }
  for (int c : counts) CHECK(c == 500);
  validate_dataset(ds);
  std::set<std::string> names(ds.class_names.begin(), ds.class_names.end());
  CHECK(names.size() == 8);
}

TEST_CASE("synthetic dataset is deterministic and rejects bad specs") {
  SyntheticSpec spec{.n_classes = 3, .per_class = 4, .size = 16, .seed = 9};
  Dataset a = gen_synthetic(spec), b = gen_synthetic(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i] == b.images[i]);
  spec.seed = 10;
  CHECK_FALSE(gen_synthetic(spec).images[0] == a.images[0]);

  CHECK_THROWS_AS(gen_synthetic({.n_classes = 3, .per_class = 0}), ConfigError);
  CHECK_THROWS_AS(gen_synthetic({.n_classes = 1, .per_class = 3}), ConfigError);
  CHECK_THROWS_AS(gen_synthetic({.n_classes = 3, .per_class = 3, .size = 4}), ConfigError);
}

TEST_CASE("synthetic classes beyond the glyph set stay distinct") {
  Dataset ds = gen_synthetic({.n_classes = 20, .per_class = 1, .size = 16});
  std::set<std::string> names(ds.class_names.begin(), ds.class_names.end());
  CHECK(names.size() == 20);
}

TEST_CASE("batch indices") {
  Rng rng(1);
  auto batches = batch_indices(10, 3, rng);
  REQUIRE(batches.size() == 4);
  CHECK(batches[0].size() == 3);
  CHECK(batches[3].size() == 1);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);

  Rng r1(5), r2(5);
  CHECK(batch_indices(50, 7, r1) == batch_indices(50, 7, r2));
  CHECK_THROWS_AS(batch_indices(5, 0, r1), ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(8);
  Checkpoint ck;
  ck.put("a.w", ref::random_tensor({2, 3, 3, 3}, rng));
  ck.put("scalar", Tensor({1}, {std::nanf("")}));
  ck.put("b", Tensor({5}, {-0.0f, 1e-38f, 3.4e38f, 1.0f, -2.5f}));
  fs::path p = scratch("ck.bwnt");
  ck.save(p);
  Checkpoint back = Checkpoint::load(p);
  REQUIRE(back.size() == 3);
  CHECK(back.serialize() == ck.serialize());
  CHECK(read_file_bytes(p) == ck.serialize());
}

TEST_CASE("checkpoint byte layout") {
  Checkpoint ck;
  ck.put("x", Tensor({2}, {1.0f, 2.0f}));
  auto b = ck.serialize();
  std::vector<std::uint8_t> expect = {'B', 'W', 'N', 'T', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 'x', 1, 2, 0, 0, 0,
                                      0, 0, 0x80, 0x3f, 0, 0, 0, 0x40};
  CHECK(b == expect);
}

TEST_CASE("checkpoint rejects corrupt input") {
  Checkpoint ck;
  ck.put("x", Tensor({4}, 1.0f));
  auto bytes = ck.serialize();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(Checkpoint::deserialize(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(Checkpoint::deserialize(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(Checkpoint::deserialize(trailing), FormatError);
  CHECK_THROWS_AS(ck.get("missing"), FormatError);
}

TEST_CASE("dataset directory round trip") {
  Dataset ds = gen_synthetic({.n_classes = 2, .per_class = 3, .size = 8});
  ds.split_tag = "train";
  fs::path dir = scratch("dsdir");
  fs::remove_all(dir);
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir, "train");
  CHECK(back.class_names == ds.class_names);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.images[i] == ds.images[i]);
  CHECK_THROWS_AS(load_dataset(dir, "test"), IoError);
}
