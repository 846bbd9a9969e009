#include "bownet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "bownet/checkpoint.hpp"
#include "bownet/error.hpp"

namespace bownet {

namespace fs = std::filesystem;

Image::Image(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(kChannels) * w * h, fill) {}

void validate_image(const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw FormatError("image has non-positive extent");
  if (img.pixels.size() != static_cast<std::size_t>(Image::kChannels) * img.width * img.height) {
    throw FormatError("image pixel buffer does not match its extents");
  }
  for (float v : img.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("image value outside [0,1]: " + std::to_string(v));
  }
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.label.value_or(-1));
  return out;
}

void validate_dataset(const Dataset& ds) {
  if (ds.images.empty()) return;
  const int w = ds.images.front().width;
  const int h = ds.images.front().height;
  if (w != h) throw DimensionError("dataset images must be square");
  for (const auto& img : ds.images) {
    if (img.width != w || img.height != h) throw DimensionError("dataset images differ in size");
    validate_image(img);
    if (img.label && (*img.label < 0 || static_cast<std::size_t>(*img.label) >= ds.class_names.size())) {
      throw FormatError("label " + std::to_string(*img.label) + " outside class range");
    }
  }
}

Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw DimensionError("empty image batch");
  const std::size_t w = images.front().width, h = images.front().height;
  Tensor out({images.size(), 3, h, w});
  const std::size_t per = 3 * h * w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<std::size_t>(images[i].width) != w || static_cast<std::size_t>(images[i].height) != h) {
      throw DimensionError("batch images differ in size");
    }
    std::memcpy(out.data() + i * per, images[i].pixels.data(), per * sizeof(float));
  }
  return out;
}

Tensor to_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<Image> imgs;
  imgs.reserve(indices.size());
  for (std::size_t i : indices) imgs.push_back(ds.images.at(i));
  return to_batch(imgs);
}

namespace {

constexpr int kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::size_t label_bytes(CifarVariant v) { return v == CifarVariant::kCifar10 ? 1 : 2; }

std::vector<std::string> numbered_classes(int n) {
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

Dataset load_cifar_binary(const std::vector<fs::path>& paths, CifarVariant variant) {
  const std::size_t lb = label_bytes(variant);
  const std::size_t record = lb + kCifarPixels;
  Dataset ds;
  ds.class_names = numbered_classes(variant == CifarVariant::kCifar10 ? 10 : 100);
  for (const auto& path : paths) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() % record != 0) {
      throw FormatError("truncated CIFAR record in '" + path.string() + "' at byte offset " +
                        std::to_string(bytes.size() - bytes.size() % record));
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      Image img(kCifarSide, kCifarSide);
      img.label = bytes[off + lb - 1];
      const std::uint8_t* px = bytes.data() + off + lb;
      for (std::size_t i = 0; i < kCifarPixels; ++i) img.pixels[i] = static_cast<float>(px[i]) / 255.0f;
      ds.images.push_back(std::move(img));
    }
  }
  return ds;
}

void write_cifar_binary(const fs::path& path, const Dataset& ds, CifarVariant variant) {
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * (label_bytes(variant) + kCifarPixels));
  for (const auto& img : ds.images) {
    if (img.width != kCifarSide || img.height != kCifarSide) {
      throw DimensionError("CIFAR records are 32x32");
    }
    if (variant == CifarVariant::kCifar100) out.push_back(0);
    out.push_back(static_cast<std::uint8_t>(img.label.value_or(0)));
    for (float v : img.pixels) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
  }
  write_file_bytes(path, out);
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n_items, std::size_t batch, Rng& rng) {
  if (batch == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(n_items);
  for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_items; start += batch) {
    const std::size_t end = std::min(n_items, start + batch);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  validate_dataset(ds);
  if (ds.split_tag.empty()) throw ConfigError("dataset needs a split tag to be saved");
  fs::create_directories(dir);
  Checkpoint ckpt;
  const std::size_t s = static_cast<std::size_t>(ds.image_size());
  std::vector<float> pixels;
  pixels.reserve(ds.size() * 3 * s * s);
  std::vector<float> labels;
  for (const auto& img : ds.images) {
    pixels.insert(pixels.end(), img.pixels.begin(), img.pixels.end());
    labels.push_back(static_cast<float>(img.label.value_or(-1)));
  }
  ckpt.put("images", Tensor({ds.size(), 3, s, s}, std::move(pixels)));
  ckpt.put("labels", Tensor({ds.size()}, std::move(labels)));
  ckpt.save(dir / (ds.split_tag + ".bwnt"));

  nlohmann::json meta;
  meta["classes"] = ds.class_names;
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write '" + (dir / "meta.json").string() + "'");
  out << meta.dump(2) << "\n";
}

Dataset load_dataset(const fs::path& dir, const std::string& split) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory '" + dir.string() + "' not found");
  Dataset ds;
  ds.split_tag = split;
  const fs::path native = dir / (split + ".bwnt");
  if (fs::exists(native)) {
    const Checkpoint ckpt = Checkpoint::load(native);
    const Tensor& images = ckpt.get("images");
    const Tensor& labels = ckpt.get("labels");
    if (images.rank() != 4 || images.dim(1) != 3 || labels.size() != images.dim(0)) {
      throw FormatError("malformed dataset file '" + native.string() + "'");
    }
    const int h = static_cast<int>(images.dim(2)), w = static_cast<int>(images.dim(3));
    const std::size_t per = 3 * static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < images.dim(0); ++i) {
      Image img(w, h);
      std::memcpy(img.pixels.data(), images.data() + i * per, per * sizeof(float));
      if (labels[i] >= 0.0f) img.label = static_cast<int>(labels[i]);
      ds.images.push_back(std::move(img));
    }
    std::ifstream in(dir / "meta.json");
    if (in) {
      const auto meta = nlohmann::json::parse(in);
      ds.class_names = meta.at("classes").get<std::vector<std::string>>();
    }
  } else if (fs::exists(dir / "data_batch_1.bin")) {
    std::vector<fs::path> files;
    if (split == "train") {
      for (int i = 1; i <= 5; ++i) {
        const fs::path p = dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (fs::exists(p)) files.push_back(p);
      }
    } else {
      files.push_back(dir / "test_batch.bin");
    }
    ds = load_cifar_binary(files, CifarVariant::kCifar10);
    ds.split_tag = split;
    if (auto names = read_lines(dir / "batches.meta.txt"); names.size() == 10) ds.class_names = names;
  } else if (fs::exists(dir / "train.bin") || fs::exists(dir / "test.bin")) {
    ds = load_cifar_binary({dir / (split + ".bin")}, CifarVariant::kCifar100);
    ds.split_tag = split;
    if (auto names = read_lines(dir / "fine_label_names.txt"); names.size() == 100) ds.class_names = names;
  } else {
    throw IoError("no '" + split + "' split found in '" + dir.string() + "'");
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace bownet
