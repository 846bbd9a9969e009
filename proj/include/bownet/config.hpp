#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bownet/bow.hpp"
#include "bownet/data.hpp"
#include "bownet/eval.hpp"
#include "bownet/train.hpp"
#include "bownet/vocab.hpp"

namespace bownet {

// Every tunable of the command-line pipeline. Serialized as one JSON
// document; reading rejects keys it does not know.
struct RunConfig {
  std::uint64_t seed = 1;

  SyntheticSpec synth;
  int test_per_class = 125;

  std::vector<int> channels = {32, 64, 128};
  int rot_head_width = 0;  // 0: encoder output width

  RotNetConfig pretext;
  VocabOptions vocab;
  BowOptions bow;
  BowTrainConfig train;

  int rounds = 1;
  BaseKind base = BaseKind::kRotNet;
  int random_pca_dim = 32;

  ProbeConfig probe;
  EpisodeConfig fewshot;
  std::vector<int> fewshot_shots = {1, 5, 10, 50};

  std::size_t words_per_word = 16;
  std::vector<std::uint32_t> words;  // empty: every word

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // Copies the shared seed and channel plan into the per-stage settings.
  void propagate();
  void validate() const;
};

// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace bownet
