#include "bownet/config.hpp"

#include <cstdio>
#include <set>

#include "bownet/checkpoint.hpp"
#include "bownet/error.hpp"

namespace bownet {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object and complains about the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + key + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + path_ + key + "': " + e.what());
    }
  }
  const json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string child(const char* key) const { return path_ + key + "."; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json sgd_json(const SgdConfig& s) {
  json sched = json::array();
  for (const auto& [e, m] : s.schedule) sched.push_back({e, m});
  return {{"lr", s.lr}, {"momentum", s.momentum}, {"weight_decay", s.weight_decay}, {"schedule", sched},
          {"epochs", s.epochs}, {"batch_size", s.batch_size}};
}

void read_sgd(const json& j, const std::string& path, SgdConfig& s) {
  Fields f(j, path);
  f.get("lr", s.lr);
  f.get("momentum", s.momentum);
  f.get("weight_decay", s.weight_decay);
  f.get("epochs", s.epochs);
  f.get("batch_size", s.batch_size);
  if (const json* sched = f.section("schedule")) {
    s.schedule.clear();
    for (const auto& item : *sched) {
      if (!item.is_array() || item.size() != 2) throw ConfigError("schedule entries must be [epoch, multiplier]");
      s.schedule.emplace_back(item[0].get<int>(), item[1].get<double>());
    }
  }
}

json perturb_json(const PerturbConfig& p) {
  return {{"brightness", p.brightness}, {"contrast", p.contrast}, {"saturation", p.saturation}, {"hue", p.hue},
          {"grayscale_prob", p.grayscale_prob}, {"crop_scale", {p.crop_scale.first, p.crop_scale.second}},
          {"aspect", {p.aspect.first, p.aspect.second}}, {"flip_prob", p.flip_prob}};
}

void read_perturb(const json& j, const std::string& path, PerturbConfig& p) {
  Fields f(j, path);
  f.get("brightness", p.brightness);
  f.get("contrast", p.contrast);
  f.get("saturation", p.saturation);
  f.get("hue", p.hue);
  f.get("grayscale_prob", p.grayscale_prob);
  f.get("crop_scale", p.crop_scale);
  f.get("aspect", p.aspect);
  f.get("flip_prob", p.flip_prob);
}

}  // namespace

json RunConfig::to_json() const {
  json words_json = words;
  json shots = fewshot_shots;
  return {
      {"seed", seed},
      {"data", {{"classes", synth.n_classes}, {"per_class", synth.per_class}, {"test_per_class", test_per_class},
                {"size", synth.size}, {"jitter", synth.jitter}}},
      {"encoder", {{"channels", channels}, {"rot_head_width", rot_head_width}}},
      {"pretext", {{"sgd", sgd_json(pretext.sgd)}, {"hflip", pretext.hflip}}},
      {"vocab", {{"k", vocab.k}, {"tap", vocab.tap}, {"max_vectors", vocab.max_vectors},
                 {"max_iters", vocab.max_iters}, {"pca_dim", vocab.pca_dim}}},
      {"bow", {{"mode", bow_mode_name(bow.mode)}, {"exclude_border", bow.exclude_border},
               {"merge_flip", bow.merge_flip}, {"pyramid", bow.pyramid}}},
      {"train", {{"sgd", sgd_json(train.sgd)}, {"perturb", perturb_json(train.perturb)}, {"cutmix", train.cutmix},
                 {"cutmix_prob", train.cutmix_prob}, {"cutmix_frac", {train.cutmix_frac.first, train.cutmix_frac.second}},
                 {"predict_perturbed", train.predict_perturbed},
                 {"plain_head", train.head == HeadVariant::kPlain}, {"gamma_init", train.gamma_init}}},
      {"iterate", {{"rounds", rounds}, {"base", base == BaseKind::kRotNet ? "rotnet" : "random"},
                   {"random_pca_dim", random_pca_dim}}},
      {"probe", {{"epochs", probe.epochs}, {"lr", probe.lr}, {"lr_mult", probe.lr_mult}, {"lr_every", probe.lr_every},
                 {"momentum", probe.momentum}, {"weight_decay", probe.weight_decay},
                 {"batch_size", probe.batch_size}, {"standardize", probe.standardize}}},
      {"fewshot", {{"ways", fewshot.ways}, {"shots", shots}, {"queries", fewshot.queries},
                   {"episodes", fewshot.episodes}, {"class_pool", fewshot.class_pool}}},
      {"words", {{"per_word", words_per_word}, {"indices", words_json}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Fields top(j, "");
  top.get("seed", c.seed);
  if (const json* s = top.section("data")) {
    Fields f(*s, "data.");
    f.get("classes", c.synth.n_classes);
    f.get("per_class", c.synth.per_class);
    f.get("test_per_class", c.test_per_class);
    f.get("size", c.synth.size);
    f.get("jitter", c.synth.jitter);
  }
  if (const json* s = top.section("encoder")) {
    Fields f(*s, "encoder.");
    f.get("channels", c.channels);
    f.get("rot_head_width", c.rot_head_width);
  }
  if (const json* s = top.section("pretext")) {
    Fields f(*s, "pretext.");
    if (const json* sgd = f.section("sgd")) read_sgd(*sgd, "pretext.sgd.", c.pretext.sgd);
    f.get("hflip", c.pretext.hflip);
  }
  if (const json* s = top.section("vocab")) {
    Fields f(*s, "vocab.");
    f.get("k", c.vocab.k);
    f.get("tap", c.vocab.tap);
    f.get("max_vectors", c.vocab.max_vectors);
    f.get("max_iters", c.vocab.max_iters);
    f.get("pca_dim", c.vocab.pca_dim);
  }
  if (const json* s = top.section("bow")) {
    Fields f(*s, "bow.");
    std::string mode = bow_mode_name(c.bow.mode);
    f.get("mode", mode);
    c.bow.mode = parse_bow_mode(mode);
    f.get("exclude_border", c.bow.exclude_border);
    f.get("merge_flip", c.bow.merge_flip);
    f.get("pyramid", c.bow.pyramid);
  }
  if (const json* s = top.section("train")) {
    Fields f(*s, "train.");
    if (const json* sgd = f.section("sgd")) read_sgd(*sgd, "train.sgd.", c.train.sgd);
    if (const json* p = f.section("perturb")) read_perturb(*p, "train.perturb.", c.train.perturb);
    f.get("cutmix", c.train.cutmix);
    f.get("cutmix_prob", c.train.cutmix_prob);
    f.get("cutmix_frac", c.train.cutmix_frac);
    f.get("predict_perturbed", c.train.predict_perturbed);
    bool plain = c.train.head == HeadVariant::kPlain;
    f.get("plain_head", plain);
    c.train.head = plain ? HeadVariant::kPlain : HeadVariant::kReparam;
    f.get("gamma_init", c.train.gamma_init);
  }
  if (const json* s = top.section("iterate")) {
    Fields f(*s, "iterate.");
    f.get("rounds", c.rounds);
    std::string base = c.base == BaseKind::kRotNet ? "rotnet" : "random";
    f.get("base", base);
    if (base != "rotnet" && base != "random") throw ConfigError("iterate.base must be rotnet or random");
    c.base = base == "rotnet" ? BaseKind::kRotNet : BaseKind::kRandom;
    f.get("random_pca_dim", c.random_pca_dim);
  }
  if (const json* s = top.section("probe")) {
    Fields f(*s, "probe.");
    f.get("epochs", c.probe.epochs);
    f.get("lr", c.probe.lr);
    f.get("lr_mult", c.probe.lr_mult);
    f.get("lr_every", c.probe.lr_every);
    f.get("momentum", c.probe.momentum);
    f.get("weight_decay", c.probe.weight_decay);
    f.get("batch_size", c.probe.batch_size);
    f.get("standardize", c.probe.standardize);
  }
  if (const json* s = top.section("fewshot")) {
    Fields f(*s, "fewshot.");
    f.get("ways", c.fewshot.ways);
    f.get("shots", c.fewshot_shots);
    f.get("queries", c.fewshot.queries);
    f.get("episodes", c.fewshot.episodes);
    f.get("class_pool", c.fewshot.class_pool);
  }
  if (const json* s = top.section("words")) {
    Fields f(*s, "words.");
    f.get("per_word", c.words_per_word);
    f.get("indices", c.words);
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

void RunConfig::propagate() {
  pretext.sgd.seed = seed;
  train.sgd.seed = seed;
  train.channels = channels;
  train.perturb.out_size = synth.size;
  probe.seed = seed;
  fewshot.seed = seed;
}

void RunConfig::validate() const {
  if (channels.empty()) throw ConfigError("encoder.channels is empty");
  if (rounds < 1) throw ConfigError("iterate.rounds must be >= 1");
  if (test_per_class < 0) throw ConfigError("data.test_per_class must be >= 0");
  if (fewshot_shots.empty()) throw ConfigError("fewshot.shots is empty");
  if (words_per_word == 0) throw ConfigError("words.per_word must be positive");
  pretext.sgd.validate();
  train.validate();
}

std::string config_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace bownet
