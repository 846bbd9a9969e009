// Command-line driver for the BoWNet pipeline.
#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "bownet/config.hpp"
#include "bownet/error.hpp"
#include "bownet/eval.hpp"
#include "bownet/patches.hpp"
#include "bownet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bownet;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string encoder;
  std::string vocab;
  std::string cache;
  std::string split;
  std::optional<int> k, tap, rounds;
  std::optional<std::string> bow_mode, base;
  bool pyramid = false, no_cutmix = false, predict_perturbed = false, plain_head = false;
  std::optional<int> epochs;
  // gen-synth
  std::optional<int> classes, per_class, test_per_class, size;
  std::optional<double> jitter;
  // words
  std::optional<std::size_t> per_word;
  std::vector<std::uint32_t> words;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.k) c.vocab.k = *o.k;
  if (o.tap) c.vocab.tap = *o.tap;
  if (o.rounds) c.rounds = *o.rounds;
  if (o.bow_mode) c.bow.mode = parse_bow_mode(*o.bow_mode);
  if (o.base) {
    if (*o.base != "rotnet" && *o.base != "random") throw ConfigError("--base must be rotnet or random");
    c.base = *o.base == "rotnet" ? BaseKind::kRotNet : BaseKind::kRandom;
  }
  if (o.pyramid) c.bow.pyramid = true;
  if (o.no_cutmix) c.train.cutmix = false;
  if (o.predict_perturbed) c.train.predict_perturbed = true;
  if (o.plain_head) c.train.head = HeadVariant::kPlain;
  if (o.epochs) c.pretext.sgd.epochs = c.train.sgd.epochs = *o.epochs;
  if (o.classes) c.synth.n_classes = *o.classes;
  if (o.per_class) c.synth.per_class = *o.per_class;
  if (o.test_per_class) c.test_per_class = *o.test_per_class;
  if (o.size) c.synth.size = *o.size;
  if (o.jitter) c.synth.jitter = *o.jitter;
  if (o.per_word) c.words_per_word = *o.per_word;
  if (!o.words.empty()) c.words = o.words;
  c.propagate();
  c.validate();
  return c;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
}

fs::path out_or(const Options& o, const char* fallback) { return o.out.empty() ? fs::path(fallback) : fs::path(o.out); }

// Sidecar path: "<dir>/<stem><suffix>".
fs::path sidecar(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

json with_meta(json body, const char* command, const RunConfig& cfg) {
  const json cj = cfg.to_json();
  body["command"] = command;
  body["config_hash"] = config_hash(cj);
  body["config"] = cj;
  return body;
}

void emit(const fs::path& path, const json& j) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_text(path, j.dump(2) + "\n");
  }
}

EpochHook printer(const char* what) {
  return [what](const EpochRecord& r) {
    std::fprintf(stderr, "%s epoch %d loss %.5f lr %.4g (%.1fs)\n", what, r.epoch, r.loss, r.lr, r.seconds);
  };
}

Encoder load_encoder(const std::string& path) {
  require(path, "--encoder");
  return Encoder::from_checkpoint(Checkpoint::load(path));
}

Vocabulary load_vocab(const std::string& path) {
  require(path, "--vocab");
  return Vocabulary::from_checkpoint(Checkpoint::load(path));
}

Dataset load_split(const Options& o, const std::string& fallback) {
  require(o.data, "--data");
  return load_dataset(o.data, o.split.empty() ? fallback : o.split);
}

int cmd_gen_synth(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = out_or(o, "data");
  SyntheticSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  Dataset train = gen_synthetic(spec);
  train.split_tag = "train";
  save_dataset(dir, train);
  if (cfg.test_per_class > 0) {
    spec.per_class = cfg.test_per_class;
    spec.seed = cfg.seed ^ 0x5bd1e995u;
    Dataset test = gen_synthetic(spec);
    test.split_tag = "test";
    save_dataset(dir, test);
  }
  emit(dir / "gen-synth.json", with_meta({{"train_images", train.size()}}, "gen-synth", cfg));
  return 0;
}

int cmd_pretext(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset train = load_split(o, "train");
  const fs::path out = out_or(o, "pretext.bwnt");
  Rng rng(cfg.seed);
  Encoder enc(cfg.channels);
  enc.init(rng);
  RotHead head(enc.out_dim(), cfg.rot_head_width > 0 ? cfg.rot_head_width : enc.out_dim());
  head.init(rng);
  const TrainReport rep = train_rotnet(train, enc, head, cfg.pretext, printer("pretext"));
  Checkpoint ckpt = enc.to_checkpoint();
  ckpt.merge(head.to_checkpoint());
  ckpt.save(out);
  write_text(sidecar(out, ".jsonl"), rep.jsonl());
  json body = {{"first_loss", rep.first_loss()}, {"final_loss", rep.last_loss()}};
  const fs::path test_file = fs::path(o.data) / "test.bwnt";
  if (fs::exists(test_file)) {
    const RotationEval ev = evaluate_rotation(enc, head, load_dataset(o.data, "test"));
    body["test_rotation_acc"] = ev.accuracy;
    body["test_rotation_loss"] = ev.loss;
  }
  emit(sidecar(out, ".json"), with_meta(body, "pretext", cfg));
  return 0;
}

int cmd_vocab(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset train = load_split(o, "train");
  const Encoder enc = load_encoder(o.encoder);
  const fs::path out = out_or(o, "vocab.bwnt");
  Rng rng(cfg.seed);
  KMeansResult report;
  const Vocabulary vocab = build_vocabulary(enc, train, cfg.vocab, rng, &report);
  vocab.to_checkpoint().save(out);
  emit(sidecar(out, ".json"),
       with_meta({{"k", vocab.size()}, {"tap", vocab.tap_layer}, {"iterations", report.iterations},
                  {"converged", report.converged}, {"objective", report.objective}},
                 "vocab", cfg));
  return 0;
}

int cmd_cache_bow(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset train = load_split(o, "train");
  const Encoder enc = load_encoder(o.encoder);
  const Vocabulary vocab = load_vocab(o.vocab);
  const fs::path out = out_or(o, "bow.bwc");
  const BowCache cache = build_bow_cache(enc, vocab, train, cfg.bow);
  cache.save(out);
  double entropy = 0.0;
  for (const auto& t : cache.targets) entropy += target_entropy(t);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cache.config_hash));
  emit(sidecar(out, ".json"),
       with_meta({{"records", cache.targets.size()}, {"cache_hash", hash},
                  {"mean_entropy", entropy / static_cast<double>(cache.targets.size())}},
                 "cache-bow", cfg));
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset train = load_split(o, "train");
  const Encoder base = load_encoder(o.encoder);
  const Vocabulary vocab = load_vocab(o.vocab);
  require(o.cache, "--cache");
  const BowCache cache = BowCache::load(o.cache, cfg.bow.levels());
  const fs::path out = out_or(o, "bownet.bwnt");
  TrainReport rep;
  const BowNetModel model = train_bownet(train, base, vocab, cache, cfg.bow, cfg.train, &rep, printer("train"));
  model.to_checkpoint().save(out);
  write_text(sidecar(out, ".jsonl"), rep.jsonl());
  json losses = json::array();
  for (const auto& e : rep.epochs) losses.push_back(e.loss);
  emit(sidecar(out, ".json"),
       with_meta({{"first_loss", rep.first_loss()}, {"final_loss", rep.last_loss()}, {"losses", losses},
                  {"gamma", model.heads.front().gamma()}},
                 "train", cfg));
  return 0;
}

int cmd_iterate(const Options& o) {
  const RunConfig cfg = resolve(o);
  require(o.data, "--data");
  const Dataset train = load_dataset(o.data, "train");
  const bool has_test = fs::exists(fs::path(o.data) / "test.bwnt") || o.split == "test";
  const fs::path dir = out_or(o, "iterate");
  Encoder first;
  if (cfg.base == BaseKind::kRandom) {
    Rng rng(cfg.seed);
    first = Encoder(cfg.channels);
    first.init(rng);
  } else {
    first = load_encoder(o.encoder);
  }
  RoundPlan plan;
  plan.rounds = cfg.rounds;
  plan.base = cfg.base;
  plan.random_pca_dim = cfg.random_pca_dim;
  plan.vocab_seed = cfg.seed;
  json rounds = json::array();
  std::optional<Dataset> test;
  if (has_test) test = load_dataset(o.data, "test");
  iterate_rounds(train, first, plan, cfg.vocab, cfg.bow, cfg.train, [&](int r, const RoundResult& res) {
    const std::string tag = "round" + std::to_string(r);
    res.model.to_checkpoint().save(dir / (tag + ".bwnt"));
    res.vocab.to_checkpoint().save(dir / (tag + "_vocab.bwnt"));
    write_text(dir / (tag + ".jsonl"), res.report.jsonl());
    json entry = {{"round", r}, {"final_loss", res.report.last_loss()}};
    if (test) entry["probe_acc"] = linear_probe(res.model.encoder, train, *test, cfg.probe).accuracy;
    rounds.push_back(entry);
    std::fprintf(stderr, "round %d done\n", r);
  });
  emit(dir / "iterate.json", with_meta({{"rounds", rounds}}, "iterate", cfg));
  return 0;
}

int cmd_probe(const Options& o) {
  const RunConfig cfg = resolve(o);
  require(o.data, "--data");
  const Encoder enc = load_encoder(o.encoder);
  const Dataset train = load_dataset(o.data, "train");
  const Dataset test = load_dataset(o.data, "test");
  const ProbeResult res = linear_probe(enc, train, test, cfg.probe);
  emit(o.out, with_meta(json::parse(res.to_json()), "probe", cfg));
  return 0;
}

int cmd_fewshot(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset ds = load_split(o, "test");
  const Encoder enc = load_encoder(o.encoder);
  const Tensor feats = extract_features(enc, ds);
  const std::vector<int> labels = ds.labels();
  json results = json::array();
  for (int n : cfg.fewshot_shots) {
    EpisodeConfig ec = cfg.fewshot;
    ec.shots = n;
    results.push_back(json::parse(fewshot_features(feats, labels, ec).to_json()));
  }
  emit(o.out, with_meta({{"results", results}}, "fewshot", cfg));
  return 0;
}

int cmd_export(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset ds = load_split(o, "train");
  const Encoder enc = load_encoder(o.encoder);
  const fs::path out = out_or(o, "features.csv");
  export_features(enc, ds, out);
  emit(sidecar(out, ".json"), with_meta({{"rows", ds.size()}, {"dim", enc.out_dim()}}, "export-features", cfg));
  return 0;
}

int cmd_words(const Options& o) {
  const RunConfig cfg = resolve(o);
  const Dataset ds = load_split(o, "train");
  const Encoder enc = load_encoder(o.encoder);
  const Vocabulary vocab = load_vocab(o.vocab);
  const fs::path dir = out_or(o, "words");
  std::vector<std::uint32_t> words = cfg.words;
  if (words.empty())
    for (int k = 0; k < vocab.size(); ++k) words.push_back(static_cast<std::uint32_t>(k));
  const auto files = dump_word_patches(enc, vocab, ds, words, cfg.words_per_word, dir);
  emit(dir / "words.json", with_meta({{"files", files.size()}}, "words", cfg));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised learning by predicting bags of visual words"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "JSON run configuration");
    s->add_option("--seed", o.seed, "Random seed");
    s->add_option("--out", o.out, "Output path");
  };
  auto epochs = [&](CLI::App* s) { s->add_option("--epochs", o.epochs, "Training epochs"); };
  auto data = [&](CLI::App* s) { s->add_option("--data", o.data, "Dataset directory"); };
  auto split = [&](CLI::App* s) { s->add_option("--split", o.split, "Dataset split (train|test)"); };
  auto encoder = [&](CLI::App* s) { s->add_option("--encoder", o.encoder, "Encoder checkpoint"); };
  auto vocab = [&](CLI::App* s) { s->add_option("--vocab", o.vocab, "Vocabulary checkpoint"); };
  auto vocab_opts = [&](CLI::App* s) {
    s->add_option("--k", o.k, "Vocabulary size");
    s->add_option("--tap", o.tap, "Encoder block feeding the vocabulary (1-based)");
  };
  auto bow_opts = [&](CLI::App* s) {
    s->add_option("--bow-mode", o.bow_mode, "count|binary")->check(CLI::IsMember({"count", "binary"}));
    s->add_flag("--pyramid", o.pyramid, "Spatial-pyramid targets");
  };
  auto train_opts = [&](CLI::App* s) {
    s->add_flag("--no-cutmix", o.no_cutmix, "Disable CutMix");
    s->add_flag("--predict-perturbed", o.predict_perturbed, "Predict the BoW of the perturbed image");
    s->add_flag("--plain-head", o.plain_head, "Plain linear prediction layer");
  };

  int (*run)(const Options&) = nullptr;
  auto sub = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* s = app.add_subcommand(name, help);
    s->callback([&run, fn] { run = fn; });
    common(s);
    return s;
  };

  CLI::App* gen = sub("gen-synth", "Generate the synthetic glyph dataset", cmd_gen_synth);
  gen->add_option("--classes", o.classes, "Number of classes");
  gen->add_option("--per-class", o.per_class, "Training images per class");
  gen->add_option("--test-per-class", o.test_per_class, "Test images per class");
  gen->add_option("--size", o.size, "Image side in pixels");
  gen->add_option("--jitter", o.jitter, "Nuisance strength in [0,1]");

  CLI::App* pre = sub("pretext", "Train an encoder on rotation prediction", cmd_pretext);
  data(pre), epochs(pre);

  CLI::App* voc = sub("vocab", "Build a visual-word vocabulary", cmd_vocab);
  data(voc), split(voc), encoder(voc), vocab_opts(voc);

  CLI::App* cb = sub("cache-bow", "Pre-compute BoW targets", cmd_cache_bow);
  data(cb), split(cb), encoder(cb), vocab(cb), bow_opts(cb);

  CLI::App* tr = sub("train", "Train an encoder to predict BoW targets", cmd_train);
  data(tr), split(tr), encoder(tr), vocab(tr), bow_opts(tr), train_opts(tr), epochs(tr);
  tr->add_option("--cache", o.cache, "BoW cache");

  CLI::App* it = sub("iterate", "Iterated BoW training", cmd_iterate);
  data(it), encoder(it), vocab_opts(it), bow_opts(it), train_opts(it), epochs(it);
  it->add_option("--rounds", o.rounds, "Number of rounds");
  it->add_option("--base", o.base, "rotnet|random")->check(CLI::IsMember({"rotnet", "random"}));

  CLI::App* pr = sub("probe", "Linear probe on frozen features", cmd_probe);
  data(pr), encoder(pr);

  CLI::App* fs_ = sub("fewshot", "Few-shot cosine-prototype evaluation", cmd_fewshot);
  data(fs_), split(fs_), encoder(fs_);

  CLI::App* ex = sub("export-features", "Write pooled features as CSV", cmd_export);
  data(ex), split(ex), encoder(ex);

  CLI::App* wd = sub("words", "Dump image patches of visual words", cmd_words);
  data(wd), split(wd), encoder(wd), vocab(wd);
  wd->add_option("--per-word", o.per_word, "Patches per word");
  wd->add_option("--words", o.words, "Word indices (default: all)")->delimiter(',');

  if (argc < 2) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    return run ? run(o) : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
