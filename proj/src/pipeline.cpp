#include "textpolicy/pipeline.hpp"

#include <json.hpp>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "textpolicy/edit_distance.hpp"
#include "textpolicy/errors.hpp"

namespace textpolicy {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

struct Paths {
  fs::path root, data, ck, reports;

  explicit Paths(const PipelineConfig& cfg)
      : root(cfg.out),
        data(root / "data"),
        ck(root / "ck"),
        reports(root / "reports") {}

  fs::path manifest() const { return root / "manifest.json"; }
  fs::path train() const { return data / "train.jsonl"; }
  fs::path test() const { return data / "test.jsonl"; }
  fs::path vocab() const { return data / "vocab.txt"; }
  fs::path repeat_ck() const { return ck / "repeat.ck"; }
  fs::path fluency_ck() const { return ck / "fluency.ck"; }
  fs::path stage_ck(int t) const {
    return ck / ("qf_stage" + std::to_string(t) + ".ck");
  }
  fs::path eval_ck() const { return ck / "eval_clf.ck"; }
  fs::path induction() const { return reports / "induction.json"; }
  fs::path train_refine(int t) const {
    return reports / ("train_refine_stage" + std::to_string(t) + ".jsonl");
  }
  fs::path refined(const std::string& variant) const {
    return data / ("test_refined_" + variant + ".jsonl");
  }
  fs::path refine_report(int t, const std::string& variant) const {
    return reports /
           ("refine_stage" + std::to_string(t) + "_" + variant + ".jsonl");
  }
  fs::path metrics(const std::string& variant) const {
    return reports / ("metrics_" + variant + ".json");
  }
  fs::path signal(const std::string& variant) const {
    return reports / ("signal_" + variant + ".json");
  }
};

std::string hex64(uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string fingerprint(const std::vector<std::string>& parts) {
  std::string joined;
  for (const auto& p : parts) {
    joined += p;
    joined += '\n';
  }
  return hex64(fnv1a(joined));
}

std::string num(double x) {
  std::ostringstream os;
  os.precision(12);
  os << x;
  return os.str();
}

// Test placement is the only thing the variant changes in generated data,
// and only one-stage changes it; base and tts share data and training.
std::string placement(const PipelineConfig& cfg) {
  return cfg.variant == "one-stage" ? "one-stage" : "uniform";
}

std::string fp_gen(const PipelineConfig& c) {
  return fingerprint({"gen", c.grammar, placement(c), num(c.stages),
                      num(c.x_per_combo), num(c.test_negatives), num(c.seed)});
}

std::string fp_repeat(const PipelineConfig& c) {
  const RepeatConfig& r = c.repeat;
  const RepeatTrainConfig& t = c.repeat_train;
  return fingerprint({"repeat", c.grammar, num(c.seed), num(c.repeat_corpus),
                      num(r.d_model), num(r.enc_layers), num(r.dec_layers),
                      num(r.heads), num(r.ffn_hidden), num(r.beam),
                      num(r.max_len), num(r.length_norm), num(t.lr),
                      num(t.batch), num(t.max_epochs), num(t.memory_noise),
                      num(t.target), num(t.holdout)});
}

std::string fp_fluency(const PipelineConfig& c) {
  const FluencyConfig& f = c.fluency;
  const FluencyTrainConfig& t = c.fluency_train;
  return fingerprint({"fluency", fp_gen(c), num(f.d_model), num(f.layers),
                      num(f.heads), num(f.ffn_hidden), num(t.lr), num(t.batch),
                      num(t.epochs)});
}

std::string fp_clf(const PipelineConfig& c) {
  const ClassifierConfig& k = c.clf;
  const ClassifierTrainConfig& t = c.clf_train;
  return fingerprint({"clf", num(k.layers), num(k.heads), num(k.ffn_hidden),
                      num(k.dropout), num(t.lr), num(t.batch), num(t.epochs),
                      num(t.input_noise), num(t.history_dropout),
                      num(t.history_noise), num(c.clf_decorrelate)});
}

std::string fp_ascent(const PipelineConfig& c) {
  return fingerprint({"ascent", num(c.ascent_eta), num(c.ascent_eta_later),
                      num(c.ascent_iters_stage1),
                      num(c.ascent_iters_later), c.selection});
}

std::string fp_q(const PipelineConfig& c) {
  std::vector<std::string> parts = {"q",         fp_gen(c),
                                    fp_repeat(c), fp_clf(c),
                                    fp_ascent(c), num(c.outcome_threshold)};
  if (c.selection == "nll-best") parts.push_back(fp_fluency(c));
  return fingerprint(parts);
}

std::string fp_refine(const PipelineConfig& c) {
  std::vector<std::string> parts = {"refine", fp_q(c), c.variant,
                                    c.refine_all ? "all" : "negatives"};
  if (c.variant == "tts") parts.push_back(num(c.tts_noise));
  if (c.selection == "nll-best") parts.push_back(fp_fluency(c));
  return fingerprint(parts);
}

std::string fp_eval(const PipelineConfig& c) {
  return fingerprint({"eval", fp_refine(c), fp_fluency(c), fp_clf(c)});
}

json load_manifest(const Paths& p) {
  if (!fs::exists(p.manifest()))
    return json{{"versions", {{"format", 1}}}, {"phases", json::object()}};
  std::ifstream in(p.manifest());
  json man;
  try {
    in >> man;
  } catch (const json::exception& e) {
    throw DataError("unreadable manifest " + p.manifest().string() + ": " +
                    e.what());
  }
  if (!man.contains("phases") || !man["phases"].is_object())
    throw DataError("manifest " + p.manifest().string() + " has no phases");
  return man;
}

void save_manifest(const Paths& p, const json& man) {
  fs::create_directories(p.root);
  fs::path tmp = p.manifest();
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << man.dump(2) << '\n';
  }
  fs::rename(tmp, p.manifest());
}

bool up_to_date(const json& man, const std::string& phase,
                const std::string& fp, const std::vector<fs::path>& artifacts) {
  if (!man["phases"].contains(phase)) return false;
  const json& e = man["phases"][phase];
  if (!e.contains("hash") || e["hash"] != fp) return false;
  for (const auto& a : artifacts)
    if (!fs::exists(a)) return false;
  return true;
}

void record(json& man, const std::string& phase, const std::string& fp,
            const std::vector<fs::path>& artifacts, const std::string& info,
            const json& extra = json::object()) {
  json arts = json::array();
  for (const auto& a : artifacts) arts.push_back(a.string());
  json e = {{"hash", fp},
            {"at", static_cast<int64_t>(::time(nullptr))},
            {"artifacts", arts},
            {"info", info}};
  for (auto it = extra.begin(); it != extra.end(); ++it) e[it.key()] = *it;
  man["phases"][phase] = e;
}

void require_phase(const json& man, const std::string& phase,
                   const std::string& needed_by) {
  if (!man["phases"].contains(phase))
    throw DataError(needed_by + " needs the " + phase +
                    " phase to run first");
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p))
    throw DataError("missing " + p.string() + "; run " + hint + " first");
}

SignalGrammar make_grammar(const PipelineConfig& cfg) {
  return SignalGrammar::standard(cfg.grammar == "two-pairs"
                                     ? SignalGrammar::Mode::TwoPairs
                                     : SignalGrammar::Mode::OnePair);
}

ClassifierConfig stage_clf_config(const PipelineConfig& cfg) {
  ClassifierConfig cc = cfg.clf;
  cc.d_model = cfg.repeat.d_model;
  return cc;
}

EncoderDecoderModel load_repeat(const PipelineConfig& cfg, const Paths& p,
                                int vocab_size) {
  require_file(p.repeat_ck(), "train-repeat");
  EncoderDecoderModel m(cfg.repeat, vocab_size,
                        SeededRng::derive(cfg.seed, 3));
  m.load(p.repeat_ck().string());
  return m;
}

std::optional<FluencyModel> load_fluency_if(bool wanted,
                                            const PipelineConfig& cfg,
                                            const Paths& p, int vocab_size) {
  std::optional<FluencyModel> fm;
  if (!wanted) return fm;
  require_file(p.fluency_ck(), "train-fluency");
  fm.emplace(cfg.fluency, vocab_size, SeededRng::derive(cfg.seed, 5));
  fm->load(p.fluency_ck().string());
  return fm;
}

ordered_json refine_row(const std::string& id, int stage,
                        const std::string& original, const RefineOutcome& out) {
  ordered_json r;
  r["id"] = id;
  r["stage"] = stage;
  r["original"] = original;
  r["refined"] = out.action;
  r["p_before"] = static_cast<double>(out.p_before);
  r["p_after"] = static_cast<double>(out.p_after);
  r["nll"] = static_cast<double>(out.nll);
  r["edit_distance"] = edit_distance(original, out.action);
  r["iterations"] = out.iterations;
  r["flags"] = out.flags;
  return r;
}

void write_jsonl(const fs::path& path, const std::vector<ordered_json>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

// Stages a refinement pass touches: negative-labeled ones, or every stage
// when refine_all is set.
bool stage_refined(const PipelineConfig& cfg, const Stage& st) {
  return cfg.refine_all || (st.label && *st.label == 0);
}

}  // namespace

void validate_config(const PipelineConfig& cfg) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (cfg.out.empty()) fail("out directory is empty");
  if (cfg.grammar != "one-pair" && cfg.grammar != "two-pairs")
    fail("grammar must be one-pair or two-pairs, got " + cfg.grammar);
  if (cfg.variant != "base" && cfg.variant != "tts" &&
      cfg.variant != "one-stage")
    fail("variant must be base, tts or one-stage, got " + cfg.variant);
  if (cfg.selection != "last-iterate" && cfg.selection != "nll-best")
    fail("selection must be last-iterate or nll-best, got " + cfg.selection);
  if (cfg.stages < 1) fail("stages must be at least 1");
  if (cfg.x_per_combo < 1) fail("x_per_combo must be positive");
  if (cfg.test_negatives < 1) fail("test_negatives must be positive");
  if (cfg.outcome_threshold > cfg.stages)
    fail("outcome_threshold cannot exceed the stage count");
  if (cfg.repeat_corpus < 10) fail("repeat_corpus is too small");

  const RepeatConfig& r = cfg.repeat;
  if (r.d_model < 1 || r.enc_layers < 1 || r.dec_layers < 1 || r.heads < 1 ||
      r.ffn_hidden < 1 || r.beam < 1 || r.max_len < 4)
    fail("repeat architecture fields must be positive");
  if (r.d_model % r.heads != 0) fail("repeat_heads must divide repeat_d_model");
  if (!(cfg.repeat_train.lr > 0) || cfg.repeat_train.batch < 1 ||
      cfg.repeat_train.max_epochs < 1)
    fail("repeat training fields must be positive");
  if (!(cfg.repeat_train.target > 0 && cfg.repeat_train.target <= 1))
    fail("repeat_target must be in (0, 1]");
  if (cfg.repeat_train.memory_noise < 0) fail("repeat_memory_noise is negative");
  if (cfg.repeat_train.holdout < 1) fail("repeat_holdout must be positive");

  const FluencyConfig& f = cfg.fluency;
  if (f.d_model < 1 || f.layers < 1 || f.heads < 1 || f.ffn_hidden < 1)
    fail("fluency architecture fields must be positive");
  if (f.d_model % f.heads != 0)
    fail("fluency_heads must divide fluency_d_model");
  if (!(cfg.fluency_train.lr > 0) || cfg.fluency_train.batch < 1 ||
      cfg.fluency_train.epochs < 1)
    fail("fluency training fields must be positive");

  const ClassifierConfig& k = cfg.clf;
  if (k.layers < 1 || k.heads < 1 || k.ffn_hidden < 1)
    fail("classifier architecture fields must be positive");
  if (cfg.repeat.d_model % k.heads != 0)
    fail("clf_heads must divide repeat_d_model");
  if (!(k.dropout >= 0 && k.dropout < 1)) fail("clf_dropout must be in [0, 1)");
  if (!(cfg.clf_train.lr > 0) || cfg.clf_train.batch < 1 ||
      cfg.clf_train.epochs < 1)
    fail("classifier training fields must be positive");
  if (cfg.clf_train.input_noise < 0) fail("clf_input_noise is negative");
  if (!(cfg.clf_train.history_dropout >= 0 && cfg.clf_train.history_dropout < 1))
    fail("clf_history_dropout must be in [0, 1)");
  if (cfg.clf_train.history_noise < 0) fail("clf_history_noise is negative");

  if (!(cfg.ascent_eta > 0) || !(cfg.ascent_eta_later > 0))
    fail("ascent_eta must be positive");
  if (cfg.ascent_iters_stage1 < 0 || cfg.ascent_iters_later < 0)
    fail("ascent iteration counts cannot be negative");
  if (cfg.tts_noise < 0) fail("tts_noise is negative");
}

std::string config_json(const PipelineConfig& c) {
  json j;
  j["out"] = c.out;
  j["grammar"] = c.grammar;
  j["variant"] = c.variant;
  j["stages"] = c.stages;
  j["x_per_combo"] = c.x_per_combo;
  j["test_negatives"] = c.test_negatives;
  j["outcome_threshold"] = c.outcome_threshold;
  j["seed"] = c.seed;
  j["repeat_corpus"] = c.repeat_corpus;
  j["repeat_d_model"] = c.repeat.d_model;
  j["repeat_enc_layers"] = c.repeat.enc_layers;
  j["repeat_dec_layers"] = c.repeat.dec_layers;
  j["repeat_heads"] = c.repeat.heads;
  j["repeat_ffn_hidden"] = c.repeat.ffn_hidden;
  j["repeat_beam"] = c.repeat.beam;
  j["repeat_max_len"] = c.repeat.max_len;
  j["repeat_length_norm"] = c.repeat.length_norm;
  j["repeat_lr"] = c.repeat_train.lr;
  j["repeat_batch"] = c.repeat_train.batch;
  j["repeat_epochs"] = c.repeat_train.max_epochs;
  j["repeat_memory_noise"] = c.repeat_train.memory_noise;
  j["repeat_target"] = c.repeat_train.target;
  j["repeat_holdout"] = c.repeat_train.holdout;
  j["fluency_d_model"] = c.fluency.d_model;
  j["fluency_layers"] = c.fluency.layers;
  j["fluency_heads"] = c.fluency.heads;
  j["fluency_ffn_hidden"] = c.fluency.ffn_hidden;
  j["fluency_lr"] = c.fluency_train.lr;
  j["fluency_batch"] = c.fluency_train.batch;
  j["fluency_epochs"] = c.fluency_train.epochs;
  j["clf_layers"] = c.clf.layers;
  j["clf_heads"] = c.clf.heads;
  j["clf_ffn_hidden"] = c.clf.ffn_hidden;
  j["clf_dropout"] = c.clf.dropout;
  j["clf_lr"] = c.clf_train.lr;
  j["clf_batch"] = c.clf_train.batch;
  j["clf_epochs"] = c.clf_train.epochs;
  j["clf_input_noise"] = c.clf_train.input_noise;
  j["clf_history_dropout"] = c.clf_train.history_dropout;
  j["clf_history_noise"] = c.clf_train.history_noise;
  j["ascent_eta"] = c.ascent_eta;
  j["ascent_eta_later"] = c.ascent_eta_later;
  j["ascent_iters_stage1"] = c.ascent_iters_stage1;
  j["ascent_iters_later"] = c.ascent_iters_later;
  j["selection"] = c.selection;
  j["tts_noise"] = c.tts_noise;
  j["refine_all"] = c.refine_all;
  j["clf_decorrelate"] = c.clf_decorrelate;
  return j.dump(2);
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + " must be an object");

  PipelineConfig c;
  auto str = [&](const json& v, const char* key) -> std::string {
    if (!v.is_string())
      throw ConfigError(std::string("config key ") + key + " must be a string");
    return v.get<std::string>();
  };
  auto integer = [&](const json& v, const char* key) -> int64_t {
    if (!v.is_number_integer())
      throw ConfigError(std::string("config key ") + key +
                        " must be an integer");
    return v.get<int64_t>();
  };
  auto real = [&](const json& v, const char* key) -> double {
    if (!v.is_number())
      throw ConfigError(std::string("config key ") + key + " must be a number");
    return v.get<double>();
  };
  auto boolean = [&](const json& v, const char* key) -> bool {
    if (!v.is_boolean())
      throw ConfigError(std::string("config key ") + key + " must be a bool");
    return v.get<bool>();
  };

  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = *it;
    if (k == "out") c.out = str(v, "out");
    else if (k == "grammar") c.grammar = str(v, "grammar");
    else if (k == "variant") c.variant = str(v, "variant");
    else if (k == "stages") c.stages = static_cast<int>(integer(v, "stages"));
    else if (k == "x_per_combo") c.x_per_combo = static_cast<int>(integer(v, "x_per_combo"));
    else if (k == "test_negatives") c.test_negatives = static_cast<int>(integer(v, "test_negatives"));
    else if (k == "outcome_threshold") c.outcome_threshold = static_cast<int>(integer(v, "outcome_threshold"));
    else if (k == "seed") {
      if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ConfigError("config key seed must be an integer");
      c.seed = v.get<uint64_t>();
    }
    else if (k == "repeat_corpus") c.repeat_corpus = static_cast<int>(integer(v, "repeat_corpus"));
    else if (k == "repeat_d_model") c.repeat.d_model = static_cast<int>(integer(v, "repeat_d_model"));
    else if (k == "repeat_enc_layers") c.repeat.enc_layers = static_cast<int>(integer(v, "repeat_enc_layers"));
    else if (k == "repeat_dec_layers") c.repeat.dec_layers = static_cast<int>(integer(v, "repeat_dec_layers"));
    else if (k == "repeat_heads") c.repeat.heads = static_cast<int>(integer(v, "repeat_heads"));
    else if (k == "repeat_ffn_hidden") c.repeat.ffn_hidden = static_cast<int>(integer(v, "repeat_ffn_hidden"));
    else if (k == "repeat_beam") c.repeat.beam = static_cast<int>(integer(v, "repeat_beam"));
    else if (k == "repeat_max_len") c.repeat.max_len = static_cast<int>(integer(v, "repeat_max_len"));
    else if (k == "repeat_length_norm") c.repeat.length_norm = static_cast<float>(real(v, "repeat_length_norm"));
    else if (k == "repeat_lr") c.repeat_train.lr = static_cast<float>(real(v, "repeat_lr"));
    else if (k == "repeat_batch") c.repeat_train.batch = static_cast<int>(integer(v, "repeat_batch"));
    else if (k == "repeat_epochs") c.repeat_train.max_epochs = static_cast<int>(integer(v, "repeat_epochs"));
    else if (k == "repeat_memory_noise") c.repeat_train.memory_noise = static_cast<float>(real(v, "repeat_memory_noise"));
    else if (k == "repeat_target") c.repeat_train.target = real(v, "repeat_target");
    else if (k == "repeat_holdout") c.repeat_train.holdout = static_cast<int>(integer(v, "repeat_holdout"));
    else if (k == "fluency_d_model") c.fluency.d_model = static_cast<int>(integer(v, "fluency_d_model"));
    else if (k == "fluency_layers") c.fluency.layers = static_cast<int>(integer(v, "fluency_layers"));
    else if (k == "fluency_heads") c.fluency.heads = static_cast<int>(integer(v, "fluency_heads"));
    else if (k == "fluency_ffn_hidden") c.fluency.ffn_hidden = static_cast<int>(integer(v, "fluency_ffn_hidden"));
    else if (k == "fluency_lr") c.fluency_train.lr = static_cast<float>(real(v, "fluency_lr"));
    else if (k == "fluency_batch") c.fluency_train.batch = static_cast<int>(integer(v, "fluency_batch"));
    else if (k == "fluency_epochs") c.fluency_train.epochs = static_cast<int>(integer(v, "fluency_epochs"));
    else if (k == "clf_layers") c.clf.layers = static_cast<int>(integer(v, "clf_layers"));
    else if (k == "clf_heads") c.clf.heads = static_cast<int>(integer(v, "clf_heads"));
    else if (k == "clf_ffn_hidden") c.clf.ffn_hidden = static_cast<int>(integer(v, "clf_ffn_hidden"));
    else if (k == "clf_dropout") c.clf.dropout = static_cast<float>(real(v, "clf_dropout"));
    else if (k == "clf_lr") c.clf_train.lr = static_cast<float>(real(v, "clf_lr"));
    else if (k == "clf_batch") c.clf_train.batch = static_cast<int>(integer(v, "clf_batch"));
    else if (k == "clf_epochs") c.clf_train.epochs = static_cast<int>(integer(v, "clf_epochs"));
    else if (k == "clf_input_noise") c.clf_train.input_noise = static_cast<float>(real(v, "clf_input_noise"));
    else if (k == "clf_history_dropout") c.clf_train.history_dropout = static_cast<float>(real(v, "clf_history_dropout"));
    else if (k == "clf_history_noise") c.clf_train.history_noise = static_cast<float>(real(v, "clf_history_noise"));
    else if (k == "ascent_eta") c.ascent_eta = static_cast<float>(real(v, "ascent_eta"));
    else if (k == "ascent_eta_later") c.ascent_eta_later = static_cast<float>(real(v, "ascent_eta_later"));
    else if (k == "ascent_iters_stage1") c.ascent_iters_stage1 = static_cast<int>(integer(v, "ascent_iters_stage1"));
    else if (k == "ascent_iters_later") c.ascent_iters_later = static_cast<int>(integer(v, "ascent_iters_later"));
    else if (k == "selection") c.selection = str(v, "selection");
    else if (k == "tts_noise") c.tts_noise = static_cast<float>(real(v, "tts_noise"));
    else if (k == "refine_all") c.refine_all = boolean(v, "refine_all");
    else if (k == "clf_decorrelate") c.clf_decorrelate = boolean(v, "clf_decorrelate");
    else throw ConfigError("unknown config key: " + k);
  }
  validate_config(c);
  return c;
}

PhaseResult cmd_gen_data(const PipelineConfig& cfg, bool force) {
  validate_config(cfg);
  Paths p(cfg);
  fs::create_directories(p.data);
  json man = load_manifest(p);
  std::string fp = fp_gen(cfg);
  std::vector<fs::path> arts = {p.train(), p.test(), p.vocab()};
  if (!force && up_to_date(man, "gen-data", fp, arts))
    return {true, "gen-data: up to date, skipped"};

  SignalGrammar g = make_grammar(cfg);
  Vocabulary v = build_vocab(g.word_list());
  SeededRng train_rng(SeededRng::derive(cfg.seed, 1));
  SeededRng test_rng(SeededRng::derive(cfg.seed, 2));
  auto train = assemble_trajectories(g, cfg.stages, cfg.x_per_combo, train_rng);
  auto test = make_test_trajectories(g, cfg.stages, cfg.test_negatives,
                                     cfg.variant, test_rng);
  write_trajectories(p.train().string(), train);
  write_trajectories(p.test().string(), test);
  v.save(p.vocab().string());

  std::string info = "train " + std::to_string(train.size()) + " rows, test " +
                     std::to_string(test.size()) + " rows, vocab " +
                     std::to_string(v.size());
  record(man, "gen-data", fp, arts, info);
  save_manifest(p, man);
  return {false, "gen-data: " + info};
}

PhaseResult cmd_train_repeat(const PipelineConfig& cfg, bool force) {
  validate_config(cfg);
  Paths p(cfg);
  json man = load_manifest(p);
  require_phase(man, "gen-data", "train-repeat");
  fs::create_directories(p.ck);
  std::string fp = fp_repeat(cfg);
  std::vector<fs::path> arts = {p.repeat_ck()};
  if (!force && up_to_date(man, "train-repeat", fp, arts))
    return {true, "train-repeat: up to date, skipped"};

  SignalGrammar g = make_grammar(cfg);
  Vocabulary v = build_vocab(g.word_list());
  SeededRng corpus_rng(SeededRng::derive(cfg.seed, 9));
  auto pairs = make_repeat_corpus(g, v, cfg.repeat_corpus, corpus_rng);
  EncoderDecoderModel m(cfg.repeat, v.size(), SeededRng::derive(cfg.seed, 3));
  RepeatTrainConfig tc = cfg.repeat_train;
  tc.seed = SeededRng::derive(cfg.seed, 4);
  RepeatTrainStats st = train_repeat(m, std::move(pairs), tc);
  m.save(p.repeat_ck().string());

  std::string info = "reconstruction " + num(st.holdout_exact) + " after " +
                     std::to_string(st.epochs) + " epochs";
  record(man, "train-repeat", fp, arts, info,
         {{"holdout_exact", st.holdout_exact}, {"epochs", st.epochs}});
  save_manifest(p, man);
  return {false, "train-repeat: " + info};
}

PhaseResult cmd_train_fluency(const PipelineConfig& cfg, bool force) {
  validate_config(cfg);
  Paths p(cfg);
  json man = load_manifest(p);
  require_phase(man, "gen-data", "train-fluency");
  require_file(p.train(), "gen-data");
  fs::create_directories(p.ck);
  std::string fp = fp_fluency(cfg);
  std::vector<fs::path> arts = {p.fluency_ck()};
  if (!force && up_to_date(man, "train-fluency", fp, arts))
    return {true, "train-fluency: up to date, skipped"};

  SignalGrammar g = make_grammar(cfg);
  Vocabulary v = build_vocab(g.word_list());
  auto train = read_trajectories(p.train().string());
  std::vector<std::vector<int>> texts;
  for (const auto& traj : train)
    for (const auto& st : traj.stages) texts.push_back(tokenize(st.source, v));
  FluencyModel fm(cfg.fluency, v.size(), SeededRng::derive(cfg.seed, 5));
  FluencyTrainConfig tc = cfg.fluency_train;
  tc.seed = SeededRng::derive(cfg.seed, 6);
  double mean_nll = train_fluency(fm, std::move(texts), tc);
  fm.save(p.fluency_ck().string());

  std::string info = "train mean nll " + num(mean_nll);
  record(man, "train-fluency", fp, arts, info, {{"mean_nll", mean_nll}});
  save_manifest(p, man);
  return {false, "train-fluency: " + info};
}

PhaseResult cmd_train_q(const PipelineConfig& cfg, bool force) {
  validate_config(cfg);
  Paths p(cfg);
  json man = load_manifest(p);
  require_phase(man, "gen-data", "train-q");
  require_phase(man, "train-repeat", "train-q");
  require_phase(man, "train-fluency", "train-q");
  require_file(p.train(), "gen-data");
  fs::create_directories(p.reports);
  std::string fp = fp_q(cfg);
  std::vector<fs::path> arts = {p.induction()};
  for (int t = 1; t <= cfg.stages; ++t) {
    arts.push_back(p.stage_ck(t));
    arts.push_back(p.train_refine(t));
  }
  if (!force && up_to_date(man, "train-q", fp, arts))
    return {true, "train-q: up to date, skipped"};

  SignalGrammar g = make_grammar(cfg);
  Vocabulary v = build_vocab(g.word_list());
  EncoderDecoderModel m = load_repeat(cfg, p, v.size());
  bool nll_best = cfg.selection == "nll-best";
  std::optional<FluencyModel> fm = load_fluency_if(nll_best, cfg, p, v.size());
  auto data = read_trajectories(p.train().string());

  InductionConfig ic;
  ic.outcome_threshold = cfg.outcome_threshold;
  ic.clf = stage_clf_config(cfg);
  ic.fit = cfg.clf_train;
  ic.decorrelate_source = cfg.clf_decorrelate;
  ic.seed = cfg.seed;

  std::vector<ordered_json> rows;
  ActionRefiner refiner = [&](StageClassifier& clf, const std::string& h,
                              const std::string& a, uint64_t row_seed) {
    AscentConfig ac;
    ac.iterations =
        h.empty() ? cfg.ascent_iters_stage1 : cfg.ascent_iters_later;
    ac.eta = h.empty() ? cfg.ascent_eta : cfg.ascent_eta_later;
    ac.nll_best = nll_best;
    ac.seed = row_seed;
    RefineOutcome out =
        refine_action(m, v, clf, h, a, ac, fm ? &*fm : nullptr);
    rows.push_back(refine_row(data[rows.size()].id, 0, a, out));
    return out;
  };
  auto on_stage = [&](int t, StageClassifier& clf) {
    clf.save(p.stage_ck(t).string());
    for (auto& r : rows) r["stage"] = t;
    write_jsonl(p.train_refine(t), rows);
    rows.clear();
  };
  InductionResult res = run_backward_induction(m, v, data, ic, refiner, on_stage);

  json stage_order = json::array();
  for (int t = cfg.stages; t >= 1; --t) stage_order.push_back(t);
  ordered_json rep;
  rep["stage_order"] = stage_order;
  rep["stages"] = ordered_json::array();
  for (const auto& s : res.stats) {
    ordered_json e;
    e["stage"] = s.stage;
    e["fit_loss"] = s.fit_loss;
    e["fit_acc"] = s.fit_acc;
    e["mean_before"] = s.mean_before;
    e["mean_after"] = s.mean_after;
    e["improved"] = s.improved;
    e["unchanged"] = s.unchanged;
    rep["stages"].push_back(e);
  }
  {
    std::ofstream out(p.induction());
    out << rep.dump(2) << '\n';
  }

  std::ostringstream info;
  info << "stages";
  for (int t = cfg.stages; t >= 1; --t) info << " " << t;
  for (const auto& s : res.stats)
    info << "; stage " << s.stage << " acc " << num(s.fit_acc) << " mean "
         << num(s.mean_before) << " -> " << num(s.mean_after);
  record(man, "train-q", fp, arts, info.str(), {{"stage_order", stage_order}});
  save_manifest(p, man);
  return {false, "train-q: " + info.str()};
}

PhaseResult cmd_refine(const PipelineConfig& cfg, bool force) {
  validate_config(cfg);
  Paths p(cfg);
  json man = load_manifest(p);
  require_phase(man, "train-q", "refine");
  require_file(p.test(), "gen-data");
  fs::create_directories(p.reports);
  std::string fp = fp_refine(cfg);
  std::vector<fs::path> arts = {p.refined(cfg.variant)};
  for (int t = 1; t <= cfg.stages; ++t)
    arts.push_back(p.refine_report(t, cfg.variant));
  if (!force && up_to_date(man, "refine", fp, arts))
    return {true, "refine: up to date, skipped"};

  SignalGrammar g = make_grammar(cfg);
  Vocabulary v = build_vocab(g.word_list());
  EncoderDecoderModel m = load_repeat(cfg, p, v.size());
  bool nll_best = cfg.selection == "nll-best";
  std::optional<FluencyModel> fm = load_fluency_if(nll_best, cfg, p, v.size());
  std::vector<std::unique_ptr<StageClassifier>> clfs;
  for (int t = 1; t <= cfg.stages; ++t) {
    require_file(p.stage_ck(t), "train-q");
    clfs.push_back(std::make_unique<StageClassifier>(
        stage_clf_config(cfg), SeededRng::derive(cfg.seed, 16 + t),
        "qf/stage" + std::to_string(t)));
    clfs.back()->load(p.stage_ck(t).string());
  }

  auto test = read_trajectories(p.test().string());
  std::vector<std::vector<ordered_json>> reports(cfg.stages);
  int refined_count = 0, failed = 0;
  for (auto& traj : test) {
    for (int t = 1; t <= cfg.stages; ++t) {
      Stage& st = traj.stages[t - 1];
      if (!stage_refined(cfg, st)) continue;
      std::string history = History{&traj, t}.flatten();
      AscentConfig ac;
      ac.iterations =
          t == 1 ? cfg.ascent_iters_stage1 : cfg.ascent_iters_later;
      ac.eta = t == 1 ? cfg.ascent_eta : cfg.ascent_eta_later;
      ac.nll_best = nll_best;
      ac.seed = SeededRng::derive(SeededRng::derive(cfg.seed, 96 + t),
                                  fnv1a(traj.id));
      FluencyModel* flp = fm ? &*fm : nullptr;
      RefineOutcome out;
      try {
        out = cfg.variant == "tts"
                  ? tts_refine(m, v, *clfs[t - 1], history, st.action, ac,
                               cfg.tts_noise, flp)
                  : refine_action(m, v, *clfs[t - 1], history, st.action, ac,
                                  flp);
      } catch (const Error& e) {
        out = RefineOutcome{};
        out.action = st.action;
        out.flags = {"error"};
        ++failed;
      }
      reports[t - 1].push_back(refine_row(traj.id, t, st.action, out));
      st.action = out.action;
      ++refined_count;
    }
  }
  write_trajectories(p.refined(cfg.variant).string(), test);
  for (int t = 1; t <= cfg.stages; ++t)
    write_jsonl(p.refine_report(t, cfg.variant), reports[t - 1]);

  std::string info = cfg.variant + ": refined " +
                     std::to_string(refined_count) + " stage actions across " +
                     std::to_string(test.size()) + " rows" +
                     (failed ? ", " + std::to_string(failed) + " failed" : "");
  record(man, "refine", fp, arts, info);
  save_manifest(p, man);
  return {false, "refine: " + info};
}

PhaseResult cmd_eval(const PipelineConfig& cfg, bool force) {
  validate_config(cfg);
  Paths p(cfg);
  json man = load_manifest(p);
  require_phase(man, "refine", "eval");
  require_file(p.refined(cfg.variant), "refine");
  require_file(p.train(), "gen-data");
  fs::create_directories(p.reports);
  std::string fp = fp_eval(cfg);
  std::vector<fs::path> arts = {p.metrics(cfg.variant), p.signal(cfg.variant)};
  if (!force && up_to_date(man, "eval", fp, arts))
    return {true, "eval: up to date, skipped"};

  SignalGrammar g = make_grammar(cfg);
  Vocabulary v = build_vocab(g.word_list());
  EncoderDecoderModel m = load_repeat(cfg, p, v.size());
  std::optional<FluencyModel> fm = load_fluency_if(true, cfg, p, v.size());

  auto originals_rows = read_trajectories(p.test().string());
  auto refined_rows = read_trajectories(p.refined(cfg.variant).string());
  if (originals_rows.size() != refined_rows.size())
    throw DataError("refined file row count differs from the test set");

  std::vector<std::string> originals, outputs;
  for (size_t i = 0; i < originals_rows.size(); ++i)
    for (int t = 1; t <= cfg.stages; ++t) {
      const Stage& orig = originals_rows[i].stages[t - 1];
      if (!stage_refined(cfg, orig)) continue;
      originals.push_back(orig.action);
      outputs.push_back(refined_rows[i].stages[t - 1].action);
    }
  if (outputs.empty()) throw DataError("no refined stages to evaluate");

  // The evaluation classifier is trained once and shared across variants.
  // Its checkpoint is fingerprint-guarded like any phase artifact: one left
  // behind by a different config or seed is retrained, not loaded.
  std::string judge_fp =
      fingerprint({"eval-clf", fp_gen(cfg), fp_repeat(cfg), fp_clf(cfg)});
  ClassifierConfig ecc = stage_clf_config(cfg);
  std::optional<StageClassifier> eval_clf;
  if (up_to_date(man, "eval-clf", judge_fp, {p.eval_ck()})) {
    eval_clf.emplace(ecc, SeededRng::derive(cfg.seed, 7), "eval/clf");
    eval_clf->load(p.eval_ck().string());
  } else {
    auto train = read_trajectories(p.train().string());
    // Single-sentence inputs have no history block to blank or corrupt.
    ClassifierTrainConfig etrain = cfg.clf_train;
    etrain.history_dropout = 0.0f;
    etrain.history_noise = 0.0f;
    eval_clf.emplace(train_eval_classifier(m, v, train, ecc, etrain, cfg.seed));
    eval_clf->save(p.eval_ck().string());
    record(man, "eval-clf", judge_fp, {p.eval_ck()}, "evaluation classifier");
    save_manifest(p, man);
  }

  float strength = transfer_strength(outputs, *eval_clf, m, v);
  float sim = similarity(originals, outputs, m, v);
  int skipped = 0;
  float flu = fluency(outputs, *fm, v, &skipped);
  Aggregate agg = aggregate(sim, strength, flu);
  SignalReport sig = signal_accuracy(outputs, g);

  ordered_json mj;
  mj["similarity"] = static_cast<double>(sim);
  mj["strength"] = static_cast<double>(strength);
  mj["fluency"] = static_cast<double>(flu);
  mj["gm"] = static_cast<double>(agg.gm);
  mj["hm"] = static_cast<double>(agg.hm);
  mj["n"] = static_cast<int>(outputs.size());
  if (skipped > 0) mj["skipped_empty"] = skipped;
  {
    std::ofstream out(p.metrics(cfg.variant));
    out << mj.dump(2) << '\n';
  }
  ordered_json sj;
  sj["converted"] = static_cast<double>(sig.converted);
  sj["deleted"] = static_cast<double>(sig.deleted);
  sj["n"] = sig.n;
  {
    std::ofstream out(p.signal(cfg.variant));
    out << sj.dump(2) << '\n';
  }

  std::ostringstream info;
  info.precision(4);
  info << std::fixed << cfg.variant << ": similarity " << sim << " strength "
       << strength << " fluency " << flu << " gm " << agg.gm << " hm "
       << agg.hm << " | converted " << sig.converted << " deleted "
       << sig.deleted << " (n " << outputs.size() << ")";
  record(man, "eval", fp, arts, info.str());
  save_manifest(p, man);
  return {false, "eval: " + info.str()};
}

std::string cmd_report(const PipelineConfig& cfg) {
  validate_config(cfg);
  Paths p(cfg);
  std::ostringstream out;
  bool any = false;
  if (fs::exists(p.induction())) {
    std::ifstream in(p.induction());
    json rep;
    in >> rep;
    out << "induction:\n";
    for (const auto& s : rep["stages"]) {
      out << "  stage " << s["stage"] << ": fit acc " << s["fit_acc"]
          << ", pseudo-outcome " << s["mean_before"] << " -> "
          << s["mean_after"] << " (improved " << s["improved"] << ")\n";
    }
    any = true;
  }
  for (const char* variant : {"base", "tts", "one-stage"}) {
    if (!fs::exists(p.metrics(variant))) continue;
    std::ifstream in(p.metrics(variant));
    json mj;
    in >> mj;
    out << variant << ": similarity " << mj["similarity"] << ", strength "
        << mj["strength"] << ", fluency " << mj["fluency"] << ", gm "
        << mj["gm"] << ", hm " << mj["hm"] << " (n " << mj["n"] << ")\n";
    if (fs::exists(p.signal(variant))) {
      std::ifstream sin(p.signal(variant));
      json sj;
      sin >> sj;
      out << variant << " signals: converted " << sj["converted"]
          << ", deleted " << sj["deleted"] << "\n";
    }
    any = true;
  }
  if (!any)
    throw DataError("no reports yet under " + p.reports.string() +
                    "; run the pipeline first");
  return out.str();
}

std::vector<std::string> run_all(const PipelineConfig& cfg, bool force) {
  std::vector<std::string> messages;
  messages.push_back(cmd_gen_data(cfg, force).message);
  messages.push_back(cmd_train_repeat(cfg, force).message);
  messages.push_back(cmd_train_fluency(cfg, force).message);
  messages.push_back(cmd_train_q(cfg, force).message);
  messages.push_back(cmd_refine(cfg, force).message);
  messages.push_back(cmd_eval(cfg, force).message);
  return messages;
}

}  // namespace textpolicy
