#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "textpolicy/errors.hpp"
#include "textpolicy/metrics.hpp"
#include "textpolicy/pipeline.hpp"

using namespace textpolicy;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Small enough to run the whole chain in seconds; the trained models are
// weak, which the assertions here never rely on.
PipelineConfig tiny_config(const std::string& out) {
  PipelineConfig c;
  c.out = out;
  c.x_per_combo = 8;
  c.test_negatives = 6;
  c.seed = 77;
  c.repeat_corpus = 300;
  c.repeat.d_model = 32;
  c.repeat.enc_layers = 1;
  c.repeat.dec_layers = 1;
  c.repeat.heads = 2;
  c.repeat.ffn_hidden = 64;
  c.repeat_train.max_epochs = 10;
  c.repeat_train.target = 0.90;
  c.repeat_train.holdout = 40;
  c.fluency.d_model = 32;
  c.fluency.layers = 1;
  c.fluency.heads = 2;
  c.fluency.ffn_hidden = 64;
  c.fluency_train.epochs = 2;
  c.clf.layers = 1;
  c.clf.heads = 2;
  c.clf.ffn_hidden = 64;
  c.clf_train.epochs = 6;
  c.clf_train.input_noise = 0.3f;
  c.clf_train.history_dropout = 0.0f;
  c.clf_train.history_noise = 0.0f;
  c.ascent_eta = 3.5f;
  c.ascent_eta_later = 3.5f;
  c.ascent_iters_stage1 = 3;
  c.ascent_iters_later = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("config json round trip") {
  PipelineConfig c = tiny_config("/tmp/pipetest/none");
  c.grammar = "two-pairs";
  c.selection = "nll-best";
  c.refine_all = true;
  c.ascent_eta = 1.25f;
  fs::create_directories("/tmp/pipetest");
  {
    std::ofstream out("/tmp/pipetest/cfg.json");
    out << config_json(c);
  }
  PipelineConfig back = load_config("/tmp/pipetest/cfg.json");
  CHECK(config_json(back) == config_json(c));
  CHECK(back.grammar == "two-pairs");
  CHECK(back.repeat.d_model == 32);
  CHECK(back.clf_train.input_noise == doctest::Approx(0.3f));
  CHECK(back.refine_all);
}

TEST_CASE("config rejects unknown keys, bad types and bad values") {
  auto write = [](const std::string& body) {
    std::ofstream out("/tmp/pipetest/bad.json");
    out << body;
  };
  fs::create_directories("/tmp/pipetest");
  write("{\"granmar\": \"one-pair\"}");
  CHECK_THROWS_AS(load_config("/tmp/pipetest/bad.json"), ConfigError);
  write("{\"stages\": \"two\"}");
  CHECK_THROWS_AS(load_config("/tmp/pipetest/bad.json"), ConfigError);
  write("not json at all");
  CHECK_THROWS_AS(load_config("/tmp/pipetest/bad.json"), ConfigError);
  write("{\"variant\": \"both\"}");
  CHECK_THROWS_AS(load_config("/tmp/pipetest/bad.json"), ConfigError);
  write("{\"ascent_eta\": -1.0}");
  CHECK_THROWS_AS(load_config("/tmp/pipetest/bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config("/tmp/pipetest/missing.json"), ConfigError);

  PipelineConfig c;
  c.repeat.heads = 3;  // does not divide 128
  CHECK_THROWS_AS(validate_config(c), ConfigError);
}

TEST_CASE("phases demand their prerequisites") {
  PipelineConfig c = tiny_config("/tmp/pipetest/empty");
  fs::remove_all(c.out);
  CHECK_THROWS_AS(cmd_train_repeat(c), DataError);
  CHECK_THROWS_AS(cmd_train_q(c), DataError);
  CHECK_THROWS_AS(cmd_refine(c), DataError);
  CHECK_THROWS_AS(cmd_eval(c), DataError);
  CHECK_THROWS_AS(cmd_report(c), DataError);
}

TEST_CASE("tiny end-to-end run, idempotence and determinism") {
  PipelineConfig c = tiny_config("/tmp/pipetest/run");
  fs::remove_all(c.out);

  auto msgs = run_all(c);
  REQUIRE(msgs.size() == 6);
  for (const auto& m : msgs) CHECK(m.find("skipped") == std::string::npos);

  fs::path root = c.out;
  for (const char* rel :
       {"data/train.jsonl", "data/test.jsonl", "data/vocab.txt",
        "data/test_refined_base.jsonl", "ck/repeat.ck", "ck/fluency.ck",
        "ck/qf_stage1.ck", "ck/qf_stage2.ck", "ck/eval_clf.ck",
        "reports/induction.json", "reports/train_refine_stage1.jsonl",
        "reports/train_refine_stage2.jsonl", "reports/refine_stage1_base.jsonl",
        "reports/refine_stage2_base.jsonl", "reports/metrics_base.json",
        "reports/signal_base.json", "manifest.json"}) {
    INFO(rel);
    CHECK(fs::exists(root / rel));
  }

  // 2^2 patterns x 8 each; one negative per test row.
  CHECK(line_count(root / "data/train.jsonl") == 32);
  CHECK(line_count(root / "data/test.jsonl") == 6);
  CHECK(line_count(root / "data/test_refined_base.jsonl") == 6);

  json ind = json::parse(slurp(root / "reports/induction.json"));
  CHECK(ind["stage_order"] == json::array({2, 1}));
  REQUIRE(ind["stages"].size() == 2);
  for (const auto& s : ind["stages"]) {
    double before = s["mean_before"], after = s["mean_after"];
    CHECK(after >= before);
    CHECK(before >= 0.0);
    CHECK(after <= 1.0);
  }

  json mj = json::parse(slurp(root / "reports/metrics_base.json"));
  for (const char* k : {"similarity", "strength", "fluency", "gm", "hm", "n"})
    CHECK(mj.contains(k));
  CHECK(mj["n"] == 6);
  Aggregate again = aggregate(mj["similarity"].get<float>(),
                              mj["strength"].get<float>(),
                              mj["fluency"].get<float>());
  CHECK(mj["gm"].get<float>() == again.gm);
  CHECK(mj["hm"].get<float>() == again.hm);

  json sj = json::parse(slurp(root / "reports/signal_base.json"));
  CHECK(sj["n"] == 6);
  CHECK(sj["converted"].get<double>() <= sj["deleted"].get<double>());

  // Second pass over a finished run touches nothing.
  auto again_msgs = run_all(c);
  for (const auto& m : again_msgs) {
    INFO(m);
    CHECK(m.find("skipped") != std::string::npos);
  }

  // Same seed from scratch reproduces the reports byte for byte.
  std::string metrics_bytes = slurp(root / "reports/metrics_base.json");
  std::string signal_bytes = slurp(root / "reports/signal_base.json");
  std::string refined_bytes = slurp(root / "data/test_refined_base.jsonl");
  fs::remove_all(c.out);
  run_all(c);
  CHECK(slurp(root / "reports/metrics_base.json") == metrics_bytes);
  CHECK(slurp(root / "reports/signal_base.json") == signal_bytes);
  CHECK(slurp(root / "data/test_refined_base.jsonl") == refined_bytes);

  CHECK(cmd_report(c).find("similarity") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  std::string tool = TEXTPOLICY_TOOL;
  auto run = [&](const std::string& args) {
    int st = std::system((tool + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(st);
  };
  CHECK(run("--config /tmp/pipetest/missing.json gen-data") == 2);
  CHECK(run("--out /tmp/pipetest/nothing refine") == 3);
  CHECK(run("--out /tmp/pipetest/nothing report") == 3);
  {
    std::ofstream out("/tmp/pipetest/badkey.json");
    out << "{\"granmar\": 1}";
  }
  CHECK(run("--config /tmp/pipetest/badkey.json gen-data") == 2);
}
