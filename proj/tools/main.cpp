#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "textpolicy/errors.hpp"
#include "textpolicy/pipeline.hpp"

using namespace textpolicy;

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage text refinement pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, variant;
  uint64_t seed = 0;
  bool have_seed = false, force = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "Run directory (overrides config)");
  app.add_option("--variant", variant, "base | tts | one-stage")
      ->check(CLI::IsMember({"base", "tts", "one-stage"}));
  app.add_option("--seed", seed, "Global seed")
      ->each([&](const std::string&) { have_seed = true; });
  app.add_flag("--force", force, "Redo phases even when up to date");

  auto* gen = app.add_subcommand("gen-data", "Generate train/test trajectories");
  auto* trep = app.add_subcommand("train-repeat", "Train the echo encoder-decoder");
  auto* tflu = app.add_subcommand("train-fluency", "Train the scoring language model");
  auto* tq = app.add_subcommand("train-q", "Backward induction over stage classifiers");
  auto* ref = app.add_subcommand("refine", "Refine the test set forward through all stages");
  auto* ev = app.add_subcommand("eval", "Score refined outputs and write reports");
  auto* rep = app.add_subcommand("report", "Print stored report summaries");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!variant.empty()) cfg.variant = variant;
    if (have_seed) cfg.seed = seed;
    validate_config(cfg);

    if (rep->parsed()) {
      std::fputs(cmd_report(cfg).c_str(), stdout);
      return 0;
    }
    PhaseResult r;
    if (gen->parsed()) r = cmd_gen_data(cfg, force);
    else if (trep->parsed()) r = cmd_train_repeat(cfg, force);
    else if (tflu->parsed()) r = cmd_train_fluency(cfg, force);
    else if (tq->parsed()) r = cmd_train_q(cfg, force);
    else if (ref->parsed()) r = cmd_refine(cfg, force);
    else if (ev->parsed()) r = cmd_eval(cfg, force);
    std::printf("%s\n", r.message.c_str());
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
