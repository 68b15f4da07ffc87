#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "textpolicy/ascent.hpp"
#include "textpolicy/classifier.hpp"
#include "textpolicy/metrics.hpp"
#include "textpolicy/qlearn.hpp"
#include "textpolicy/repeat_model.hpp"
#include "textpolicy/trajectory.hpp"

namespace textpolicy {

// Everything a full run needs, loadable from a flat JSON file via
// load_config. Nested structs are flattened with repeat_/fluency_/clf_
// key prefixes.
struct PipelineConfig {
  PipelineConfig() {
    // Both noises shape the embedding geometry the ascent depends on: the
    // decoder must tolerate edited memories, and the classifier boundary must
    // sit far enough from the clean encodings that following its gradient
    // accumulates a displacement the decoder can actually see. Short inputs
    // dilute the per-row gradient least, so stage 1 is the binding case.
    repeat_train.memory_noise = 0.3f;
    clf_train.input_noise = 1.0f;
  }

  std::string out = "run";
  std::string grammar = "one-pair";  // one-pair | two-pairs
  std::string variant = "base";      // base | tts | one-stage
  int stages = 2;
  int x_per_combo = 250;
  int test_negatives = 250;
  int outcome_threshold = -1;  // -1: positive only when every stage scores
  uint64_t seed = 1234;

  int repeat_corpus = 4000;
  RepeatConfig repeat;
  RepeatTrainConfig repeat_train;

  FluencyConfig fluency;
  FluencyTrainConfig fluency_train;

  ClassifierConfig clf;  // d_model is forced to repeat.d_model
  ClassifierTrainConfig clf_train;

  float ascent_eta = 5.0f;
  float ascent_eta_later = 5.0f;
  int ascent_iters_stage1 = 15;
  int ascent_iters_later = 10;
  std::string selection = "last-iterate";  // last-iterate | nll-best
  float tts_noise = 1.0f;
  bool refine_all = false;
  bool clf_decorrelate = true;
};

// Reads a flat JSON object; unknown keys and wrong types are ConfigError.
PipelineConfig load_config(const std::string& path);

// Canonical flat JSON of every config field, keys sorted.
std::string config_json(const PipelineConfig& cfg);

// Throws ConfigError on out-of-range or inconsistent settings.
void validate_config(const PipelineConfig& cfg);

struct PhaseResult {
  bool skipped = false;
  std::string message;
};

PhaseResult cmd_gen_data(const PipelineConfig& cfg, bool force = false);
PhaseResult cmd_train_repeat(const PipelineConfig& cfg, bool force = false);
PhaseResult cmd_train_fluency(const PipelineConfig& cfg, bool force = false);
PhaseResult cmd_train_q(const PipelineConfig& cfg, bool force = false);
PhaseResult cmd_refine(const PipelineConfig& cfg, bool force = false);
PhaseResult cmd_eval(const PipelineConfig& cfg, bool force = false);

// Human summary of the stored reports; error if none exist yet.
std::string cmd_report(const PipelineConfig& cfg);

// All phases in order. Returns one message per executed phase.
std::vector<std::string> run_all(const PipelineConfig& cfg, bool force = false);

}  // namespace textpolicy
