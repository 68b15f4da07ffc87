#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "textpolicy/classifier.hpp"
#include "textpolicy/repeat_model.hpp"
#include "textpolicy/trajectory.hpp"
#include "textpolicy/vocab.hpp"

namespace textpolicy {

// Prompted classifier input for one stage: the flattened history, a
// separator, then the action under evaluation.
std::string build_stage_input(const std::string& history, const std::string& action);

int binarize_outcome(int outcome, int threshold);

struct RefineOutcome {
  std::string action;   // refined, or the original when nothing improved
  float p_before = 0.0f;
  float p_after = 0.0f;
  int iterations = 0;   // ascent steps recorded
  float nll = 0.0f;     // decode score of the accepted candidate, 0 otherwise
  std::vector<std::string> flags;

  bool has_flag(const std::string& f) const {
    for (const std::string& g : flags)
      if (g == f) return true;
    return false;
  }
};

// Per-row refinement seam. Swappable so the induction loop can be driven by
// an exhaustive oracle in tests.
using ActionRefiner = std::function<RefineOutcome(
    StageClassifier& clf, const std::string& history, const std::string& action,
    uint64_t row_seed)>;

struct InductionConfig {
  int outcome_threshold = -1;  // -1: the stage count
  ClassifierConfig clf;
  ClassifierTrainConfig fit;
  // Fit stage classifiers with the final history sentence drawn from a random
  // row instead of the action's own unedited duplicate (see run_backward_
  // induction); refinement always sees true histories.
  bool decorrelate_source = true;
  uint64_t seed = 0;
};

struct StageInductionStats {
  int stage = 0;
  double fit_loss = 0.0;
  double fit_acc = 0.0;
  double mean_before = 0.0;  // value of the original actions under this stage
  double mean_after = 0.0;   // pseudo-outcome handed to the previous stage
  int improved = 0;
  int unchanged = 0;
};

struct InductionResult {
  std::vector<std::unique_ptr<StageClassifier>> classifiers;  // [t-1] = stage t
  std::vector<StageInductionStats> stats;                     // stage 1 first
};

// Values-only backward pass: fit the last stage against binarized outcomes,
// refine its actions, hand the refined scores down as the previous stage's
// targets, repeat. on_stage runs after each stage finishes (checkpointing).
InductionResult run_backward_induction(
    EncoderDecoderModel& enc, const Vocabulary& v,
    const std::vector<Trajectory>& data, const InductionConfig& cfg,
    const ActionRefiner& refiner,
    const std::function<void(int stage, StageClassifier&)>& on_stage = {});

}  // namespace textpolicy
