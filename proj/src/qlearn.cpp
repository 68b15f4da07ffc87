#include "textpolicy/qlearn.hpp"

namespace textpolicy {

std::string build_stage_input(const std::string& history,
                              const std::string& action) {
  if (history.empty()) return "Repeat : <sep> " + action;
  return "Repeat : " + history + " <sep> " + action;
}

namespace {

// History flattening with the final source slot swapped out.
std::string flatten_with_source(const Trajectory& tr, int t,
                                const std::string& source) {
  std::string out;
  for (int s = 0; s < t - 1; ++s) {
    if (!out.empty()) out += ' ';
    out += tr.stages[static_cast<size_t>(s)].source;
    out += ' ';
    out += tr.stages[static_cast<size_t>(s)].action;
  }
  out += ' ';
  out += source;
  return out;
}

}  // namespace

int binarize_outcome(int outcome, int threshold) {
  return outcome >= threshold ? 1 : 0;
}

InductionResult run_backward_induction(
    EncoderDecoderModel& enc, const Vocabulary& v,
    const std::vector<Trajectory>& data, const InductionConfig& cfg,
    const ActionRefiner& refiner,
    const std::function<void(int stage, StageClassifier&)>& on_stage) {
  if (data.empty()) throw DataError("induction: no trajectories");
  int T = static_cast<int>(data[0].stages.size());
  for (const Trajectory& tr : data)
    if (static_cast<int>(tr.stages.size()) != T)
      throw DataError("induction: uneven stage counts (" + tr.id + ")");
  int threshold = cfg.outcome_threshold < 0 ? T : cfg.outcome_threshold;

  std::vector<float> y(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    y[i] = static_cast<float>(binarize_outcome(data[i].outcome, threshold));

  InductionResult result;
  result.classifiers.resize(T);
  result.stats.resize(T);
  for (int t = T; t >= 1; --t) {
    auto clf = std::make_unique<StageClassifier>(
        cfg.clf, SeededRng::derive(cfg.seed, 16 + t),
        "qf/stage" + std::to_string(t));

    std::vector<std::string> histories(data.size());
    std::vector<ClassifierExample> examples(data.size());
    SeededRng mix_rng(SeededRng::derive(cfg.seed, 48 + t));
    for (size_t i = 0; i < data.size(); ++i) {
      histories[i] = History{&data[i], t}.flatten();
      const std::string& action = data[i].stages[t - 1].action;
      // In fresh data the final history sentence duplicates the action, so a
      // fit on raw inputs can read the frozen copy and ignore the span ascent
      // edits. Swapping that slot with a random row's source decorrelates it
      // from the label; the earlier stages stay paired with their outcome.
      std::string fit_hist = histories[i];
      if (cfg.decorrelate_source && t >= 2) {
        int j = mix_rng.uniform_int(static_cast<int>(data.size()));
        fit_hist = flatten_with_source(
            data[i], t, data[static_cast<size_t>(j)].stages[t - 1].source);
      }
      std::string input = build_stage_input(fit_hist, action);
      examples[i] = {enc.encode(tokenize(input, v)), y[i],
                     static_cast<int>(tokenize(action, v).size())};
    }
    ClassifierTrainConfig fit_cfg = cfg.fit;
    fit_cfg.seed = SeededRng::derive(cfg.seed, 32 + t);
    ClassifierFitStats fit = fit_stage_classifier(*clf, examples, fit_cfg);

    StageInductionStats st;
    st.stage = t;
    st.fit_loss = fit.last_loss;
    st.fit_acc = fit.train_acc;
    uint64_t stage_seed = SeededRng::derive(cfg.seed, 64 + t);
    for (size_t i = 0; i < data.size(); ++i) {
      RefineOutcome out =
          refiner(*clf, histories[i], data[i].stages[t - 1].action,
                  SeededRng::derive(stage_seed, fnv1a(data[i].id)));
      if (out.p_after < out.p_before - 1e-6f)
        throw NumericError("induction: stage " + std::to_string(t) +
                           " refinement regressed on " + data[i].id);
      st.mean_before += out.p_before;
      st.mean_after += out.p_after;
      if (out.p_after > out.p_before) ++st.improved;
      if (out.action == data[i].stages[t - 1].action) ++st.unchanged;
      y[i] = out.p_after;
    }
    st.mean_before /= static_cast<double>(data.size());
    st.mean_after /= static_cast<double>(data.size());

    if (on_stage) on_stage(t, *clf);
    result.stats[t - 1] = st;
    result.classifiers[t - 1] = std::move(clf);
  }
  return result;
}

}  // namespace textpolicy
