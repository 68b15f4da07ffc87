#include "textpolicy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "textpolicy/errors.hpp"
#include "textpolicy/qlearn.hpp"

namespace textpolicy {

float transfer_strength(const std::vector<std::string>& outputs,
                        StageClassifier& clf, EncoderDecoderModel& enc,
                        const Vocabulary& v) {
  if (outputs.empty()) throw DataError("transfer_strength: no outputs");
  int positive = 0;
  for (const auto& text : outputs) {
    Matrix mem = enc.encode(tokenize(build_stage_input("", text), v));
    if (clf.predict(mem) >= 0.5f) ++positive;
  }
  return 100.0f * static_cast<float>(positive) /
         static_cast<float>(outputs.size());
}

namespace {

Eigen::RowVectorXf pooled(EncoderDecoderModel& enc, const Vocabulary& v,
                          const std::string& text) {
  Matrix mem = enc.encode(tokenize(text, v));
  return mem.colwise().mean();
}

}  // namespace

float similarity(const std::vector<std::string>& originals,
                 const std::vector<std::string>& outputs,
                 EncoderDecoderModel& enc, const Vocabulary& v) {
  if (originals.size() != outputs.size())
    throw DimensionError("similarity: got " + std::to_string(originals.size()) +
                         " originals vs " + std::to_string(outputs.size()) +
                         " outputs");
  if (originals.empty()) throw DataError("similarity: no pairs");
  double total = 0;
  for (size_t i = 0; i < originals.size(); ++i) {
    Eigen::RowVectorXf a = pooled(enc, v, originals[i]);
    Eigen::RowVectorXf b = pooled(enc, v, outputs[i]);
    float denom = a.norm() * b.norm();
    float cos = denom > 0 ? a.dot(b) / denom : 0.0f;
    total += std::clamp(cos, 0.0f, 1.0f);
  }
  return 100.0f * static_cast<float>(total / originals.size());
}

float fluency(const std::vector<std::string>& outputs, FluencyModel& fm,
              const Vocabulary& v, int* skipped) {
  int skips = 0;
  double total = 0;
  int counted = 0;
  for (const auto& text : outputs) {
    std::vector<int> ids = tokenize(text, v);
    if (ids.empty()) {
      std::fprintf(stderr, "warning: skipping empty text in fluency\n");
      ++skips;
      continue;
    }
    total += fm.perplexity(ids);
    ++counted;
  }
  if (skipped) *skipped = skips;
  if (counted == 0) throw DataError("fluency: no non-empty outputs");
  return static_cast<float>(total / counted);
}

Aggregate aggregate(float similarity, float strength, float fluency) {
  constexpr float kE = 2.718281828459045f;
  if (!(similarity > 0 && similarity <= 100))
    throw NumericError("aggregate: similarity " + std::to_string(similarity) +
                       " outside (0, 100]");
  if (!(strength > 0 && strength <= 100))
    throw NumericError("aggregate: strength " + std::to_string(strength) +
                       " outside (0, 100]");
  if (!(fluency > kE))
    throw NumericError("aggregate: fluency " + std::to_string(fluency) +
                       " must exceed e");
  float f = 100.0f / std::log(fluency);
  Aggregate out;
  out.gm = std::cbrt(similarity * strength * f);
  out.hm = 3.0f / (1.0f / similarity + 1.0f / strength + 1.0f / f);
  return out;
}

SignalReport signal_accuracy(const std::vector<std::string>& refined,
                             const SignalGrammar& g) {
  SignalReport r;
  r.n = static_cast<int>(refined.size());
  if (refined.empty()) return r;
  int conv = 0, del = 0;
  for (const auto& text : refined) {
    bool neg = g.has_negative(text);
    if (!neg) ++del;
    if (!neg && g.has_positive(text)) ++conv;
  }
  r.converted = static_cast<float>(conv) / static_cast<float>(r.n);
  r.deleted = static_cast<float>(del) / static_cast<float>(r.n);
  return r;
}

StageClassifier train_eval_classifier(EncoderDecoderModel& enc,
                                      const Vocabulary& v,
                                      const std::vector<Trajectory>& train,
                                      const ClassifierConfig& cc,
                                      ClassifierTrainConfig tc, uint64_t seed) {
  std::vector<ClassifierExample> ex;
  for (const auto& traj : train)
    for (const auto& st : traj.stages) {
      if (!st.label) continue;
      Matrix mem = enc.encode(tokenize(build_stage_input("", st.source), v));
      ex.push_back({std::move(mem), static_cast<float>(*st.label)});
    }
  StageClassifier clf(cc, SeededRng::derive(seed, 7), "eval/clf");
  tc.seed = SeededRng::derive(seed, 8);
  fit_stage_classifier(clf, ex, tc);
  return clf;
}

}  // namespace textpolicy
