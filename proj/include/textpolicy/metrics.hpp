#pragma once

#include <string>
#include <vector>

#include "textpolicy/classifier.hpp"
#include "textpolicy/grammar.hpp"
#include "textpolicy/repeat_model.hpp"
#include "textpolicy/trajectory.hpp"

namespace textpolicy {

struct MetricReport {
  float similarity = 0;
  float strength = 0;
  float fluency = 0;
  float gm = 0;
  float hm = 0;
  int n = 0;
  int skipped_empty = 0;
};

struct Aggregate {
  float gm = 0;
  float hm = 0;
};

struct SignalReport {
  float converted = 0;
  float deleted = 0;
  int n = 0;
};

// Percentage of texts the classifier scores positive. Each text is encoded
// the same way classifier inputs were built (empty history).
float transfer_strength(const std::vector<std::string>& outputs,
                        StageClassifier& clf,
                        EncoderDecoderModel& enc, const Vocabulary& v);

// Mean cosine between mean-pooled plain encodings of each pair, clamped to
// [0, 1] and scaled to a percentage.
float similarity(const std::vector<std::string>& originals,
                 const std::vector<std::string>& outputs,
                 EncoderDecoderModel& enc, const Vocabulary& v);

// Mean per-text perplexity. Empty texts are skipped; the count of skips is
// written to *skipped when given.
float fluency(const std::vector<std::string>& outputs, FluencyModel& fm,
              const Vocabulary& v, int* skipped = nullptr);

// gm and hm of (similarity, strength, 100/ln(fluency)). Requires
// similarity, strength in (0, 100] and fluency > e.
Aggregate aggregate(float similarity, float strength, float fluency);

// Lexicon scan of refined texts: converted needs at least one positive and
// no negative signal word; deleted needs no negative signal word.
SignalReport signal_accuracy(const std::vector<std::string>& refined,
                             const SignalGrammar& g);

// Sentence-level classifier trained on every labeled stage source of the
// training set, kept separate from the stage Q classifiers. Init uses
// derive(seed, 7), training derive(seed, 8).
StageClassifier train_eval_classifier(EncoderDecoderModel& enc,
                                      const Vocabulary& v,
                                      const std::vector<Trajectory>& train,
                                      const ClassifierConfig& cc,
                                      ClassifierTrainConfig tc, uint64_t seed);

}  // namespace textpolicy
