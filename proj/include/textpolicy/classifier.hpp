#pragma once

#include <string>
#include <vector>

#include "textpolicy/transformer.hpp"

namespace textpolicy {

// Operates on encoder memory rows (one row per input token), so d_model must
// match the encoder that produced them. Positions are already baked into the
// memory, hence no position table here.
struct ClassifierConfig {
  int d_model = 128;
  int layers = 3;
  int heads = 8;
  int ffn_hidden = 512;
  float dropout = 0.1f;
};

class StageClassifier {
 public:
  StageClassifier(ClassifierConfig cfg, uint64_t seed, std::string prefix);

  // Two logits {negative, positive} from mean-pooled states. Dropout only
  // when train (rng required then).
  Var logits_on(Tape& t, Var memory, bool train = false, SeededRng* rng = nullptr);

  // P(positive), dropout-free.
  float predict(const Matrix& memory);

  std::vector<Parameter*> params();
  void save(const std::string& path);
  void load(const std::string& path);
  const ClassifierConfig& config() const { return cfg_; }

 private:
  ClassifierConfig cfg_;
  std::vector<EncoderLayerParams> layers_;
  LayerNormParams final_;
  Parameter head_w_;  // d x 2
  Parameter head_b_;  // 1 x 2
};

struct ClassifierExample {
  Matrix memory;
  float target;  // P(positive) in [0, 1]
  // Trailing rows exempt from history_dropout (the action span).
  int protect_tail = 0;
};

struct ClassifierTrainConfig {
  float lr = 1e-4f;
  int batch = 16;
  int epochs = 15;
  // Stddev of gaussian noise added to memory rows during training. Smooths
  // the decision boundary in embedding space, which keeps ascent gradients
  // alive instead of saturating within a few steps.
  float input_noise = 0.0f;
  // Probability of zeroing everything but an example's protected tail rows
  // during training. Applied per example, whole block at once: masking rows
  // independently injects label noise on inputs whose only signal row is hit.
  float history_dropout = 0.0f;
  // Extra noise stddev on the non-protected rows, on top of input_noise.
  // Stage inputs at t >= 2 repeat the current sentence (frozen label text in
  // the history plus the action span), so the fit can split that signal
  // between the two copies any way it likes; making the history rows the
  // noisier carrier pushes the weight onto the action span, the part ascent
  // can actually move, while the history stays readable enough to keep its
  // own earlier-stage signal.
  float history_noise = 0.0f;
  uint64_t seed = 0;
  bool verbose = false;
};

struct ClassifierFitStats {
  double last_loss = 0.0;
  double train_acc = 0.0;  // hard-label agreement at threshold 0.5
};

// Soft-target fit. Requires both hard classes present; rebalances with
// inverse-frequency example weights when the split is worse than 90/10.
ClassifierFitStats fit_stage_classifier(StageClassifier& c,
                                        const std::vector<ClassifierExample>& examples,
                                        const ClassifierTrainConfig& cfg);

}  // namespace textpolicy
