#pragma once

#include <string>
#include <vector>

#include "textpolicy/classifier.hpp"
#include "textpolicy/qlearn.hpp"
#include "textpolicy/repeat_model.hpp"
#include "textpolicy/vocab.hpp"

namespace textpolicy {

struct AscentConfig {
  int iterations = 10;
  float eta = 0.5f;        // step on the classifier loss gradient
  float init_noise = 0.0f; // jitter stddev folded into the first step
  bool nll_best = false;   // decode every improving snapshot and pick the one
                           // with the lowest action NLL under the fluency
                           // model; otherwise take the latest improving
                           // snapshot that decodes to a usable action
  uint64_t seed = 0;
};

struct AscentTrace {
  std::vector<Matrix> spans;  // action rows per snapshot; [0] is the original
  std::vector<float> p;       // classifier score per snapshot
  bool nan_truncated = false;
};

// Gradient steps on the action rows of `memory` toward the positive class;
// all other rows stay untouched. Snapshots record every iterate. A non-finite
// step truncates the trace instead of failing.
AscentTrace ascend(StageClassifier& clf, const Matrix& memory, int span_start,
                   int span_len, const AscentConfig& cfg);

struct SplitDecode {
  std::string history, action;
  float nll = 0.0f, score = 0.0f;
  bool no_sep = false;
  bool ended = true;
};

// Decodes an edited memory and splits at the first separator. Without one,
// retries on just the prompt rows plus the action rows.
SplitDecode decode_split(EncoderDecoderModel& enc, const Vocabulary& v,
                         const Matrix& memory, int prompt_len, int span_start,
                         int span_len);

// Full refinement of one action: encode, ascend, decode candidates, then
// re-encode each decoded text and keep one only if its score strictly beats
// the original. p_after always comes from re-encoded text, never from the
// raw embedding trace. With nll_best, the survivors are ranked by mean token
// NLL of the action text under `fl` (required then); the outcome's nll field
// holds that value when fl is given, the beam decode score otherwise.
RefineOutcome refine_action(EncoderDecoderModel& enc, const Vocabulary& v,
                            StageClassifier& clf, const std::string& history,
                            const std::string& action, const AscentConfig& cfg,
                            FluencyModel* fl = nullptr);

// Higher score wins; scores within 1e-4 fall to the smaller edit from the
// original; a remaining tie keeps the first.
const RefineOutcome& pick_tts_winner(const RefineOutcome& a,
                                     const RefineOutcome& b,
                                     const std::string& original);

// Two refinement runs, the second from a jittered start, best kept.
RefineOutcome tts_refine(EncoderDecoderModel& enc, const Vocabulary& v,
                         StageClassifier& clf, const std::string& history,
                         const std::string& action, const AscentConfig& cfg,
                         float tts_noise, FluencyModel* fl = nullptr);

}  // namespace textpolicy
