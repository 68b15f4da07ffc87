#pragma once

#include <string>
#include <vector>

#include "textpolicy/grammar.hpp"
#include "textpolicy/transformer.hpp"
#include "textpolicy/vocab.hpp"

namespace textpolicy {

struct RepeatConfig {
  int d_model = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ffn_hidden = 512;
  int beam = 3;
  int max_len = 256;
  float length_norm = 1.0f;  // score = nll / len^length_norm
};

struct DecodeResult {
  std::vector<int> ids;
  float nll = 0.0f;    // total over generated tokens
  float score = 0.0f;  // length-normalized
  bool ended = false;  // produced EOS before max_len
};

// Encoder-decoder trained to echo its input back, minus the leading prompt.
// The decoder consumes raw encoder memory rows, so it also accepts memories
// that were edited after encoding.
class EncoderDecoderModel {
 public:
  EncoderDecoderModel(RepeatConfig cfg, int vocab_size, uint64_t seed,
                      std::string prefix = "repeat");

  Var encode_on(Tape& t, const std::vector<int>& ids);
  Matrix encode(const std::vector<int>& ids);

  // Teacher-forced next-token loss; memory_noise > 0 perturbs the memory rows
  // so decoding stays stable under later embedding edits.
  Var loss_on(Tape& t, const std::vector<int>& src, const std::vector<int>& tgt,
              float memory_noise = 0.0f, SeededRng* rng = nullptr);

  DecodeResult decode(const Matrix& memory, int beam_override = 0);
  DecodeResult greedy(const Matrix& memory) { return decode(memory, 1); }

  std::vector<Parameter*> params();
  void save(const std::string& path);
  void load(const std::string& path);
  const RepeatConfig& config() const { return cfg_; }
  int vocab_size() const { return static_cast<int>(emb_.value.rows()); }

 private:
  Var decode_logits(Tape& t, Var memory, const std::vector<int>& prefix);

  RepeatConfig cfg_;
  Parameter emb_;  // vocab x d, shared with the output projection
  std::vector<EncoderLayerParams> enc_;
  std::vector<DecoderLayerParams> dec_;
  LayerNormParams enc_final_, dec_final_;
};

struct FluencyConfig {
  int d_model = 128;
  int layers = 2;
  int heads = 4;
  int ffn_hidden = 512;
};

// Causal next-token model used only for scoring text.
class FluencyModel {
 public:
  FluencyModel(FluencyConfig cfg, int vocab_size, uint64_t seed,
               std::string prefix = "fluency");

  Var loss_on(Tape& t, const std::vector<int>& ids);
  // Next-token nll per real token; the end-of-text step is not included.
  std::vector<double> token_nlls(const std::vector<int>& ids);
  // Mean of token_nlls. ids must be non-empty.
  double mean_nll(const std::vector<int>& ids);
  double perplexity(const std::vector<int>& ids);

  std::vector<Parameter*> params();
  void save(const std::string& path);
  void load(const std::string& path);

 private:
  Var logits_on(Tape& t, const std::vector<int>& input);

  FluencyConfig cfg_;
  Parameter emb_;
  std::vector<EncoderLayerParams> layers_;
  LayerNormParams final_;
};

struct TokenPair {
  std::vector<int> src, tgt;
};

// Echo-training pairs: prompted single sentences, prompted sentence runs with
// a separator, and a share of plain unprompted text.
std::vector<TokenPair> make_repeat_corpus(const SignalGrammar& g,
                                          const Vocabulary& v, int count,
                                          SeededRng& rng);

struct RepeatTrainConfig {
  float lr = 1e-3f;
  int batch = 16;
  int max_epochs = 20;
  float memory_noise = 0.1f;
  double target = 0.995;  // held-out exact reconstruction rate for early stop
  int holdout = 200;
  uint64_t seed = 0;
  bool verbose = false;
};

struct RepeatTrainStats {
  int epochs = 0;
  double holdout_exact = 0.0;
  double last_loss = 0.0;
};

RepeatTrainStats train_repeat(EncoderDecoderModel& m, std::vector<TokenPair> pairs,
                              const RepeatTrainConfig& cfg);

struct FluencyTrainConfig {
  float lr = 1e-3f;
  int batch = 16;
  int epochs = 5;
  uint64_t seed = 0;
  bool verbose = false;
};

double train_fluency(FluencyModel& m, std::vector<std::vector<int>> texts,
                     const FluencyTrainConfig& cfg);

}  // namespace textpolicy
