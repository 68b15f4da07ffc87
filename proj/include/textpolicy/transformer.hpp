#pragma once

#include <string>
#include <vector>

#include "textpolicy/tensor.hpp"

namespace textpolicy {

// Rows are positions, columns are model dimensions, matching the row-major
// Matrix layout.

struct LayerNormParams {
  Parameter gain;  // 1 x d
  Parameter bias;  // 1 x d
};

// Bias-free projections.
struct AttentionParams {
  Parameter wq, wk, wv, wo;  // d x d
};

struct FfnParams {
  Parameter w1;  // d x hidden
  Parameter b1;  // 1 x hidden
  Parameter w2;  // hidden x d
  Parameter b2;  // 1 x d
};

struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self_attn, cross_attn;
  FfnParams ffn;
};

Matrix normal_matrix(int rows, int cols, float stddev, SeededRng& rng);

void init_layernorm(LayerNormParams& p, const std::string& prefix, int d);
void init_attention(AttentionParams& p, const std::string& prefix, int d,
                    SeededRng& rng);
void init_ffn(FfnParams& p, const std::string& prefix, int d, int hidden,
              SeededRng& rng);
void init_encoder_layer(EncoderLayerParams& p, const std::string& prefix, int d,
                        int hidden, SeededRng& rng);
void init_decoder_layer(DecoderLayerParams& p, const std::string& prefix, int d,
                        int hidden, SeededRng& rng);

void collect(LayerNormParams& p, std::vector<Parameter*>& out);
void collect(AttentionParams& p, std::vector<Parameter*>& out);
void collect(FfnParams& p, std::vector<Parameter*>& out);
void collect(EncoderLayerParams& p, std::vector<Parameter*>& out);
void collect(DecoderLayerParams& p, std::vector<Parameter*>& out);

Var apply_layernorm(Tape& t, Var x, LayerNormParams& p);

// Multi-head attention from q_in over kv_in. With `causal`, position i only
// attends to kv positions <= i.
Var attention(Tape& t, Var q_in, Var kv_in, AttentionParams& p, int heads,
              bool causal);

Var feed_forward(Tape& t, Var x, FfnParams& p);

// Pre-norm residual block. Dropout applies to both sublayer outputs when
// rate > 0 (rng required then).
Var encoder_layer(Tape& t, Var x, EncoderLayerParams& p, int heads,
                  bool causal = false, float drop_rate = 0.0f,
                  SeededRng* rng = nullptr);

Var decoder_layer(Tape& t, Var x, Var memory, DecoderLayerParams& p, int heads);

// Fixed sin/cos position table, len x d.
Matrix sinusoidal_encoding(int len, int d);

// gather(emb)[ids] * sqrt(d), plus the position table when add_positions.
Var embed_tokens(Tape& t, Parameter& emb, const std::vector<int>& ids,
                 bool add_positions);

}  // namespace textpolicy
