#include "textpolicy/transformer.hpp"

#include <cmath>

namespace textpolicy {

Matrix normal_matrix(int rows, int cols, float stddev, SeededRng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0f, stddev);
  return m;
}

void init_layernorm(LayerNormParams& p, const std::string& prefix, int d) {
  p.gain = Parameter(prefix + "/gain", Matrix::Ones(1, d));
  p.bias = Parameter(prefix + "/bias", Matrix::Zero(1, d));
}

void init_attention(AttentionParams& p, const std::string& prefix, int d,
                    SeededRng& rng) {
  float s = 1.0f / std::sqrt(static_cast<float>(d));
  p.wq = Parameter(prefix + "/wq", normal_matrix(d, d, s, rng));
  p.wk = Parameter(prefix + "/wk", normal_matrix(d, d, s, rng));
  p.wv = Parameter(prefix + "/wv", normal_matrix(d, d, s, rng));
  p.wo = Parameter(prefix + "/wo", normal_matrix(d, d, s, rng));
}

void init_ffn(FfnParams& p, const std::string& prefix, int d, int hidden,
              SeededRng& rng) {
  float s1 = std::sqrt(2.0f / static_cast<float>(d));
  float s2 = 1.0f / std::sqrt(static_cast<float>(hidden));
  p.w1 = Parameter(prefix + "/w1", normal_matrix(d, hidden, s1, rng));
  p.b1 = Parameter(prefix + "/b1", Matrix::Zero(1, hidden));
  p.w2 = Parameter(prefix + "/w2", normal_matrix(hidden, d, s2, rng));
  p.b2 = Parameter(prefix + "/b2", Matrix::Zero(1, d));
}

void init_encoder_layer(EncoderLayerParams& p, const std::string& prefix, int d,
                        int hidden, SeededRng& rng) {
  init_layernorm(p.ln1, prefix + "/ln1", d);
  init_layernorm(p.ln2, prefix + "/ln2", d);
  init_attention(p.attn, prefix + "/attn", d, rng);
  init_ffn(p.ffn, prefix + "/ffn", d, hidden, rng);
}

void init_decoder_layer(DecoderLayerParams& p, const std::string& prefix, int d,
                        int hidden, SeededRng& rng) {
  init_layernorm(p.ln1, prefix + "/ln1", d);
  init_layernorm(p.ln2, prefix + "/ln2", d);
  init_layernorm(p.ln3, prefix + "/ln3", d);
  init_attention(p.self_attn, prefix + "/self", d, rng);
  init_attention(p.cross_attn, prefix + "/cross", d, rng);
  init_ffn(p.ffn, prefix + "/ffn", d, hidden, rng);
}

void collect(LayerNormParams& p, std::vector<Parameter*>& out) {
  out.push_back(&p.gain);
  out.push_back(&p.bias);
}

void collect(AttentionParams& p, std::vector<Parameter*>& out) {
  out.push_back(&p.wq);
  out.push_back(&p.wk);
  out.push_back(&p.wv);
  out.push_back(&p.wo);
}

void collect(FfnParams& p, std::vector<Parameter*>& out) {
  out.push_back(&p.w1);
  out.push_back(&p.b1);
  out.push_back(&p.w2);
  out.push_back(&p.b2);
}

void collect(EncoderLayerParams& p, std::vector<Parameter*>& out) {
  collect(p.ln1, out);
  collect(p.ln2, out);
  collect(p.attn, out);
  collect(p.ffn, out);
}

void collect(DecoderLayerParams& p, std::vector<Parameter*>& out) {
  collect(p.ln1, out);
  collect(p.ln2, out);
  collect(p.ln3, out);
  collect(p.self_attn, out);
  collect(p.cross_attn, out);
  collect(p.ffn, out);
}

Var apply_layernorm(Tape& t, Var x, LayerNormParams& p) {
  return add(t, mul_rowwise(t, layernorm(t, x), t.param(p.gain)), t.param(p.bias));
}

namespace {

Matrix causal_mask(int n) {
  Matrix m = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = -1e9f;
  return m;
}

}  // namespace

Var attention(Tape& t, Var q_in, Var kv_in, AttentionParams& p, int heads,
              bool causal) {
  int d = static_cast<int>(p.wq.value.cols());
  if (heads <= 0 || d % heads != 0)
    throw DimensionError("attention: model dim " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  int hd = d / heads;
  Var q = matmul(t, q_in, t.param(p.wq));
  Var k = matmul(t, kv_in, t.param(p.wk));
  Var v = matmul(t, kv_in, t.param(p.wv));
  Var mask;
  if (causal) mask = t.constant(causal_mask(static_cast<int>(t.val(q).rows())));
  float inv = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(t, q, h * hd, hd);
    Var kh = slice_cols(t, k, h * hd, hd);
    Var vh = slice_cols(t, v, h * hd, hd);
    Var scores = scale(t, matmul(t, qh, transpose(t, kh)), inv);
    if (causal) scores = add(t, scores, mask);
    outs.push_back(matmul(t, softmax(t, scores, 1), vh));
  }
  return matmul(t, concat_cols(t, outs), t.param(p.wo));
}

Var feed_forward(Tape& t, Var x, FfnParams& p) {
  Var h = relu(t, add(t, matmul(t, x, t.param(p.w1)), t.param(p.b1)));
  return add(t, matmul(t, h, t.param(p.w2)), t.param(p.b2));
}

Var encoder_layer(Tape& t, Var x, EncoderLayerParams& p, int heads, bool causal,
                  float drop_rate, SeededRng* rng) {
  Var n1 = apply_layernorm(t, x, p.ln1);
  Var a = attention(t, n1, n1, p.attn, heads, causal);
  if (drop_rate > 0.0f) a = dropout(t, a, drop_rate, *rng);
  x = add(t, x, a);
  Var f = feed_forward(t, apply_layernorm(t, x, p.ln2), p.ffn);
  if (drop_rate > 0.0f) f = dropout(t, f, drop_rate, *rng);
  return add(t, x, f);
}

Var decoder_layer(Tape& t, Var x, Var memory, DecoderLayerParams& p, int heads) {
  Var n1 = apply_layernorm(t, x, p.ln1);
  x = add(t, x, attention(t, n1, n1, p.self_attn, heads, true));
  Var n2 = apply_layernorm(t, x, p.ln2);
  x = add(t, x, attention(t, n2, memory, p.cross_attn, heads, false));
  return add(t, x, feed_forward(t, apply_layernorm(t, x, p.ln3), p.ffn));
}

Matrix sinusoidal_encoding(int len, int d) {
  Matrix m(len, d);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      double rate = std::pow(10000.0, -static_cast<double>(i) / d);
      m(pos, i) = static_cast<float>(std::sin(pos * rate));
      if (i + 1 < d) m(pos, i + 1) = static_cast<float>(std::cos(pos * rate));
    }
  }
  return m;
}

Var embed_tokens(Tape& t, Parameter& emb, const std::vector<int>& ids,
                 bool add_positions) {
  int d = static_cast<int>(emb.value.cols());
  Var x = scale(t, gather_rows(t, t.param(emb), ids),
                std::sqrt(static_cast<float>(d)));
  if (add_positions)
    x = add(t, x, t.constant(sinusoidal_encoding(static_cast<int>(ids.size()), d)));
  return x;
}

}  // namespace textpolicy
