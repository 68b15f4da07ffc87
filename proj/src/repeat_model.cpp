#include "textpolicy/repeat_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "textpolicy/adam.hpp"
#include "textpolicy/checkpoint.hpp"

namespace textpolicy {

EncoderDecoderModel::EncoderDecoderModel(RepeatConfig cfg, int vocab_size,
                                         uint64_t seed, std::string prefix)
    : cfg_(cfg) {
  if (vocab_size <= 0 || cfg_.d_model <= 0)
    throw ConfigError("encoder-decoder: bad dimensions");
  SeededRng rng(seed);
  float es = 1.0f / std::sqrt(static_cast<float>(cfg_.d_model));
  emb_ = Parameter(prefix + "/emb",
                   normal_matrix(vocab_size, cfg_.d_model, es, rng));
  enc_.resize(cfg_.enc_layers);
  for (int i = 0; i < cfg_.enc_layers; ++i)
    init_encoder_layer(enc_[i], prefix + "/enc" + std::to_string(i),
                       cfg_.d_model, cfg_.ffn_hidden, rng);
  dec_.resize(cfg_.dec_layers);
  for (int i = 0; i < cfg_.dec_layers; ++i)
    init_decoder_layer(dec_[i], prefix + "/dec" + std::to_string(i),
                       cfg_.d_model, cfg_.ffn_hidden, rng);
  init_layernorm(enc_final_, prefix + "/enc_final", cfg_.d_model);
  init_layernorm(dec_final_, prefix + "/dec_final", cfg_.d_model);
}

Var EncoderDecoderModel::encode_on(Tape& t, const std::vector<int>& ids) {
  if (ids.empty()) throw DimensionError("encode: empty token sequence");
  Var x = embed_tokens(t, emb_, ids, true);
  for (auto& layer : enc_) x = encoder_layer(t, x, layer, cfg_.heads);
  return apply_layernorm(t, x, enc_final_);
}

Matrix EncoderDecoderModel::encode(const std::vector<int>& ids) {
  Tape t(false);
  return t.val(encode_on(t, ids));
}

Var EncoderDecoderModel::decode_logits(Tape& t, Var memory,
                                       const std::vector<int>& prefix) {
  Var x = embed_tokens(t, emb_, prefix, true);
  for (auto& layer : dec_) x = decoder_layer(t, x, memory, layer, cfg_.heads);
  x = apply_layernorm(t, x, dec_final_);
  return matmul(t, x, transpose(t, t.param(emb_)));
}

Var EncoderDecoderModel::loss_on(Tape& t, const std::vector<int>& src,
                                 const std::vector<int>& tgt,
                                 float memory_noise, SeededRng* rng) {
  Var mem = encode_on(t, src);
  if (memory_noise > 0.0f) {
    if (!rng) throw ConfigError("loss_on: memory noise needs an rng");
    const Matrix& m = t.val(mem);
    mem = add(t, mem, t.constant(normal_matrix(static_cast<int>(m.rows()),
                                               static_cast<int>(m.cols()),
                                               memory_noise, *rng)));
  }
  std::vector<int> input;
  input.reserve(tgt.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), tgt.begin(), tgt.end());
  std::vector<int> targets(tgt);
  targets.push_back(Vocabulary::kEos);
  return cross_entropy(t, decode_logits(t, mem, input), targets);
}

DecodeResult EncoderDecoderModel::decode(const Matrix& memory,
                                         int beam_override) {
  if (memory.rows() == 0) throw DimensionError("decode: empty memory");
  int width = beam_override > 0 ? beam_override : cfg_.beam;

  struct Cand {
    std::vector<int> prefix;  // starts with BOS
    float nll = 0.0f;
  };
  auto finish = [&](const Cand& c, bool ended) {
    DecodeResult r;
    r.ids.assign(c.prefix.begin() + 1, c.prefix.end());
    if (ended) r.ids.pop_back();  // drop EOS
    r.nll = c.nll;
    int len = static_cast<int>(c.prefix.size()) - 1;
    r.score = len > 0 ? c.nll / std::pow(static_cast<float>(len), cfg_.length_norm)
                      : c.nll;
    r.ended = ended;
    return r;
  };

  std::vector<Cand> live{{{Vocabulary::kBos}, 0.0f}};
  std::vector<DecodeResult> done;
  for (int step = 0; step < cfg_.max_len && !live.empty(); ++step) {
    std::vector<Cand> next;
    for (const Cand& b : live) {
      Tape t(false);
      Var lg = decode_logits(t, t.constant(memory), b.prefix);
      const Matrix& L = t.val(lg);
      Eigen::RowVectorXf row = L.row(L.rows() - 1);
      float mx = row.maxCoeff();
      float lse = mx + std::log((row.array() - mx).exp().sum());
      std::vector<int> order(row.size());
      std::iota(order.begin(), order.end(), 0);
      int k = std::min<int>(width, static_cast<int>(order.size()));
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&](int a, int c) { return row[a] > row[c]; });
      for (int j = 0; j < k; ++j) {
        Cand c = b;
        c.prefix.push_back(order[j]);
        c.nll += lse - row[order[j]];
        next.push_back(std::move(c));
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Cand& a, const Cand& b) { return a.nll < b.nll; });
    live.clear();
    for (Cand& c : next) {
      if (c.prefix.back() == Vocabulary::kEos) {
        if (static_cast<int>(done.size()) < width) done.push_back(finish(c, true));
      } else if (static_cast<int>(live.size()) < width) {
        live.push_back(std::move(c));
      }
    }
    if (static_cast<int>(done.size()) >= width) break;
  }
  if (done.empty()) {
    // Ran out of length everywhere; report the best unfinished beam.
    Cand best = live.front();
    return finish(best, false);
  }
  auto it = std::min_element(done.begin(), done.end(),
                             [](const DecodeResult& a, const DecodeResult& b) {
                               return a.score < b.score;
                             });
  return *it;
}

std::vector<Parameter*> EncoderDecoderModel::params() {
  std::vector<Parameter*> out;
  out.push_back(&emb_);
  for (auto& l : enc_) collect(l, out);
  for (auto& l : dec_) collect(l, out);
  collect(enc_final_, out);
  collect(dec_final_, out);
  return out;
}

void EncoderDecoderModel::save(const std::string& path) {
  std::vector<const Parameter*> ps;
  for (Parameter* p : params()) ps.push_back(p);
  write_checkpoint(path, ps);
}

void EncoderDecoderModel::load(const std::string& path) {
  load_checkpoint(path, params());
}

FluencyModel::FluencyModel(FluencyConfig cfg, int vocab_size, uint64_t seed,
                           std::string prefix)
    : cfg_(cfg) {
  if (vocab_size <= 0 || cfg_.d_model <= 0)
    throw ConfigError("fluency model: bad dimensions");
  SeededRng rng(seed);
  float es = 1.0f / std::sqrt(static_cast<float>(cfg_.d_model));
  emb_ = Parameter(prefix + "/emb",
                   normal_matrix(vocab_size, cfg_.d_model, es, rng));
  layers_.resize(cfg_.layers);
  for (int i = 0; i < cfg_.layers; ++i)
    init_encoder_layer(layers_[i], prefix + "/layer" + std::to_string(i),
                       cfg_.d_model, cfg_.ffn_hidden, rng);
  init_layernorm(final_, prefix + "/final", cfg_.d_model);
}

Var FluencyModel::logits_on(Tape& t, const std::vector<int>& input) {
  Var x = embed_tokens(t, emb_, input, true);
  for (auto& layer : layers_) x = encoder_layer(t, x, layer, cfg_.heads, true);
  x = apply_layernorm(t, x, final_);
  return matmul(t, x, transpose(t, t.param(emb_)));
}

Var FluencyModel::loss_on(Tape& t, const std::vector<int>& ids) {
  std::vector<int> input;
  input.reserve(ids.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), ids.begin(), ids.end());
  std::vector<int> targets(ids);
  targets.push_back(Vocabulary::kEos);
  return cross_entropy(t, logits_on(t, input), targets);
}

std::vector<double> FluencyModel::token_nlls(const std::vector<int>& ids) {
  if (ids.empty()) throw DimensionError("token_nlls: empty token sequence");
  std::vector<int> input;
  input.reserve(ids.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), ids.begin(), ids.end());
  Tape t(false);
  const Matrix& L = t.val(logits_on(t, input));
  std::vector<double> out(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    Eigen::RowVectorXf row = L.row(static_cast<int>(i));
    float mx = row.maxCoeff();
    float lse = mx + std::log((row.array() - mx).exp().sum());
    out[i] = lse - row[ids[i]];
  }
  return out;
}

double FluencyModel::mean_nll(const std::vector<int>& ids) {
  std::vector<double> nlls = token_nlls(ids);
  double total = 0.0;
  for (double x : nlls) total += x;
  return total / static_cast<double>(nlls.size());
}

double FluencyModel::perplexity(const std::vector<int>& ids) {
  return std::exp(mean_nll(ids));
}

std::vector<Parameter*> FluencyModel::params() {
  std::vector<Parameter*> out;
  out.push_back(&emb_);
  for (auto& l : layers_) collect(l, out);
  collect(final_, out);
  return out;
}

void FluencyModel::save(const std::string& path) {
  std::vector<const Parameter*> ps;
  for (Parameter* p : params()) ps.push_back(p);
  write_checkpoint(path, ps);
}

void FluencyModel::load(const std::string& path) {
  load_checkpoint(path, params());
}

std::vector<TokenPair> make_repeat_corpus(const SignalGrammar& g,
                                          const Vocabulary& v, int count,
                                          SeededRng& rng) {
  std::vector<TokenPair> out;
  out.reserve(count);
  auto sent = [&] { return g.generate(rng.uniform_int(2) ? 1 : 0, rng); };
  for (int i = 0; i < count; ++i) {
    uint64_t pick = rng.uniform_int(8);
    std::string src, tgt;
    if (pick < 2) {
      tgt = sent();
      src = "Repeat : " + tgt;
    } else if (pick == 2) {
      tgt = "<sep> " + sent();
      src = "Repeat : " + tgt;
    } else if (pick < 6) {
      int k = 1 + static_cast<int>(rng.uniform_int(3));
      std::string run;
      for (int j = 0; j < k; ++j) run += sent() + " ";
      tgt = run + "<sep> " + sent();
      src = "Repeat : " + tgt;
    } else {
      tgt = sent();
      if (rng.uniform_int(2)) tgt += " " + sent();
      src = tgt;
    }
    out.push_back({tokenize(src, v), tokenize(tgt, v)});
  }
  return out;
}

RepeatTrainStats train_repeat(EncoderDecoderModel& m,
                              std::vector<TokenPair> pairs,
                              const RepeatTrainConfig& cfg) {
  if (static_cast<int>(pairs.size()) <= cfg.holdout)
    throw DataError("repeat training: corpus smaller than the holdout");
  SeededRng order_rng(SeededRng::derive(cfg.seed, 11));
  SeededRng noise_rng(SeededRng::derive(cfg.seed, 12));
  order_rng.shuffle(pairs);
  std::vector<TokenPair> hold(pairs.end() - cfg.holdout, pairs.end());
  pairs.resize(pairs.size() - cfg.holdout);

  Adam opt(m.params(), {.lr = cfg.lr});
  std::vector<size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  RepeatTrainStats stats;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    int in_batch = 0;
    for (size_t n = 0; n < idx.size(); ++n) {
      const TokenPair& ex = pairs[idx[n]];
      try {
        Tape t;
        Var loss = m.loss_on(t, ex.src, ex.tgt, cfg.memory_noise, &noise_rng);
        loss_sum += scalar_of(t, loss);
        t.backward(loss);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("repeat training diverged: ") + e.what());
      }
      if (++in_batch == cfg.batch || n + 1 == idx.size()) {
        opt.step();
        opt.zero_grad();
        in_batch = 0;
      }
    }
    stats.last_loss = loss_sum / static_cast<double>(idx.size());
    stats.epochs = epoch;
    int exact = 0;
    for (const TokenPair& ex : hold) {
      DecodeResult r = m.greedy(m.encode(ex.src));
      if (r.ended && r.ids == ex.tgt) ++exact;
    }
    stats.holdout_exact = exact / static_cast<double>(hold.size());
    if (cfg.verbose)
      std::fprintf(stderr, "repeat epoch %d loss %.4f holdout %.4f\n", epoch,
                   stats.last_loss, stats.holdout_exact);
    if (stats.holdout_exact >= cfg.target) break;
  }
  return stats;
}

double train_fluency(FluencyModel& m, std::vector<std::vector<int>> texts,
                     const FluencyTrainConfig& cfg) {
  if (texts.empty()) throw DataError("fluency training: empty corpus");
  SeededRng order_rng(SeededRng::derive(cfg.seed, 21));
  Adam opt(m.params(), {.lr = cfg.lr});
  std::vector<size_t> idx(texts.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  double mean_loss = 0.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    int in_batch = 0;
    for (size_t n = 0; n < idx.size(); ++n) {
      try {
        Tape t;
        Var loss = m.loss_on(t, texts[idx[n]]);
        loss_sum += scalar_of(t, loss);
        t.backward(loss);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("fluency training diverged: ") + e.what());
      }
      if (++in_batch == cfg.batch || n + 1 == idx.size()) {
        opt.step();
        opt.zero_grad();
        in_batch = 0;
      }
    }
    mean_loss = loss_sum / static_cast<double>(idx.size());
    if (cfg.verbose)
      std::fprintf(stderr, "fluency epoch %d loss %.4f\n", epoch, mean_loss);
  }
  return mean_loss;
}

}  // namespace textpolicy
