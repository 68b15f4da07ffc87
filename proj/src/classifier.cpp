#include "textpolicy/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "textpolicy/adam.hpp"
#include "textpolicy/checkpoint.hpp"

namespace textpolicy {

StageClassifier::StageClassifier(ClassifierConfig cfg, uint64_t seed,
                                 std::string prefix)
    : cfg_(cfg) {
  SeededRng rng(seed);
  layers_.resize(cfg_.layers);
  for (int i = 0; i < cfg_.layers; ++i)
    init_encoder_layer(layers_[i], prefix + "/layer" + std::to_string(i),
                       cfg_.d_model, cfg_.ffn_hidden, rng);
  init_layernorm(final_, prefix + "/final", cfg_.d_model);
  float s = 1.0f / std::sqrt(static_cast<float>(cfg_.d_model));
  head_w_ = Parameter(prefix + "/head_w", normal_matrix(cfg_.d_model, 2, s, rng));
  head_b_ = Parameter(prefix + "/head_b", Matrix::Zero(1, 2));
}

Var StageClassifier::logits_on(Tape& t, Var memory, bool train, SeededRng* rng) {
  if (t.val(memory).cols() != cfg_.d_model)
    throw DimensionError("classifier: memory width mismatch");
  float rate = train ? cfg_.dropout : 0.0f;
  if (rate > 0.0f && !rng) throw ConfigError("classifier: dropout needs an rng");
  Var x = memory;
  for (auto& layer : layers_)
    x = encoder_layer(t, x, layer, cfg_.heads, false, rate, rng);
  x = apply_layernorm(t, x, final_);
  Var pooled = mean_rows(t, x);
  return add(t, matmul(t, pooled, t.param(head_w_)), t.param(head_b_));
}

float StageClassifier::predict(const Matrix& memory) {
  Tape t(false);
  const Matrix& lg = t.val(logits_on(t, t.constant(memory)));
  float mx = std::max(lg(0, 0), lg(0, 1));
  float e0 = std::exp(lg(0, 0) - mx), e1 = std::exp(lg(0, 1) - mx);
  return e1 / (e0 + e1);
}

std::vector<Parameter*> StageClassifier::params() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) collect(l, out);
  collect(final_, out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

void StageClassifier::save(const std::string& path) {
  std::vector<const Parameter*> ps;
  for (Parameter* p : params()) ps.push_back(p);
  write_checkpoint(path, ps);
}

void StageClassifier::load(const std::string& path) {
  load_checkpoint(path, params());
}

ClassifierFitStats fit_stage_classifier(StageClassifier& c,
                                        const std::vector<ClassifierExample>& examples,
                                        const ClassifierTrainConfig& cfg) {
  if (examples.empty()) throw DataError("classifier fit: no examples");
  int pos = 0;
  for (const ClassifierExample& e : examples) {
    if (!(e.target >= 0.0f && e.target <= 1.0f))
      throw DataError("classifier fit: target outside [0, 1]");
    if (e.target >= 0.5f) ++pos;
  }
  int neg = static_cast<int>(examples.size()) - pos;
  if (pos == 0 || neg == 0)
    throw DataError("classifier fit: all examples on one side of 0.5");

  // Worse than 90/10: weight each class to equal total mass.
  float w_pos = 1.0f, w_neg = 1.0f;
  double frac = pos / static_cast<double>(examples.size());
  if (frac > 0.9 || frac < 0.1) {
    w_pos = examples.size() / (2.0f * pos);
    w_neg = examples.size() / (2.0f * neg);
  }

  SeededRng order_rng(SeededRng::derive(cfg.seed, 31));
  SeededRng drop_rng(SeededRng::derive(cfg.seed, 32));
  Adam opt(c.params(), {.lr = cfg.lr});
  std::vector<size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  ClassifierFitStats stats;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    int in_batch = 0;
    for (size_t n = 0; n < idx.size(); ++n) {
      const ClassifierExample& ex = examples[idx[n]];
      float w = ex.target >= 0.5f ? w_pos : w_neg;
      try {
        Tape t;
        Matrix input = ex.memory;
        if (cfg.input_noise > 0.0f)
          for (int r = 0; r < input.rows(); ++r)
            for (int cix = 0; cix < input.cols(); ++cix)
              input(r, cix) += drop_rng.normal(0.0f, cfg.input_noise);
        int hist_rows = input.rows() - ex.protect_tail;
        if (cfg.history_noise > 0.0f)
          for (int r = 0; r < hist_rows; ++r)
            for (int cix = 0; cix < input.cols(); ++cix)
              input(r, cix) += drop_rng.normal(0.0f, cfg.history_noise);
        if (cfg.history_dropout > 0.0f &&
            drop_rng.uniform() < cfg.history_dropout)
          for (int r = 0; r < hist_rows; ++r) input.row(r).setZero();
        Var lg = c.logits_on(t, t.constant(input), true, &drop_rng);
        Matrix target(1, 2);
        target << 1.0f - ex.target, ex.target;
        Var loss = scale(t, cross_entropy_soft(t, lg, target),
                         w / static_cast<float>(cfg.batch));
        loss_sum += scalar_of(t, loss);
        t.backward(loss);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("classifier fit diverged: ") + e.what());
      }
      if (++in_batch == cfg.batch || n + 1 == idx.size()) {
        opt.step();
        opt.zero_grad();
        in_batch = 0;
      }
    }
    stats.last_loss = loss_sum * cfg.batch / static_cast<double>(idx.size());
    if (cfg.verbose)
      std::fprintf(stderr, "classifier epoch %d loss %.4f\n", epoch,
                   stats.last_loss);
  }
  int agree = 0;
  for (const ClassifierExample& ex : examples)
    if ((c.predict(ex.memory) >= 0.5f) == (ex.target >= 0.5f)) ++agree;
  stats.train_acc = agree / static_cast<double>(examples.size());
  return stats;
}

}  // namespace textpolicy
