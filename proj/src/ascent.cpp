#include "textpolicy/ascent.hpp"

#include <algorithm>
#include <cmath>

#include "textpolicy/edit_distance.hpp"
#include "textpolicy/errors.hpp"

namespace textpolicy {

AscentTrace ascend(StageClassifier& clf, const Matrix& memory, int span_start,
                   int span_len, const AscentConfig& cfg) {
  if (span_start < 0 || span_len <= 0 ||
      span_start + span_len > memory.rows())
    throw DimensionError("ascend: span outside the memory");
  Matrix X = memory;
  SeededRng rng(cfg.seed);
  AscentTrace tr;
  tr.spans.push_back(X.middleRows(span_start, span_len));
  tr.p.push_back(clf.predict(X));
  for (int k = 1; k <= cfg.iterations; ++k) {
    Tape t(true, false);  // divergence is handled by truncation, not throwing
    Var x = t.leaf(X, true);
    Var loss = cross_entropy(t, clf.logits_on(t, x), 1);
    t.backward(loss);
    Matrix g = t.grad(x);
    X.middleRows(span_start, span_len) -=
        cfg.eta * g.middleRows(span_start, span_len);
    if (k == 1 && cfg.init_noise > 0.0f)
      X.middleRows(span_start, span_len) += normal_matrix(
          span_len, static_cast<int>(X.cols()), cfg.init_noise, rng);
    if (!X.middleRows(span_start, span_len).allFinite()) {
      tr.nan_truncated = true;
      break;
    }
    float p;
    try {
      p = clf.predict(X);
    } catch (const NumericError&) {
      tr.nan_truncated = true;
      break;
    }
    if (!std::isfinite(p)) {
      tr.nan_truncated = true;
      break;
    }
    tr.spans.push_back(X.middleRows(span_start, span_len));
    tr.p.push_back(p);
  }
  return tr;
}

SplitDecode decode_split(EncoderDecoderModel& enc, const Vocabulary& v,
                         const Matrix& memory, int prompt_len, int span_start,
                         int span_len) {
  DecodeResult r = enc.decode(memory);
  SplitDecode out;
  out.nll = r.nll;
  out.score = r.score;
  out.ended = r.ended;
  auto it = std::find(r.ids.begin(), r.ids.end(), Vocabulary::kSep);
  if (it != r.ids.end()) {
    out.history = detokenize(std::vector<int>(r.ids.begin(), it), v);
    out.action = detokenize(std::vector<int>(it + 1, r.ids.end()), v);
    return out;
  }
  out.no_sep = true;
  Matrix fb(prompt_len + span_len, memory.cols());
  fb.topRows(prompt_len) = memory.topRows(prompt_len);
  fb.bottomRows(span_len) = memory.middleRows(span_start, span_len);
  DecodeResult r2 = enc.decode(fb);
  out.action = detokenize(r2.ids, v);
  out.nll = r2.nll;
  out.score = r2.score;
  out.ended = r2.ended;
  return out;
}

namespace {

constexpr int kPromptLen = 2;  // "Repeat :"

}  // namespace

RefineOutcome refine_action(EncoderDecoderModel& enc, const Vocabulary& v,
                            StageClassifier& clf, const std::string& history,
                            const std::string& action, const AscentConfig& cfg,
                            FluencyModel* fl) {
  std::vector<int> act_ids = tokenize(action, v);
  if (act_ids.empty()) throw DataError("refine: empty action");
  if (cfg.nll_best && !fl)
    throw ConfigError("refine: nll_best selection needs a fluency model");
  std::vector<int> ids = tokenize(build_stage_input(history, action), v);
  int span_len = static_cast<int>(act_ids.size());
  int span_start = static_cast<int>(ids.size()) - span_len;
  Matrix mem = enc.encode(ids);
  AscentTrace tr = ascend(clf, mem, span_start, span_len, cfg);

  RefineOutcome out;
  out.action = action;
  out.p_before = tr.p[0];
  out.p_after = tr.p[0];
  out.iterations = static_cast<int>(tr.spans.size()) - 1;
  if (tr.nan_truncated) out.flags.push_back("nan_truncated");

  // Candidate snapshots to decode. Last-iterate mode walks backwards and
  // stops at the first usable decode, so a final snapshot that decodes
  // badly falls back to the latest one that does not.
  std::vector<int> order;
  if (cfg.nll_best) {
    for (int k = 1; k < static_cast<int>(tr.spans.size()); ++k)
      if (tr.p[k] > tr.p[0]) order.push_back(k);
  } else {
    for (int k = static_cast<int>(tr.spans.size()) - 1; k >= 1; --k)
      if (tr.p[k] > tr.p[0]) order.push_back(k);
  }

  // Keep the lowest-NLL candidate whose re-encoded text strictly improves
  // on the original. Ties keep the earliest snapshot.
  bool found = false;
  double best_nll = 0.0;
  for (int k : order) {
    Matrix cand = mem;
    cand.middleRows(span_start, span_len) = tr.spans[k];
    SplitDecode sd = decode_split(enc, v, cand, kPromptLen, span_start,
                                  span_len);
    if (sd.action.empty()) continue;
    float p_new;
    try {
      p_new = clf.predict(
          enc.encode(tokenize(build_stage_input(history, sd.action), v)));
    } catch (const DataError&) {
      continue;  // decoded text with no whole tokens
    }
    if (p_new <= out.p_before) continue;
    double nll = fl ? fl->mean_nll(tokenize(sd.action, v))
                    : static_cast<double>(sd.score);
    if (found && nll >= best_nll) continue;
    found = true;
    best_nll = nll;
    out.action = sd.action;
    out.p_after = p_new;
    out.nll = static_cast<float>(nll);
    out.flags.clear();
    if (tr.nan_truncated) out.flags.push_back("nan_truncated");
    if (sd.no_sep) out.flags.push_back("no_sep");
    if (!sd.ended) out.flags.push_back("no_eos");
    if (!cfg.nll_best) break;
  }
  if (out.action == action) out.flags.push_back("no_improvement");
  return out;
}

const RefineOutcome& pick_tts_winner(const RefineOutcome& a,
                                     const RefineOutcome& b,
                                     const std::string& original) {
  if (std::abs(a.p_after - b.p_after) > 1e-4f)
    return a.p_after > b.p_after ? a : b;
  size_t da = edit_distance(original, a.action);
  size_t db = edit_distance(original, b.action);
  return db < da ? b : a;
}

RefineOutcome tts_refine(EncoderDecoderModel& enc, const Vocabulary& v,
                         StageClassifier& clf, const std::string& history,
                         const std::string& action, const AscentConfig& cfg,
                         float tts_noise, FluencyModel* fl) {
  AscentConfig first = cfg;
  first.init_noise = 0.0f;
  RefineOutcome a = refine_action(enc, v, clf, history, action, first, fl);
  AscentConfig second = cfg;
  second.init_noise = tts_noise;
  second.seed = SeededRng::derive(cfg.seed, 1);
  RefineOutcome b = refine_action(enc, v, clf, history, action, second, fl);
  return pick_tts_winner(a, b, action);
}

}  // namespace textpolicy
