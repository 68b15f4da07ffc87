#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "textpolicy/errors.hpp"
#include "textpolicy/repeat_model.hpp"
#include "textpolicy/transformer.hpp"
#include "textpolicy/vocab.hpp"

using namespace textpolicy;

namespace {

RepeatConfig tiny_repeat() {
  RepeatConfig c;
  c.d_model = 32;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.ffn_hidden = 64;
  c.max_len = 64;
  return c;
}

FluencyConfig tiny_fluency() {
  FluencyConfig c;
  c.d_model = 32;
  c.layers = 1;
  c.heads = 2;
  c.ffn_hidden = 64;
  return c;
}

}  // namespace

TEST_CASE("sinusoidal positions") {
  Matrix pe = sinusoidal_encoding(5, 4);
  for (int i = 0; i < 4; i += 2) {
    CHECK(pe(0, i) == 0.0f);
    CHECK(pe(0, i + 1) == 1.0f);
  }
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-6));
  CHECK(pe(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-6));
  double rate = std::pow(10000.0, -2.0 / 4.0);
  CHECK(pe(3, 2) == doctest::Approx(std::sin(3.0 * rate)).epsilon(1e-6));
  CHECK(pe(3, 3) == doctest::Approx(std::cos(3.0 * rate)).epsilon(1e-6));
}

TEST_CASE("embedding lookup scales by sqrt d") {
  SeededRng rng(3);
  Parameter emb("emb", normal_matrix(10, 16, 0.5f, rng));
  Tape t;
  Var x = embed_tokens(t, emb, {7, 2, 7}, false);
  const Matrix& v = t.val(x);
  REQUIRE(v.rows() == 3);
  float s = std::sqrt(16.0f);
  CHECK((v.row(0) - emb.value.row(7) * s).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((v.row(1) - emb.value.row(2) * s).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((v.row(2) - v.row(0)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("encoder output geometry at init") {
  EncoderDecoderModel m(tiny_repeat(), 20, 5);
  Matrix mem = m.encode({4, 5, 6, 7, 8});
  REQUIRE(mem.rows() == 5);
  REQUIRE(mem.cols() == 32);
  // Final layer norm with unit gain: every row has zero mean, norm sqrt(d).
  for (int i = 0; i < mem.rows(); ++i) {
    CHECK(std::abs(mem.row(i).mean()) < 1e-5f);
    CHECK(mem.row(i).norm() == doctest::Approx(std::sqrt(32.0f)).epsilon(1e-3));
  }
}

TEST_CASE("causal layers ignore the future") {
  FluencyModel m(tiny_fluency(), 15, 7);
  std::vector<int> a = {4, 5, 6, 7, 8, 9};
  std::vector<int> b = {4, 5, 6, 12, 13, 14};
  std::vector<double> na = m.token_nlls(a);
  std::vector<double> nb = m.token_nlls(b);
  // Same first three tokens: those per-token terms may only see the past, so
  // they agree bitwise; the tails must not.
  for (int i = 0; i < 3; ++i) CHECK(na[i] == nb[i]);
  CHECK(na[3] != nb[3]);
  CHECK(na[4] != nb[4]);
}

TEST_CASE("transformer loss gradient matches finite differences") {
  RepeatConfig rc = tiny_repeat();
  rc.d_model = 16;
  rc.ffn_hidden = 24;
  EncoderDecoderModel m(rc, 12, 13);
  std::vector<int> src = {4, 5, 6, 7};
  std::vector<int> tgt = {4, 5, 6, 7};
  auto loss_value = [&] {
    Tape t(false);
    return scalar_of(t, m.loss_on(t, src, tgt));
  };
  Tape t;
  Var loss = m.loss_on(t, src, tgt);
  for (Parameter* p : m.params()) p->zero_grad();
  t.backward(loss);

  SeededRng pick(17);
  std::vector<Parameter*> ps = m.params();
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    Parameter* p = ps[pick.uniform_int(ps.size())];
    int i = static_cast<int>(pick.uniform_int(p->value.rows()));
    int j = static_cast<int>(pick.uniform_int(p->value.cols()));
    float a = p->grad(i, j);
    float keep = p->value(i, j);
    const float h = 1e-2f;
    p->value(i, j) = keep + h;
    float up = loss_value();
    p->value(i, j) = keep - h;
    float dn = loss_value();
    p->value(i, j) = keep;
    float fd = (up - dn) / (2.0f * h);
    if (std::abs(fd) < 1e-3f && std::abs(a) < 1e-3f) continue;  // too quiet to call
    // Loose bound: this is a wiring check, f32 central differences carry
    // noise; the per-op harness holds the tight tolerance.
    CHECK(std::abs(a - fd) <= 0.1f * std::max({std::abs(a), std::abs(fd), 0.05f}));
    ++checked;
  }
  CHECK(checked >= 4);
}

TEST_CASE("repeat corpus shapes") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  Vocabulary v = build_vocab(g.word_list());
  SeededRng rng(19);
  std::vector<TokenPair> pairs = make_repeat_corpus(g, v, 400, rng);
  REQUIRE(pairs.size() == 400);
  int prompted = 0, with_sep = 0;
  std::vector<int> prompt = tokenize("Repeat :", v);
  for (const TokenPair& p : pairs) {
    CHECK(!p.tgt.empty());
    for (int id : p.src) CHECK(id < v.size());
    bool has_prompt = p.src.size() >= 2 && p.src[0] == prompt[0] && p.src[1] == prompt[1];
    if (has_prompt) {
      ++prompted;
      std::vector<int> echoed(p.src.begin() + 2, p.src.end());
      CHECK(echoed == p.tgt);
    } else {
      CHECK(p.src == p.tgt);
    }
    for (int id : p.tgt)
      if (id == Vocabulary::kSep) { ++with_sep; break; }
  }
  CHECK(prompted > 250);  // about 6 of 8 draws
  CHECK(prompted < 350);
  CHECK(with_sep > 150);  // about half the draws carry a separator
}

TEST_CASE("repeat model learns to echo a tiny corpus") {
  // One training run feeds all the checks below; subcases would redo it.
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  Vocabulary v = build_vocab(g.word_list());
  SeededRng rng(23);
  std::vector<TokenPair> pairs = make_repeat_corpus(g, v, 900, rng);
  RepeatConfig rc = tiny_repeat();
  rc.d_model = 48;
  rc.ffn_hidden = 96;
  EncoderDecoderModel m(rc, v.size(), 29);
  RepeatTrainConfig tc;
  tc.seed = 31;
  tc.lr = 3e-3f;
  tc.holdout = 40;
  tc.max_epochs = 30;
  tc.target = 0.9;
  tc.memory_noise = 0.05f;
  RepeatTrainStats st = train_repeat(m, pairs, tc);
  CHECK(st.holdout_exact >= 0.9);
  CHECK(st.epochs < 30);

  // Decode determinism.
  Matrix mem = m.encode(tokenize("Repeat : the food at this place was good", v));
  DecodeResult da = m.decode(mem);
  DecodeResult db = m.decode(mem);
  CHECK(da.ids == db.ids);
  CHECK(std::memcmp(&da.score, &db.score, sizeof(float)) == 0);

  // Beam decode round trips a training-like sentence.
  std::string s = "the food at this place was bad";
  DecodeResult r = m.decode(m.encode(tokenize("Repeat : " + s, v)));
  CHECK(r.ended);
  CHECK(detokenize(r.ids, v) == s);

  // Checkpoint round trip restores behavior bitwise.
  namespace fs = std::filesystem;
  fs::path ck = fs::temp_directory_path() / "tp_repeat_ck.bin";
  m.save(ck.string());
  EncoderDecoderModel fresh(rc, v.size(), 999);
  std::vector<int> ids = tokenize("Repeat : the food at this place was good", v);
  CHECK(fresh.encode(ids) != m.encode(ids));
  fresh.load(ck.string());
  Matrix ea = m.encode(ids), eb = fresh.encode(ids);
  REQUIRE(ea.rows() == eb.rows());
  CHECK(std::memcmp(ea.data(), eb.data(), sizeof(float) * ea.size()) == 0);
  fs::remove(ck);

  // Edited memory still decodes; empty memory does not.
  Matrix bent = m.encode(tokenize("Repeat : the food at this place was good", v));
  bent.row(bent.rows() - 1).array() += 0.25f;
  CHECK(!m.decode(bent).ids.empty());
  Matrix none(0, rc.d_model);
  CHECK_THROWS_AS(m.decode(none), DimensionError);
}

TEST_CASE("fluency model ranks grammar text above token salad") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  Vocabulary v = build_vocab(g.word_list());
  SeededRng rng(37);
  std::vector<std::vector<int>> texts;
  for (int i = 0; i < 300; ++i)
    texts.push_back(tokenize(g.generate(i % 2, rng), v));
  FluencyModel m(tiny_fluency(), v.size(), 41);
  FluencyTrainConfig fc;
  fc.epochs = 4;
  fc.seed = 43;
  double loss = train_fluency(m, texts, fc);
  CHECK(std::isfinite(loss));

  std::vector<int> real = tokenize(g.generate(1, rng), v);
  std::vector<int> salad = real;
  SeededRng srng(47);
  srng.shuffle(salad);
  salad.insert(salad.begin(), salad.back());
  CHECK(m.perplexity(real) == doctest::Approx(std::exp(m.mean_nll(real))));
  CHECK(m.mean_nll(real) < m.mean_nll(salad));

  CHECK_THROWS_AS(m.mean_nll({}), DimensionError);

  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "tp_fluency_ck.bin";
  m.save(p.string());
  FluencyModel fresh(tiny_fluency(), v.size(), 555);
  fresh.load(p.string());
  CHECK(fresh.mean_nll(real) == m.mean_nll(real));
  fs::remove(p);
}
