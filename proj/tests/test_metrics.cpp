#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "textpolicy/errors.hpp"
#include "textpolicy/metrics.hpp"
#include "textpolicy/qlearn.hpp"

using namespace textpolicy;

namespace {

struct FrozenRow {
  float sim, str, flu, gm, hm;
};

// Fifteen frozen (similarity, strength, fluency) -> (gm, hm) pairs pin the
// aggregation arithmetic, including the 100/ln(fluency) transform.
const FrozenRow kFrozen[] = {
    {80.7f, 41.1f, 138.0f, 40.7f, 34.9f}, {74.0f, 57.3f, 142.5f, 44.1f, 37.2f},
    {82.8f, 23.7f, 130.7f, 34.3f, 29.1f}, {57.0f, 23.1f, 447.4f, 27.8f, 24.6f},
    {63.6f, 23.3f, 100.2f, 31.8f, 28.7f}, {65.3f, 77.7f, 173.0f, 46.2f, 37.6f},
    {65.3f, 90.5f, 161.5f, 48.8f, 38.9f}, {69.2f, 72.9f, 116.5f, 47.3f, 39.6f},
    {69.8f, 74.8f, 276.0f, 45.3f, 35.8f}, {65.8f, 88.0f, 174.5f, 48.2f, 38.4f},
    {75.4f, 52.1f, 119.6f, 43.5f, 37.4f}, {73.1f, 63.5f, 117.2f, 46.0f, 38.9f},
    {66.5f, 67.3f, 91.4f, 46.3f, 40.0f},  {59.5f, 55.9f, 172.6f, 40.1f, 34.8f},
    {52.0f, 43.9f, 69.5f, 37.8f, 35.5f},
};

RepeatConfig tiny_repeat() {
  RepeatConfig rc;
  rc.d_model = 32;
  rc.enc_layers = 1;
  rc.dec_layers = 1;
  rc.heads = 2;
  rc.ffn_hidden = 64;
  rc.max_len = 64;
  return rc;
}

ClassifierConfig tiny_clf() {
  ClassifierConfig cc;
  cc.d_model = 32;
  cc.layers = 1;
  cc.heads = 2;
  cc.ffn_hidden = 64;
  return cc;
}

}  // namespace

TEST_CASE("aggregate matches frozen reference pairs") {
  for (const FrozenRow& r : kFrozen) {
    Aggregate a = aggregate(r.sim, r.str, r.flu);
    CHECK(std::abs(a.gm - r.gm) <= 0.15f);
    CHECK(std::abs(a.hm - r.hm) <= 0.15f);
  }
}

TEST_CASE("aggregate identities and ordering") {
  // Equal components: f' = 100/ln(e^2) = 50, so gm = hm = 50 exactly.
  Aggregate eq = aggregate(50.0f, 50.0f, std::exp(2.0f));
  CHECK(eq.gm == doctest::Approx(50.0f).epsilon(1e-4));
  CHECK(eq.hm == doctest::Approx(50.0f).epsilon(1e-4));

  // hm <= gm <= max component for random valid triples.
  SeededRng rng(91);
  for (int i = 0; i < 500; ++i) {
    float sim = 1.0f + 99.0f * rng.uniform();
    float str = 1.0f + 99.0f * rng.uniform();
    float flu = 3.0f + 400.0f * rng.uniform();
    Aggregate a = aggregate(sim, str, flu);
    float f = 100.0f / std::log(flu);
    float mx = std::max({sim, str, f});
    CHECK(a.hm <= a.gm + 1e-4f);
    CHECK(a.gm <= mx + 1e-3f);
  }
}

TEST_CASE("aggregate domain errors") {
  CHECK_THROWS_AS(aggregate(0.0f, 50.0f, 100.0f), NumericError);
  CHECK_THROWS_AS(aggregate(50.0f, 101.0f, 100.0f), NumericError);
  CHECK_THROWS_AS(aggregate(50.0f, 50.0f, 2.7f), NumericError);
  CHECK_THROWS_AS(aggregate(-3.0f, 50.0f, 100.0f), NumericError);
  CHECK_NOTHROW(aggregate(100.0f, 100.0f, 2.72f));
}

TEST_CASE("signal accuracy lexicon scan") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);

  SignalReport r = signal_accuracy(
      {"the food was good", "the food was fine", "the food was bad"}, g);
  CHECK(r.n == 3);
  CHECK(r.converted == doctest::Approx(1.0f / 3.0f));
  CHECK(r.deleted == doctest::Approx(2.0f / 3.0f));

  // converted <= deleted on arbitrary mixes.
  SeededRng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> texts;
    for (int i = 0; i < 30; ++i) texts.push_back(g.generate(rng.uniform_int(2), rng));
    SignalReport s = signal_accuracy(texts, g);
    CHECK(s.converted <= s.deleted);
    CHECK(s.deleted <= 1.0f);
    CHECK(s.converted >= 0.0f);
  }

  SignalReport empty = signal_accuracy({}, g);
  CHECK(empty.n == 0);
  CHECK(empty.converted == 0.0f);

  // Two-pair mode accepts either positive word.
  SignalGrammar g2 = SignalGrammar::standard(SignalGrammar::Mode::TwoPairs);
  SignalReport two = signal_accuracy({"the food was happy"}, g2);
  CHECK(two.converted == 1.0f);
}

TEST_CASE("similarity basics") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  Vocabulary v = build_vocab(g.word_list());
  EncoderDecoderModel m(tiny_repeat(), v.size(), 3);

  SeededRng rng(17);
  std::vector<std::string> a, b;
  for (int i = 0; i < 20; ++i) a.push_back(g.generate(rng.uniform_int(2), rng));

  // Identical pairs pool to identical vectors: exactly 100.
  float self = similarity(a, a, m, v);
  CHECK(self == doctest::Approx(100.0f).epsilon(1e-5));

  // Symmetric per pair, hence symmetric in aggregate.
  for (int i = 0; i < 20; ++i) b.push_back(g.generate(rng.uniform_int(2), rng));
  float ab = similarity(a, b, m, v);
  float ba = similarity(b, a, m, v);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-5));

  // Unrelated sentences score below identical ones (200 pairs).
  std::vector<std::string> c, d;
  for (int i = 0; i < 200; ++i) {
    c.push_back(g.generate(rng.uniform_int(2), rng));
    d.push_back(g.generate(rng.uniform_int(2), rng));
  }
  CHECK(similarity(c, d, m, v) < self);

  CHECK_THROWS_AS(similarity(a, c, m, v), DimensionError);
  CHECK_THROWS_AS(similarity({}, {}, m, v), DataError);
}

TEST_CASE("strength and fluency plumbing") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  Vocabulary v = build_vocab(g.word_list());
  EncoderDecoderModel m(tiny_repeat(), v.size(), 3);
  StageClassifier clf(tiny_clf(), 7, "t/clf");

  SeededRng rng(23);
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back(g.generate(rng.uniform_int(2), rng));

  float s1 = transfer_strength(texts, clf, m, v);
  float s2 = transfer_strength(texts, clf, m, v);
  CHECK(std::memcmp(&s1, &s2, sizeof(float)) == 0);
  CHECK(s1 >= 0.0f);
  CHECK(s1 <= 100.0f);
  // Values are multiples of 100/n.
  float scaled = s1 / 10.0f;
  CHECK(std::abs(scaled - std::round(scaled)) < 1e-4f);
  CHECK_THROWS_AS(transfer_strength({}, clf, m, v), DataError);

  FluencyModel fm(FluencyConfig{32, 1, 2, 64}, v.size(), 9);
  int skipped = -1;
  float f = fluency(texts, fm, v, &skipped);
  CHECK(skipped == 0);
  CHECK(f > 0.0f);

  std::vector<std::string> with_empty = texts;
  with_empty.push_back("");
  float f2 = fluency(with_empty, fm, v, &skipped);
  CHECK(skipped == 1);
  CHECK(f2 == doctest::Approx(f).epsilon(1e-5));
  CHECK_THROWS_AS(fluency({"", ""}, fm, v, &skipped), DataError);
}

TEST_CASE("eval classifier training plumbing") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  Vocabulary v = build_vocab(g.word_list());
  EncoderDecoderModel m(tiny_repeat(), v.size(), 3);

  SeededRng rng(31);
  std::vector<Trajectory> train = assemble_trajectories(g, 2, 2, rng);
  ClassifierTrainConfig tc;
  tc.epochs = 1;
  StageClassifier clf =
      train_eval_classifier(m, v, train, tiny_clf(), tc, 77);

  Matrix mem = m.encode(tokenize(build_stage_input("", "the food at this place was good"), v));
  float p1 = clf.predict(mem);
  CHECK(p1 > 0.0f);
  CHECK(p1 < 1.0f);

  // Same seed reproduces the same classifier.
  StageClassifier again =
      train_eval_classifier(m, v, train, tiny_clf(), tc, 77);
  float p2 = again.predict(mem);
  CHECK(std::memcmp(&p1, &p2, sizeof(float)) == 0);

  // No labeled stages -> nothing to fit.
  std::vector<Trajectory> unlabeled = train;
  for (auto& t : unlabeled)
    for (auto& st : t.stages) st.label.reset();
  CHECK_THROWS_AS(train_eval_classifier(m, v, unlabeled, tiny_clf(), tc, 77),
                  DataError);
}
