#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "textpolicy/edit_distance.hpp"
#include "textpolicy/errors.hpp"
#include "textpolicy/grammar.hpp"
#include "textpolicy/trajectory.hpp"
#include "textpolicy/vocab.hpp"

using namespace textpolicy;

TEST_CASE("vocabulary basics") {
  Vocabulary v = build_vocab({"the food was great", "The Food was cold"});
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kSep) == "<sep>");
  CHECK(v.token(Vocabulary::kRepeat) == "Repeat");
  CHECK(v.token(Vocabulary::kColon) == ":");
  CHECK(v.contains("the"));
  CHECK(v.contains("cold"));
  CHECK_FALSE(v.contains("The"));
  CHECK(v.size() == Vocabulary::kReserved + 5);

  SUBCASE("round trip is the identity on known text") {
    std::string text = "the food was cold";
    CHECK(detokenize(tokenize(text, v), v) == text);
    CHECK(detokenize(tokenize("Repeat : the food", v), v) == "Repeat : the food");
  }

  SUBCASE("empty text tokenizes to nothing") {
    CHECK(tokenize("", v).empty());
    CHECK(tokenize("   ", v).empty());
  }

  SUBCASE("unknown words are named in the error") {
    try {
      tokenize("the zebra", v);
      FAIL("expected a DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("zebra") != std::string::npos);
    }
  }

  SUBCASE("ids are a bijection") {
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
  }

  SUBCASE("save and load preserve everything") {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "tp_vocab_test.json";
    v.save(p.string());
    Vocabulary u = Vocabulary::load(p.string());
    CHECK(u.size() == v.size());
    CHECK(u.content_hash() == v.content_hash());
    for (int i = 0; i < v.size(); ++i) CHECK(u.token(i) == v.token(i));
    fs::remove(p);
  }
}

TEST_CASE("signal grammar") {
  SignalGrammar g1 = SignalGrammar::standard(SignalGrammar::Mode::OnePair);
  SignalGrammar g2 = SignalGrammar::standard(SignalGrammar::Mode::TwoPairs);

  SUBCASE("labels follow the slot word") {
    SeededRng rng(1);
    for (int i = 0; i < 200; ++i) {
      std::string neg = g2.generate(0, rng);
      std::string pos = g2.generate(1, rng);
      CHECK(g2.has_negative(neg));
      CHECK_FALSE(g2.has_positive(neg));
      CHECK(g2.has_positive(pos));
      CHECK_FALSE(g2.has_negative(pos));
    }
  }

  SUBCASE("one-pair mode only uses bad and good") {
    SeededRng rng(2);
    for (int i = 0; i < 100; ++i) {
      std::string neg = g1.generate(0, rng);
      bool has_bad = false;
      for (const std::string& w : split_ws(neg)) {
        if (w == "bad") has_bad = true;
        CHECK(w != "sad");
      }
      CHECK(has_bad);
    }
  }

  SUBCASE("two-pair mode picks each pair about half the time") {
    SeededRng rng(3);
    int sad = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      std::string s = g2.generate(0, rng);
      for (const std::string& w : split_ws(s)) {
        if (w == "sad") ++sad;
      }
    }
    double frac = static_cast<double>(sad) / n;
    CHECK(frac > 0.47);
    CHECK(frac < 0.53);
  }

  SUBCASE("templates are used roughly uniformly") {
    SeededRng rng(4);
    std::map<std::string, int> seen;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      std::string s = g1.generate(1, rng);
      for (std::string& w : split_ws(s)) {
        if (w == "good") w = "{}";
      }
      seen[s]++;
    }
    // Count per template, not per sentence: rebuild keys by stripping the word.
    CHECK(seen.size() == g1.templates().size());
  }

  SUBCASE("vocabulary stays small and sentences short") {
    std::vector<std::string> words = g2.word_list();
    CHECK(static_cast<int>(words.size()) + Vocabulary::kReserved <= 300);
    for (const std::string& t : g2.templates()) {
      CHECK(split_ws(t).size() <= 12);
      CHECK(split_ws(t).size() >= 4);
    }
  }

  SUBCASE("generation is deterministic per seed") {
    SeededRng a(9), b(9);
    for (int i = 0; i < 50; ++i) CHECK(g2.generate(i % 2, a) == g2.generate(i % 2, b));
  }
}

TEST_CASE("trajectory assembly") {
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::OnePair);

  SUBCASE("per-pattern counts and outcome spread") {
    SeededRng rng(5);
    std::vector<Trajectory> trajs = assemble_trajectories(g, 2, 250, rng);
    REQUIRE(trajs.size() == 1000);
    std::map<int, int> outcomes;
    for (const Trajectory& t : trajs) {
      REQUIRE(t.stages.size() == 2);
      outcomes[t.outcome]++;
      int positives = 0;
      for (const Stage& s : t.stages) {
        REQUIRE(s.label.has_value());
        CHECK(s.action == s.source);
        CHECK(g.has_positive(s.source) == (*s.label == 1));
        positives += *s.label;
      }
      CHECK(positives == t.outcome);
    }
    CHECK(outcomes[2] == 250);
    CHECK(outcomes[1] == 500);
    CHECK(outcomes[0] == 250);
  }

  SUBCASE("ids are unique") {
    SeededRng rng(6);
    std::vector<Trajectory> trajs = assemble_trajectories(g, 2, 10, rng);
    std::set<std::string> ids;
    for (const Trajectory& t : trajs) ids.insert(t.id);
    CHECK(ids.size() == trajs.size());
  }

  SUBCASE("test set places one negative per trajectory") {
    SeededRng rng(7);
    std::vector<Trajectory> trajs = make_test_trajectories(g, 2, 400, "base", rng);
    REQUIRE(trajs.size() == 400);
    int neg_at_first = 0;
    for (const Trajectory& t : trajs) {
      int negs = 0;
      for (size_t s = 0; s < t.stages.size(); ++s) {
        if (*t.stages[s].label == 0) {
          ++negs;
          if (s == 0) ++neg_at_first;
        }
      }
      CHECK(negs == 1);
      CHECK(t.outcome == 1);
    }
    CHECK(neg_at_first > 120);
    CHECK(neg_at_first < 280);
  }

  SUBCASE("one-stage variant pins the negative to stage 1") {
    SeededRng rng(8);
    std::vector<Trajectory> trajs = make_test_trajectories(g, 2, 50, "one-stage", rng);
    for (const Trajectory& t : trajs) {
      CHECK(*t.stages[0].label == 0);
      CHECK(*t.stages[1].label == 1);
    }
  }
}

TEST_CASE("history flattening") {
  Trajectory t;
  t.id = "x";
  t.stages = {{"s one", "a one", 1}, {"s two", "a two", 0}};
  t.outcome = 1;
  CHECK(History{&t, 1}.flatten() == "");
  CHECK(History{&t, 2}.flatten() == "s one a one s two");
}

TEST_CASE("trajectory files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "tp_traj_test";
  fs::create_directories(dir);
  SignalGrammar g = SignalGrammar::standard(SignalGrammar::Mode::TwoPairs);
  SeededRng rng(11);
  std::vector<Trajectory> trajs = assemble_trajectories(g, 2, 5, rng);

  SUBCASE("round trip and byte stability") {
    std::string p1 = (dir / "a.jsonl").string();
    std::string p2 = (dir / "b.jsonl").string();
    write_trajectories(p1, trajs);
    std::vector<Trajectory> back = read_trajectories(p1);
    REQUIRE(back.size() == trajs.size());
    for (size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].id == trajs[i].id);
      CHECK(back[i].outcome == trajs[i].outcome);
      REQUIRE(back[i].stages.size() == trajs[i].stages.size());
      for (size_t s = 0; s < back[i].stages.size(); ++s) {
        CHECK(back[i].stages[s].source == trajs[i].stages[s].source);
        CHECK(back[i].stages[s].action == trajs[i].stages[s].action);
        CHECK(back[i].stages[s].label == trajs[i].stages[s].label);
      }
    }
    write_trajectories(p2, back);
    std::ifstream f1(p1), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(!s1.empty());
  }

  SUBCASE("empty file reads as empty set") {
    std::string p = (dir / "empty.jsonl").string();
    std::ofstream(p).close();
    CHECK(read_trajectories(p).empty());
  }

  SUBCASE("missing file names the path") {
    try {
      read_trajectories((dir / "nope.jsonl").string());
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("nope.jsonl") != std::string::npos);
    }
  }

  SUBCASE("malformed line reports its number") {
    std::string p = (dir / "bad.jsonl").string();
    std::ofstream out(p);
    out << R"({"id":"ok","stages":[{"source":"s","action":"s"}],"outcome":0})" << "\n";
    out << "{not json\n";
    out.close();
    try {
      read_trajectories(p);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }

  SUBCASE("outcome outside the stage count is rejected") {
    std::string p = (dir / "range.jsonl").string();
    std::ofstream out(p);
    out << R"({"id":"x","stages":[{"source":"s","action":"s"}],"outcome":2})" << "\n";
    out.close();
    CHECK_THROWS_AS(read_trajectories(p), DataError);
  }

  fs::remove_all(dir);
}

namespace {

size_t ed_ref(std::string_view a, std::string_view b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  size_t cost = a.back() == b.back() ? 0 : 1;
  return std::min({ed_ref(a.substr(0, a.size() - 1), b) + 1,
                   ed_ref(a, b.substr(0, b.size() - 1)) + 1,
                   ed_ref(a.substr(0, a.size() - 1), b.substr(0, b.size() - 1)) + cost});
}

std::string random_word(SeededRng& rng, int max_len) {
  int len = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_len) + 1));
  std::string s;
  for (int i = 0; i < len; ++i) s += static_cast<char>('a' + rng.uniform_int(4));
  return s;
}

}  // namespace

TEST_CASE("edit distance") {
  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK(edit_distance("", "") == 0);
  CHECK(edit_distance("abc", "abc") == 0);
  CHECK(edit_distance("abc", "") == 3);
  CHECK(edit_distance("flaw", "lawn") == 2);

  SUBCASE("matches the recursive definition") {
    SeededRng rng(13);
    for (int i = 0; i < 300; ++i) {
      std::string a = random_word(rng, 7);
      std::string b = random_word(rng, 7);
      CHECK(edit_distance(a, b) == ed_ref(a, b));
    }
  }

  SUBCASE("symmetry and triangle inequality") {
    SeededRng rng(14);
    for (int i = 0; i < 1000; ++i) {
      std::string a = random_word(rng, 8);
      std::string b = random_word(rng, 8);
      std::string c = random_word(rng, 8);
      size_t ab = edit_distance(a, b);
      CHECK(ab == edit_distance(b, a));
      CHECK(ab <= edit_distance(a, c) + edit_distance(c, b));
    }
  }
}
