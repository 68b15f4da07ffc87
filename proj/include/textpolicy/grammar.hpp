#pragma once

#include <string>
#include <vector>

#include "textpolicy/rng.hpp"

namespace textpolicy {

struct SignalPair {
  std::string negative;
  std::string positive;
};

// Templated sentences with a single slot for a signal adjective. The sentence
// label is the polarity of the word filling the slot; positive and negative
// signal words never co-occur.
class SignalGrammar {
 public:
  enum class Mode { OnePair, TwoPairs };

  SignalGrammar(std::vector<std::string> templates, std::vector<SignalPair> pairs);

  static SignalGrammar standard(Mode mode);
  static Mode parse_mode(const std::string& name);  // "one-pair" | "two-pairs"

  // polarity 1 fills the slot with a positive word, 0 with a negative one.
  std::string generate(int polarity, SeededRng& rng) const;

  const std::vector<std::string>& templates() const { return templates_; }
  const std::vector<SignalPair>& pairs() const { return pairs_; }

  bool has_positive(const std::string& text) const;
  bool has_negative(const std::string& text) const;

  // Distinct non-slot words plus all signal words.
  std::vector<std::string> word_list() const;

 private:
  std::vector<std::string> templates_;
  std::vector<SignalPair> pairs_;
};

}  // namespace textpolicy
