#include "textpolicy/grammar.hpp"

#include <set>

#include "textpolicy/errors.hpp"
#include "textpolicy/vocab.hpp"

namespace textpolicy {

namespace {

const std::vector<std::string>& standard_templates() {
  static const std::vector<std::string> t = {
      "the food at this place was {}",
      "our waiter was really {} all evening",
      "i thought the service felt {} today",
      "the soup tasted {} to everyone at the table",
      "overall the experience was {} for us",
      "my friends said the coffee was {}",
      "the atmosphere in the dining room seemed {}",
      "honestly the dessert menu looked {}",
      "the staff were {} when we arrived",
      "that new bakery downtown is {}",
      "the portions here are {} for the price",
      "everyone agreed the pizza crust was {}",
      "the music last night sounded {}",
      "the room we booked turned out {}",
      "the breakfast buffet this morning was {}",
      "her review called the place {}",
      "the salad bar looked {} during lunch",
      "the delivery guy was {} about the late order",
      "the manager seemed {} while handling complaints",
      "the brunch crowd felt the menu was {}",
      "the tea selection is {} in my opinion",
      "locals keep saying the diner is {}",
      "the sandwich shop near work stays {}",
      "the chef made everything taste {}",
      "the lighting made the patio look {}",
      "reviewers found the tasting menu {}",
      "the parking situation there is {}",
      "the host was {} about our reservation",
      "the noodles came out {} again",
      "the wine list felt {} last friday",
      "the prices looked {} compared to before",
      "the bartender stayed {} through the rush",
      "my cousin thinks the grill is {}",
      "the cleanliness of the kitchen seemed {}",
      "the steak arrived {} despite the wait",
      "the online ordering system works {}",
      "the seating by the window felt {}",
      "the lunch special today was {}",
      "the takeout containers always look {}",
      "the neighborhood cafe remains {}",
  };
  return t;
}

}  // namespace

SignalGrammar::SignalGrammar(std::vector<std::string> templates,
                             std::vector<SignalPair> pairs)
    : templates_(std::move(templates)), pairs_(std::move(pairs)) {
  if (templates_.empty()) throw ConfigError("grammar: no templates");
  if (pairs_.empty()) throw ConfigError("grammar: no signal pairs");
  std::set<std::string> signals;
  for (const SignalPair& p : pairs_) {
    signals.insert(p.negative);
    signals.insert(p.positive);
  }
  for (const std::string& t : templates_) {
    size_t slot = t.find("{}");
    if (slot == std::string::npos || t.find("{}", slot + 1) != std::string::npos) {
      throw ConfigError("grammar: template needs exactly one slot: " + t);
    }
    for (const std::string& w : split_ws(t)) {
      if (signals.count(w)) {
        throw ConfigError("grammar: template contains signal word " + w);
      }
    }
  }
}

SignalGrammar SignalGrammar::standard(Mode mode) {
  std::vector<SignalPair> pairs = {{"bad", "good"}};
  if (mode == Mode::TwoPairs) pairs.push_back({"sad", "happy"});
  return SignalGrammar(standard_templates(), std::move(pairs));
}

SignalGrammar::Mode SignalGrammar::parse_mode(const std::string& name) {
  if (name == "one-pair") return Mode::OnePair;
  if (name == "two-pairs") return Mode::TwoPairs;
  throw ConfigError("grammar mode must be one-pair or two-pairs, got " + name);
}

std::string SignalGrammar::generate(int polarity, SeededRng& rng) const {
  if (polarity != 0 && polarity != 1) {
    throw ConfigError("polarity must be 0 or 1");
  }
  const std::string& tpl = templates_[rng.uniform_int(templates_.size())];
  const SignalPair& pair = pairs_[pairs_.size() == 1 ? 0 : rng.uniform_int(pairs_.size())];
  const std::string& word = polarity == 1 ? pair.positive : pair.negative;
  std::string out = tpl;
  out.replace(out.find("{}"), 2, word);
  return out;
}

bool SignalGrammar::has_positive(const std::string& text) const {
  for (const std::string& w : split_ws(text)) {
    for (const SignalPair& p : pairs_) {
      if (w == p.positive) return true;
    }
  }
  return false;
}

bool SignalGrammar::has_negative(const std::string& text) const {
  for (const std::string& w : split_ws(text)) {
    for (const SignalPair& p : pairs_) {
      if (w == p.negative) return true;
    }
  }
  return false;
}

std::vector<std::string> SignalGrammar::word_list() const {
  std::set<std::string> words;
  for (const std::string& t : templates_) {
    for (const std::string& w : split_ws(t)) {
      if (w != "{}") words.insert(w);
    }
  }
  for (const SignalPair& p : pairs_) {
    words.insert(p.negative);
    words.insert(p.positive);
  }
  return {words.begin(), words.end()};
}

}  // namespace textpolicy
