#include "textpolicy/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "textpolicy/errors.hpp"
#include "textpolicy/rng.hpp"

namespace textpolicy {

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* tok : {"<pad>", "<bos>", "<eos>", "<sep>", "Repeat", ":"}) {
    add(tok);
  }
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) {
    throw DataError("unknown token \"" + token + "\"");
  }
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

uint64_t Vocabulary::content_hash() const {
  uint64_t h = 0xCBF29CE484222325ull;
  for (const std::string& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    h ^= 0x1F;
    h *= 0x100000001B3ull;
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  nlohmann::json j = tokens_;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("vocabulary: cannot write " + path);
  out << j.dump() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocabulary: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocabulary " + path + ": " + e.what());
  }
  if (!j.is_array()) throw DataError("vocabulary " + path + ": expected an array");
  Vocabulary v;
  std::vector<std::string> toks = j.get<std::vector<std::string>>();
  if (toks.size() < Vocabulary::kReserved) {
    throw DataError("vocabulary " + path + ": missing reserved tokens");
  }
  for (int i = 0; i < Vocabulary::kReserved; ++i) {
    if (toks[static_cast<size_t>(i)] != v.tokens_[static_cast<size_t>(i)]) {
      throw DataError("vocabulary " + path + ": reserved slot " + std::to_string(i) +
                      " holds \"" + toks[static_cast<size_t>(i)] + "\"");
    }
  }
  for (size_t i = Vocabulary::kReserved; i < toks.size(); ++i) v.add(toks[i]);
  if (v.size() != static_cast<int>(toks.size())) {
    throw DataError("vocabulary " + path + ": duplicate tokens");
  }
  return v;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus) {
  Vocabulary v;
  for (const std::string& text : corpus) {
    for (std::string tok : split_ws(text)) {
      std::transform(tok.begin(), tok.end(), tok.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      v.add(tok);
    }
  }
  return v;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& v) {
  std::vector<int> out;
  for (const std::string& tok : split_ws(text)) out.push_back(v.id(tok));
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& v) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += v.token(ids[i]);
  }
  return out;
}

}  // namespace textpolicy
