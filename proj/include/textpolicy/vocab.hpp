#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace textpolicy {

std::vector<std::string> split_ws(const std::string& text);

// Token ids are dense, with fixed reserved slots up front. The mapping is a
// bijection: token(id(w)) == w for every known w.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kRepeat = 4;
  static constexpr int kColon = 5;
  static constexpr int kReserved = 6;

  Vocabulary();

  int id(const std::string& token) const;  // DataError naming the word if unknown
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  uint64_t content_hash() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend Vocabulary build_vocab(const std::vector<std::string>& corpus);

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Reserved tokens plus every whitespace-delimited lowercased corpus token, in
// first-appearance order.
Vocabulary build_vocab(const std::vector<std::string>& corpus);

// Whitespace split, exact-match lookup. Empty text gives an empty list.
std::vector<int> tokenize(const std::string& text, const Vocabulary& v);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& v);

}  // namespace textpolicy
