#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace neurocap {

using TokenId = int;

// Lowercased word pieces plus sentence punctuation (. , ! ? ; :) as their
// own pieces. This is also the token count used for caption length limits.
std::vector<std::string> tokenize_pieces(std::string_view text);
std::size_t count_tokens(std::string_view text);

// Closed word-level vocabulary with three reserved ids.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;

  Tokenizer();
  explicit Tokenizer(std::span<const std::string> words);

  // Vocabulary from every piece in the corpus, sorted.
  static Tokenizer from_corpus(std::span<const std::string> texts);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;  // stops at kEos, skips kPad

  std::size_t size() const { return vocab_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& piece) const;

  // One token per line, reserved tokens first.
  std::string serialize() const;
  static Tokenizer deserialize(std::string_view data);

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, TokenId> index_;
};

}  // namespace neurocap
