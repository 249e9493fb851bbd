#include "neurocap/tokenizer.hpp"

#include "neurocap/error.hpp"

#include <cctype>
#include <set>
#include <sstream>

namespace neurocap {

namespace {

bool is_punct_piece(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

const char* const kReserved[] = {"<pad>", "<eos>", "<unk>"};

}  // namespace

std::vector<std::string> tokenize_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0 || (ch == '\'' && !cur.empty())) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (is_punct_piece(ch)) out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

std::size_t count_tokens(std::string_view text) { return tokenize_pieces(text).size(); }

Tokenizer::Tokenizer() : Tokenizer(std::span<const std::string>{}) {}

Tokenizer::Tokenizer(std::span<const std::string> words) {
  for (const char* r : kReserved) {
    index_[r] = static_cast<TokenId>(vocab_.size());
    vocab_.emplace_back(r);
  }
  for (const auto& w : words) {
    if (w.empty() || index_.count(w)) continue;
    index_[w] = static_cast<TokenId>(vocab_.size());
    vocab_.push_back(w);
  }
}

Tokenizer Tokenizer::from_corpus(std::span<const std::string> texts) {
  std::set<std::string> pieces;
  for (const auto& t : texts) {
    for (auto& p : tokenize_pieces(t)) pieces.insert(std::move(p));
  }
  const std::vector<std::string> words(pieces.begin(), pieces.end());
  return Tokenizer(words);
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& p : tokenize_pieces(text)) {
    auto it = index_.find(p);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kPad) continue;
    const std::string& piece = token(id);
    const bool attach = piece.size() == 1 && is_punct_piece(piece[0]);
    if (!out.empty() && !attach) out.push_back(' ');
    out += piece;
  }
  return out;
}

const std::string& Tokenizer::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                    std::to_string(vocab_.size()));
  }
  return vocab_[static_cast<std::size_t>(id)];
}

TokenId Tokenizer::id(const std::string& piece) const {
  auto it = index_.find(piece);
  return it == index_.end() ? kUnk : it->second;
}

std::string Tokenizer::serialize() const {
  std::string out;
  for (const auto& t : vocab_) out += t + "\n";
  return out;
}

Tokenizer Tokenizer::deserialize(std::string_view data) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(data)};
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != kReserved[0] || lines[1] != kReserved[1] || lines[2] != kReserved[2]) {
    throw DataError("tokenizer blob is missing the reserved tokens");
  }
  return Tokenizer(std::span<const std::string>(lines).subspan(3));
}

}  // namespace neurocap
