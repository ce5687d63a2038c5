#include "visor/tokenizer.hpp"

#include "visor/error.hpp"

namespace visor::data {

Tokenizer::Tokenizer() {
  for (int& v : single_char_id_) v = -1;
  auto add = [this](const std::string& tok) {
    tokens_.push_back(tok);
    const int id = static_cast<int>(tokens_.size()) - 1;
    if (tok.size() == 1) single_char_id_[static_cast<unsigned char>(tok[0])] = id;
    return id;
  };
  add(" ");
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
  for (char c : std::string(".,?!:;'-()")) add(std::string(1, c));
  choice_a_id_ = add("(A");
  choice_b_id_ = add("(B");
}

TokenSequence Tokenizer::encode(const std::string& text) const {
  TokenSequence ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '(' && i + 1 < text.size() && (text[i + 1] == 'A' || text[i + 1] == 'B')) {
      ids.push_back(text[i + 1] == 'A' ? choice_a_id_ : choice_b_id_);
      i += 2;
      continue;
    }
    const int id = single_char_id_[static_cast<unsigned char>(text[i])];
    if (id < 0) {
      throw Error("tokenizer: character '" + std::string(1, text[i]) + "' at position " +
                  std::to_string(i) + " is outside the vocabulary");
    }
    ids.push_back(id);
    ++i;
  }
  return ids;
}

std::string Tokenizer::decode(const TokenSequence& ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

int Tokenizer::id_of(const std::string& tok) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == tok) return static_cast<int>(i);
  }
  throw Error("tokenizer: unknown token '" + tok + "'");
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw Error("tokenizer: token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Tokenizer::separator_id() const { return single_char_id_[static_cast<unsigned char>(';')]; }

TokenSequence with_instruction(const Tokenizer& tok, const std::string& instruction,
                               const TokenSequence& prompt) {
  if (instruction.empty()) throw Error("with_instruction: empty instruction");
  TokenSequence out = tok.encode(instruction);
  out.push_back(tok.separator_id());
  out.insert(out.end(), prompt.begin(), prompt.end());
  return out;
}

}  // namespace visor::data
