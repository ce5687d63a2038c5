#pragma once

#include <string>
#include <vector>

namespace visor::data {

using TokenSequence = std::vector<int>;

// Character-level tokenizer over a fixed vocabulary (lowercase letters,
// digits, space, a little punctuation) plus the two-character choice markers
// "(A" and "(B", which tokenize as single tokens so that an A/B answer pair
// differs in exactly one token.
class Tokenizer {
 public:
  Tokenizer();

  int vocab_size() const { return static_cast<int>(tokens_.size()); }

  // Greedy longest-match; throws on characters outside the vocabulary.
  TokenSequence encode(const std::string& text) const;
  std::string decode(const TokenSequence& ids) const;

  int id_of(const std::string& token) const;  // throws if unknown
  const std::string& token(int id) const;

  // Separator placed between a system instruction and the question prompt.
  int separator_id() const;

 private:
  std::vector<std::string> tokens_;
  int single_char_id_[256];
  int choice_a_id_ = -1;
  int choice_b_id_ = -1;
};

// instruction tokens ++ separator ++ prompt tokens.
TokenSequence with_instruction(const Tokenizer& tok, const std::string& instruction,
                               const TokenSequence& prompt);

}  // namespace visor::data
