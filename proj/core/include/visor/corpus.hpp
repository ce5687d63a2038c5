#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "visor/image.hpp"
#include "visor/tokenizer.hpp"

namespace visor::data {

// A/B question with a shared prompt and two completions that first differ at
// token index tau of the full (prompt ++ completion) sequence.
struct ContrastivePair {
  std::string prompt_text;
  std::string positive_text;
  std::string negative_text;
  std::string behavior;
  TokenSequence prompt;
  TokenSequence positive;
  TokenSequence negative;
  int tau = -1;

  TokenSequence full_positive() const;
  TokenSequence full_negative() const;

  // Re-tokenizes, recomputes tau, and checks all invariants. `where` is used
  // in error messages (e.g. "line 12").
  void validate(const Tokenizer& tok, const std::string& where) const;
};

struct RetentionItem {
  std::string prompt_text;
  std::vector<std::string> choice_texts;
  int answer_index = -1;
  TokenSequence prompt;
  std::vector<TokenSequence> choices;

  void validate(const Tokenizer& tok, const std::string& where) const;
};

// Smallest index at which the two sequences differ; throws if identical.
int compute_divergence_index(const TokenSequence& positive_full, const TokenSequence& negative_full);

// Builds a ContrastivePair from raw text, tokenizing and computing tau.
ContrastivePair make_pair(const Tokenizer& tok, const std::string& prompt,
                          const std::string& positive, const std::string& negative,
                          const std::string& behavior);

// --- synthetic corpora ------------------------------------------------------

// Names of the built-in toy behaviors ("agreement" is the default).
std::vector<std::string> known_behaviors();

// Writes train/test JSONL files of contrastive A/B pairs for `behavior`.
// Train and test draw from disjoint subject pools, so no prompt string can
// appear in both splits. Byte-identical output for a given (seed, args).
void generate_behavior_corpus(std::uint64_t seed, const std::string& behavior, int n_train,
                              int n_test, const std::filesystem::path& train_path,
                              const std::filesystem::path& test_path);

// Writes a JSONL suite of multiple-choice items answerable from the prompt
// alone (letter successors, digit comparisons, word spelling), with a
// balanced answer_index distribution. Requires n_items >= 200.
void generate_retention_suite(std::uint64_t seed, int n_items,
                              const std::filesystem::path& path);

// Internal building block shared by generate_retention_suite and the trainer;
// produces n_items validated items without touching the filesystem.
std::vector<RetentionItem> build_retention_items(std::uint64_t seed, int n_items);

std::vector<ContrastivePair> load_pairs(const std::filesystem::path& path);
std::vector<RetentionItem> load_retention(const std::filesystem::path& path);

// Mid-grey noise image whose red channel mean is shifted by +shift (positive
// behavior) or -shift (negative); the planted signal the toy model learns to
// read, leaving the unshifted baseline ambiguous.
Image behavior_signal_image(int height, int width, std::uint64_t seed, bool positive,
                            double shift);

}  // namespace visor::data
