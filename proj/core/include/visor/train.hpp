#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "visor/corpus.hpp"
#include "visor/model.hpp"

namespace visor::vlm {

// One teacher-forcing triple: completion tokens are scored, prompt and visual
// prefix are conditioning only.
struct TrainExample {
  Image image;
  data::TokenSequence prompt;
  data::TokenSequence completion;
};

struct SystemPromptTexts {
  std::string positive;
  std::string negative;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int steps = 1500;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 8;
  int log_every = 0;  // 0 = silent
};

// Assembles the training set: each contrastive pair contributes a
// (+red-shift image -> positive completion) triple and a (-red-shift ->
// negative) triple; a `system_prompt_fraction` share of pairs additionally
// contributes instruction-prefixed triples on neutral images; retention items
// contribute (neutral image, prompt -> correct choice) triples.
std::vector<TrainExample> build_training_examples(
    const std::vector<data::ContrastivePair>& pairs,
    const std::vector<data::RetentionItem>& retention, const ModelSpec& spec, std::uint64_t seed,
    double signal_shift, double system_prompt_fraction, const SystemPromptTexts* system_prompts);

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_history;  // mean per-token loss per step
};

// Plain SGD with momentum on the mean completion-token cross-entropy.
// Deterministic for a given (examples, spec, config). Throws with the step
// index if the loss goes non-finite.
TrainResult train_toy_model(const std::vector<TrainExample>& examples, const ModelSpec& spec,
                            const TrainConfig& config);

// Fraction of completion tokens whose argmax prediction matches the target.
double completion_token_accuracy(const ModelParams& params,
                                 const std::vector<TrainExample>& examples);

// Fraction of pairs where the +shift image makes the model prefer the positive
// completion AND the -shift image makes it prefer the negative one.
double behavior_flip_rate(const ModelParams& params,
                          const std::vector<data::ContrastivePair>& pairs, std::uint64_t seed,
                          double signal_shift);

}  // namespace visor::vlm
