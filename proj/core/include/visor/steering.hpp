#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "visor/corpus.hpp"
#include "visor/model.hpp"

namespace visor::steering {

// Per-layer contrastive-activation direction with its extraction provenance.
struct SteeringVector {
  int layer = 0;
  Tensor direction;  // [d]
  std::string behavior;
  int n_pairs = 0;
  std::uint64_t baseline_seed = 0;
  std::string tap = "residual_post_block";
};

struct SystemPromptPair {
  std::string positive_instruction;
  std::string negative_instruction;
  std::string behavior;
};

SystemPromptPair default_system_prompts(const std::string& behavior);

// Mid-grey image (128/255 per channel) plus clamped gaussian noise; the noise
// stddev is expressed as a fraction of full scale. The same image anchors
// vector extraction, steered evaluation, and steering-image optimization.
Image make_baseline_image(const vlm::ModelSpec& spec, std::uint64_t seed,
                          double noise_stddev = 0.1);

// Mean over pairs of the residual-stream activation difference between the
// positive and negative full sequences, tapped at each pair's divergence
// token, per requested layer.
std::vector<SteeringVector> compute_caa_vectors(const vlm::ModelParams& params,
                                                const std::vector<data::ContrastivePair>& pairs,
                                                const std::vector<int>& layers,
                                                const Image& baseline,
                                                std::uint64_t baseline_seed);

// Strips metadata for the model-level steering hook.
std::vector<vlm::SteeringDelta> to_deltas(const std::vector<SteeringVector>& vectors);

struct MultiplierSelection {
  double alpha_positive = 0;
  double alpha_negative = 0;
  double score_positive = 0;  // alignment score at alpha_positive
  double score_negative = 0;
  double score_zero = 0;
};

// Picks the candidate multiplier maximizing (resp. minimizing) the alignment
// score on validation pairs. The candidate set must contain 0 and at least
// one value of each sign.
MultiplierSelection select_multiplier(const vlm::ModelParams& params,
                                      const std::vector<SteeringVector>& vectors,
                                      const std::vector<data::ContrastivePair>& validation,
                                      const std::vector<double>& candidates,
                                      const Image& baseline);

// JSON vector file: float arrays as plain JSON numbers, human-diffable.
struct VectorFile {
  std::string behavior;
  std::vector<SteeringVector> vectors;
  MultiplierSelection multipliers;
  std::uint64_t baseline_seed = 0;
  std::string checkpoint_hash;
};

void save_vectors(const VectorFile& file, const std::filesystem::path& path);
VectorFile load_vectors(const std::filesystem::path& path);

}  // namespace visor::steering
