#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "visor/corpus.hpp"
#include "visor/model.hpp"

namespace visor::vopt {

enum class ConstraintKind { kUnconstrained, kLInf, kL2 };

struct Constraint {
  ConstraintKind kind = ConstraintKind::kUnconstrained;
  double epsilon = 0.0;  // ball radius around the baseline image
};

struct VisorConfig {
  std::vector<int> layers = {2, 4};
  std::vector<double> layer_weights = {1.0, 2.0};
  double learning_rate = 1.0 / 255.0;
  int iterations = 2000;
  int last_token_count = 3;  // N: loss window is the last N positions up to tau
  int batch_size = 8;
  Constraint constraint;
  std::uint64_t seed = 0;

  void validate() const;
};

// Targets h_base + v per (pair, layer, window position), computed once from
// the baseline image before iteration 0.
struct TargetCache {
  // targets[pair][layer index][window index] is a [d] tensor
  std::vector<std::vector<std::vector<Tensor>>> targets;
  std::vector<int> window_start;  // per pair, in text coordinates
};

// Token prefix the steering-image loss conditions on: the shared sequence up
// to and including the divergence token (drawn from the positive completion).
data::TokenSequence loss_prefix(const data::ContrastivePair& pair);

TargetCache build_target_cache(const vlm::ModelParams& params,
                               const std::vector<data::ContrastivePair>& pairs,
                               const std::vector<vlm::SteeringDelta>& vectors,
                               const VisorConfig& config, const Image& x_base);

// Weighted squared activation distance summed over batch x layers x window.
// If grad_out is non-null it must be a zeroed [H,W,3] tensor; the pixel
// gradient is accumulated into it.
double visor_loss(const vlm::ModelParams& params, const Tensor& pixels,
                  std::span<const int> batch, const std::vector<data::ContrastivePair>& pairs,
                  const VisorConfig& config, const TargetCache& cache, Tensor* grad_out);

// x - eta * sign(g), elementwise; sign(0) = 0.
Image signed_step(const Image& x, const Tensor& grad, double eta);

// Projection onto the constraint set, then onto the [0,1] box.
Image project(const Image& x, const Image& x_base, const Constraint& constraint);

struct OptimizeResult {
  Image image;
  std::vector<double> loss_history;
};

using IterationCallback = std::function<void(int iteration, const Image& iterate)>;

// Algorithm: sample batch (deterministic shuffle, cycling epochs) -> loss ->
// pixel gradient -> signed step -> projection, for config.iterations rounds
// starting from x_base.
OptimizeResult optimize_steering_image(const vlm::ModelParams& params,
                                       const std::vector<vlm::SteeringDelta>& vectors,
                                       const std::vector<data::ContrastivePair>& corpus,
                                       const VisorConfig& config, const Image& x_base,
                                       const IterationCallback& on_iterate = nullptr);

}  // namespace visor::vopt
