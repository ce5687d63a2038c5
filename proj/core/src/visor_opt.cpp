#include "visor/visor_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "visor/error.hpp"
#include "visor/hash.hpp"

namespace visor::vopt {

void VisorConfig::validate() const {
  if (layers.empty()) throw Error("visor config: empty layer set");
  if (layer_weights.size() != layers.size()) {
    throw Error("visor config: need one weight per layer");
  }
  for (double w : layer_weights) {
    if (!(w > 0)) throw Error("visor config: layer weights must be positive");
  }
  if (!(learning_rate > 0)) throw Error("visor config: learning rate must be positive");
  if (iterations < 0) throw Error("visor config: iterations must be >= 0");
  if (last_token_count < 1) throw Error("visor config: last_token_count must be >= 1");
  if (batch_size < 1) throw Error("visor config: batch_size must be >= 1");
  if (constraint.kind != ConstraintKind::kUnconstrained && !(constraint.epsilon > 0)) {
    throw Error("visor config: constrained runs need epsilon > 0");
  }
}

data::TokenSequence loss_prefix(const data::ContrastivePair& pair) {
  const data::TokenSequence full = pair.full_positive();
  return data::TokenSequence(full.begin(), full.begin() + pair.tau + 1);
}

TargetCache build_target_cache(const vlm::ModelParams& params,
                               const std::vector<data::ContrastivePair>& pairs,
                               const std::vector<vlm::SteeringDelta>& vectors,
                               const VisorConfig& config, const Image& x_base) {
  config.validate();
  if (pairs.empty()) throw Error("build_target_cache: empty corpus");
  const int p = params.spec.visual_tokens();
  const int d = params.spec.dim;
  const int n = config.last_token_count;

  // one direction per configured layer, in config order
  std::vector<const Tensor*> dirs;
  for (int layer : config.layers) {
    const Tensor* found = nullptr;
    for (const auto& v : vectors) {
      if (v.layer == layer) {
        found = &v.direction;
        break;
      }
    }
    if (found == nullptr) {
      throw Error("build_target_cache: no steering vector for layer " + std::to_string(layer));
    }
    if (found->shape() != Shape{d}) {
      throw Error("build_target_cache: direction shape mismatch at layer " + std::to_string(layer));
    }
    dirs.push_back(found);
  }

  TargetCache cache;
  cache.targets.resize(pairs.size());
  cache.window_start.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pr = pairs[i];
    const int start = pr.tau - n + 1;
    if (start < 0) {
      throw Error("visor loss window underflow: tau " + std::to_string(pr.tau) + " with N " +
                  std::to_string(n) + " reaches before the first text token (pair " +
                  std::to_string(i) + ")");
    }
    cache.window_start[i] = start;
    vlm::TapSet taps;
    for (int layer : config.layers) {
      for (int k = start; k <= pr.tau; ++k) taps.push_back({layer, p + k});
    }
    const auto res = vlm::run_inference(params, x_base, loss_prefix(pr), taps);
    auto& per_layer = cache.targets[i];
    per_layer.resize(config.layers.size());
    for (std::size_t li = 0; li < config.layers.size(); ++li) {
      for (int k = start; k <= pr.tau; ++k) {
        const Tensor& h_base = res.taps.at({config.layers[li], p + k});
        Tensor target({d});
        for (int j = 0; j < d; ++j) target.at(j) = h_base.at(j) + dirs[li]->at(j);
        per_layer[li].push_back(std::move(target));
      }
    }
  }
  return cache;
}

double visor_loss(const vlm::ModelParams& params, const Tensor& pixels,
                  std::span<const int> batch, const std::vector<data::ContrastivePair>& pairs,
                  const VisorConfig& config, const TargetCache& cache, Tensor* grad_out) {
  if (batch.empty()) throw Error("visor_loss: empty batch");
  const int p = params.spec.visual_tokens();
  double total = 0.0;
  for (int idx : batch) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= pairs.size()) {
      throw Error("visor_loss: batch index out of range");
    }
    if (static_cast<std::size_t>(idx) >= cache.targets.size()) {
      throw Error("visor_loss: target cache does not cover pair " + std::to_string(idx));
    }
    const auto& pr = pairs[static_cast<std::size_t>(idx)];
    const int start = cache.window_start[static_cast<std::size_t>(idx)];

    Tape tape(grad_out != nullptr);
    vlm::ParamVars pv = vlm::register_params(tape, params, false);
    Var x = tape.input(pixels, grad_out != nullptr);
    vlm::TapSet taps;
    for (int layer : config.layers) {
      for (int k = start; k <= pr.tau; ++k) taps.push_back({layer, p + k});
    }
    const vlm::ForwardOutput fwd = vlm::forward(tape, x, loss_prefix(pr), pv, params.spec, taps);

    Var pair_loss{-1};
    for (std::size_t li = 0; li < config.layers.size(); ++li) {
      const auto& window_targets = cache.targets[static_cast<std::size_t>(idx)][li];
      for (int k = start; k <= pr.tau; ++k) {
        Var h = fwd.trace.var(config.layers[li], p + k);
        Var term = tape.sse(h, tape.constant(window_targets[static_cast<std::size_t>(k - start)]));
        term = tape.mul_scalar(term, config.layer_weights[li]);
        pair_loss = pair_loss.valid() ? tape.add(pair_loss, term) : term;
      }
    }
    total += tape.value(pair_loss).item();
    if (grad_out != nullptr) {
      const Gradients grads = tape.backward(pair_loss);
      if (grads.nonzero(x)) {
        const Tensor& gx = grads.grad(x);
        for (std::int64_t i = 0; i < grad_out->size(); ++i) grad_out->at(i) += gx.at(i);
      }
    }
  }
  return total;
}

Image signed_step(const Image& x, const Tensor& grad, double eta) {
  if (grad.size() != static_cast<std::int64_t>(x.size())) {
    throw Error("signed_step: gradient shape " + shape_str(grad.shape()) +
                " does not match image");
  }
  Image out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const Scalar g = grad.at(static_cast<std::int64_t>(i));
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    out.data[i] = static_cast<float>(static_cast<double>(out.data[i]) - eta * s);
  }
  return out;
}

Image project(const Image& x, const Image& x_base, const Constraint& constraint) {
  if (x.height != x_base.height || x.width != x_base.width) {
    throw Error("project: image/base shape mismatch");
  }
  Image out = x;
  switch (constraint.kind) {
    case ConstraintKind::kUnconstrained:
      for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
      break;
    case ConstraintKind::kLInf: {
      const double eps = constraint.epsilon;
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double delta = std::clamp(
            static_cast<double>(out.data[i]) - static_cast<double>(x_base.data[i]), -eps, eps);
        out.data[i] = static_cast<float>(
            std::clamp(static_cast<double>(x_base.data[i]) + delta, 0.0, 1.0));
      }
      break;
    }
    case ConstraintKind::kL2: {
      double norm_sq = 0.0;
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double delta = static_cast<double>(out.data[i]) - static_cast<double>(x_base.data[i]);
        norm_sq += delta * delta;
      }
      const double norm = std::sqrt(norm_sq);
      const double scale = norm > constraint.epsilon ? constraint.epsilon / norm : 1.0;
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double delta = static_cast<double>(out.data[i]) - static_cast<double>(x_base.data[i]);
        out.data[i] = static_cast<float>(
            std::clamp(static_cast<double>(x_base.data[i]) + scale * delta, 0.0, 1.0));
      }
      break;
    }
  }
  return out;
}

OptimizeResult optimize_steering_image(const vlm::ModelParams& params,
                                       const std::vector<vlm::SteeringDelta>& vectors,
                                       const std::vector<data::ContrastivePair>& corpus,
                                       const VisorConfig& config, const Image& x_base,
                                       const IterationCallback& on_iterate) {
  config.validate();
  if (corpus.empty()) throw Error("optimize_steering_image: empty corpus");
  validate_pixels(x_base, "optimize_steering_image baseline");
  const TargetCache cache = build_target_cache(params, corpus, vectors, config, x_base);

  OptimizeResult result;
  result.image = x_base;

  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x7669736fULL));
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;

  for (int t = 0; t < config.iterations; ++t) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                                   order.size() - cursor);
    const std::span<const int> batch(order.data() + cursor, take);
    cursor += take;

    Tensor grad({params.spec.height, params.spec.width, 3});
    double loss = 0.0;
    try {
      loss = visor_loss(params, result.image.to_tensor(), batch, corpus, config, cache, &grad);
    } catch (const Error& e) {
      throw Error("steering-image optimization aborted at iteration " + std::to_string(t) + ": " +
                  e.what());
    }
    if (!std::isfinite(loss)) {
      throw Error("steering-image optimization aborted at iteration " + std::to_string(t) +
                  ": non-finite loss");
    }
    result.loss_history.push_back(loss);
    result.image = project(signed_step(result.image, grad, config.learning_rate), x_base,
                           config.constraint);
    if (on_iterate) on_iterate(t, result.image);
  }
  return result;
}

}  // namespace visor::vopt
