#include "visor/steering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "visor/bas.hpp"
#include "visor/error.hpp"

namespace visor::steering {

using nlohmann::json;

SystemPromptPair default_system_prompts(const std::string& behavior) {
  if (behavior == "agreement") {
    return {"you are agreeable and always say yes", "you think for yourself and always say no",
            behavior};
  }
  throw Error("no system prompts defined for behavior '" + behavior + "'");
}

Image make_baseline_image(const vlm::ModelSpec& spec, std::uint64_t seed, double noise_stddev) {
  return noisy_grey_image(spec.height, spec.width, seed, noise_stddev, 0.0);
}

std::vector<SteeringVector> compute_caa_vectors(const vlm::ModelParams& params,
                                                const std::vector<data::ContrastivePair>& pairs,
                                                const std::vector<int>& layers,
                                                const Image& baseline,
                                                std::uint64_t baseline_seed) {
  if (pairs.empty()) throw Error("compute_caa_vectors: empty pair list");
  if (layers.empty()) throw Error("compute_caa_vectors: empty layer set");
  const int p = params.spec.visual_tokens();
  const int d = params.spec.dim;

  std::vector<Tensor> sums;
  for (std::size_t i = 0; i < layers.size(); ++i) sums.emplace_back(Shape{d});

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pr = pairs[i];
    const data::TokenSequence pos = pr.full_positive();
    const data::TokenSequence neg = pr.full_negative();
    const int abs_tau = p + pr.tau;
    if (pr.tau >= static_cast<int>(pos.size()) || pr.tau >= static_cast<int>(neg.size())) {
      throw Error("compute_caa_vectors: tau " + std::to_string(pr.tau) +
                  " beyond sequence length for pair " + std::to_string(i) + " ('" +
                  pr.prompt_text + "')");
    }
    vlm::TapSet taps;
    for (int layer : layers) taps.push_back({layer, abs_tau});
    const auto pos_res = vlm::run_inference(params, baseline, pos, taps);
    const auto neg_res = vlm::run_inference(params, baseline, neg, taps);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const Tensor& hp = pos_res.taps.at({layers[li], abs_tau});
      const Tensor& hn = neg_res.taps.at({layers[li], abs_tau});
      for (int j = 0; j < d; ++j) sums[li].at(j) += hp.at(j) - hn.at(j);
    }
  }

  std::vector<SteeringVector> out;
  const auto n = static_cast<Scalar>(pairs.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    SteeringVector v;
    v.layer = layers[li];
    v.direction = Tensor({d});
    for (int j = 0; j < d; ++j) v.direction.at(j) = sums[li].at(j) / n;
    v.behavior = pairs.front().behavior;
    v.n_pairs = static_cast<int>(pairs.size());
    v.baseline_seed = baseline_seed;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<vlm::SteeringDelta> to_deltas(const std::vector<SteeringVector>& vectors) {
  std::vector<vlm::SteeringDelta> deltas;
  for (const auto& v : vectors) deltas.push_back({v.layer, v.direction});
  return deltas;
}

MultiplierSelection select_multiplier(const vlm::ModelParams& params,
                                      const std::vector<SteeringVector>& vectors,
                                      const std::vector<data::ContrastivePair>& validation,
                                      const std::vector<double>& candidates,
                                      const Image& baseline) {
  if (std::find(candidates.begin(), candidates.end(), 0.0) == candidates.end()) {
    throw Error("select_multiplier: candidate set must contain 0");
  }
  const std::vector<vlm::SteeringDelta> deltas = to_deltas(vectors);
  MultiplierSelection sel;
  double best_hi = -1.0, best_lo = 101.0;
  for (double alpha : candidates) {
    vlm::SteeringSpec spec;
    spec.deltas = deltas;
    spec.alpha = alpha;
    const double score = eval::alignment_score(params, validation, baseline,
                                               alpha == 0.0 ? nullptr : &spec, nullptr);
    if (alpha == 0.0) sel.score_zero = score;
    if (score > best_hi) {
      best_hi = score;
      sel.alpha_positive = alpha;
      sel.score_positive = score;
    }
    if (score < best_lo) {
      best_lo = score;
      sel.alpha_negative = alpha;
      sel.score_negative = score;
    }
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Vector file I/O

void save_vectors(const VectorFile& file, const std::filesystem::path& path) {
  if (file.vectors.empty()) throw Error("save_vectors: empty vector list");
  json layers = json::array();
  for (const auto& v : file.vectors) {
    json dir = json::array();
    for (std::int64_t j = 0; j < v.direction.size(); ++j) dir.push_back(v.direction.at(j));
    layers.push_back(json{{"layer", v.layer},
                          {"direction", dir},
                          {"n_pairs", v.n_pairs},
                          {"tap", v.tap}});
  }
  const json root{{"behavior", file.behavior},
                  {"vectors", layers},
                  {"alpha_positive", file.multipliers.alpha_positive},
                  {"alpha_negative", file.multipliers.alpha_negative},
                  {"score_positive", file.multipliers.score_positive},
                  {"score_negative", file.multipliers.score_negative},
                  {"score_zero", file.multipliers.score_zero},
                  {"baseline_seed", file.baseline_seed},
                  {"checkpoint_hash", file.checkpoint_hash}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open vector file for writing: " + path.string());
  out << root.dump(2) << '\n';
  if (!out) throw Error("vector file write failed: " + path.string());
}

VectorFile load_vectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open vector file: " + path.string());
  json root = json::parse(in, nullptr, false);
  if (root.is_discarded()) throw Error("vector file is not valid JSON: " + path.string());
  VectorFile file;
  try {
    file.behavior = root.at("behavior").get<std::string>();
    file.multipliers.alpha_positive = root.at("alpha_positive").get<double>();
    file.multipliers.alpha_negative = root.at("alpha_negative").get<double>();
    file.multipliers.score_positive = root.at("score_positive").get<double>();
    file.multipliers.score_negative = root.at("score_negative").get<double>();
    file.multipliers.score_zero = root.at("score_zero").get<double>();
    file.baseline_seed = root.at("baseline_seed").get<std::uint64_t>();
    file.checkpoint_hash = root.at("checkpoint_hash").get<std::string>();
    for (const json& v : root.at("vectors")) {
      SteeringVector sv;
      sv.layer = v.at("layer").get<int>();
      sv.n_pairs = v.at("n_pairs").get<int>();
      sv.tap = v.at("tap").get<std::string>();
      sv.behavior = file.behavior;
      sv.baseline_seed = file.baseline_seed;
      const auto& dir = v.at("direction");
      std::vector<Scalar> vals;
      for (const json& x : dir) vals.push_back(x.get<double>());
      sv.direction = Tensor({static_cast<int>(vals.size())}, std::move(vals));
      if (!sv.direction.all_finite()) {
        throw Error("vector file contains non-finite direction: " + path.string());
      }
      file.vectors.push_back(std::move(sv));
    }
  } catch (const json::exception& e) {
    throw Error("malformed vector file " + path.string() + ": " + e.what());
  }
  if (file.vectors.empty()) throw Error("vector file has no vectors: " + path.string());
  return file;
}

}  // namespace visor::steering
