#include "visor/bas.hpp"

#include <algorithm>
#include <cmath>

#include "visor/error.hpp"

namespace visor::eval {

double pair_alignment_ratio(double lp_positive, double lp_negative) {
  const double m = std::max(lp_positive, lp_negative);
  const double lse = m + std::log(std::exp(lp_positive - m) + std::exp(lp_negative - m));
  return std::exp(lp_positive - lse);
}

double alignment_score(const vlm::ModelParams& params,
                       const std::vector<data::ContrastivePair>& pairs, const Image& image,
                       const vlm::SteeringSpec* steering, const std::string* instruction,
                       std::vector<PairScore>* per_pair) {
  if (pairs.empty()) throw Error("alignment_score: empty pair list");
  data::Tokenizer tok;
  double sum = 0.0;
  for (const auto& pr : pairs) {
    const data::TokenSequence prompt =
        instruction != nullptr ? data::with_instruction(tok, *instruction, pr.prompt) : pr.prompt;
    PairScore score;
    score.lp_positive = vlm::sequence_logprob(params, image, prompt, pr.positive, steering);
    score.lp_negative = vlm::sequence_logprob(params, image, prompt, pr.negative, steering);
    score.ratio = pair_alignment_ratio(score.lp_positive, score.lp_negative);
    sum += score.ratio;
    if (per_pair != nullptr) per_pair->push_back(score);
  }
  return 100.0 * sum / static_cast<double>(pairs.size());
}

}  // namespace visor::eval
