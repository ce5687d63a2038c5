#pragma once

#include <string>
#include <vector>

#include "visor/corpus.hpp"
#include "visor/model.hpp"

namespace visor::eval {

// P(pos) / (P(pos) + P(neg)) computed in log space via the two-term
// log-sum-exp; safe for arbitrarily small completion probabilities.
double pair_alignment_ratio(double lp_positive, double lp_negative);

struct PairScore {
  double lp_positive = 0;
  double lp_negative = 0;
  double ratio = 0;  // in [0,1]
};

// Mean alignment ratio x 100 over pairs, scored on `image`, optionally under
// activation steering and/or an instruction prefix. The workhorse behind both
// condition evaluation and multiplier selection.
double alignment_score(const vlm::ModelParams& params,
                       const std::vector<data::ContrastivePair>& pairs, const Image& image,
                       const vlm::SteeringSpec* steering, const std::string* instruction,
                       std::vector<PairScore>* per_pair = nullptr);

}  // namespace visor::eval
