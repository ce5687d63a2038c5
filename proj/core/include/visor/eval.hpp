#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "visor/bas.hpp"
#include "visor/corpus.hpp"
#include "visor/model.hpp"
#include "visor/steering.hpp"

namespace visor::eval {

enum class Method { kBaseline, kSystemPrompt, kSteeringVector, kVisorImage };
enum class Direction { kNone, kPositive, kNegative };

std::string method_name(Method m);
std::string direction_name(Direction d);
Method parse_method(const std::string& s);
Direction parse_direction(const std::string& s);

// One Table-3-style cell: which control technique, which direction, and the
// artifacts it needs.
struct EvalCondition {
  Method method = Method::kBaseline;
  Direction direction = Direction::kNone;
  std::string instruction;                         // system_prompt
  std::vector<steering::SteeringVector> vectors;   // steering_vector
  double alpha = 0.0;                              // steering_vector
  std::optional<Image> image;                      // visor_image

  std::string label() const;
  void validate() const;  // required artifacts present for the chosen method
};

struct ConditionResult {
  std::string behavior;
  Method method = Method::kBaseline;
  Direction direction = Direction::kNone;
  double bas = 0.0;
  std::vector<PairScore> pair_scores;
};

// Eq.-4-style score: completions scored on the condition's image (the
// steering image for visor_image, the baseline otherwise).
ConditionResult behavioral_alignment_score(const vlm::ModelParams& params,
                                           const std::vector<data::ContrastivePair>& test_pairs,
                                           const EvalCondition& condition, const Image& baseline);

// Percentage of items whose correct choice has the highest completion
// log-probability under `image`.
double retention_eval(const vlm::ModelParams& params,
                      const std::vector<data::RetentionItem>& suite, const Image& image);

struct Report {
  std::string behavior;
  std::vector<ConditionResult> conditions;
  std::map<std::string, double> retention;           // label -> accuracy %
  std::map<std::string, std::string> fingerprints;   // artifact -> hash
};

// JSON carries per-pair detail and artifact fingerprints; CSV is the compact
// behavior,method,direction,BAS table (one decimal).
void write_report_json(const Report& report, const std::filesystem::path& path);
Report read_report_json(const std::filesystem::path& path);
void write_report_csv(const Report& report, const std::filesystem::path& path);

// Concatenates reports after checking that shared fingerprints agree; throws
// on any mismatch (different baselines are not comparable).
Report merge_reports(const std::vector<Report>& reports);

}  // namespace visor::eval
