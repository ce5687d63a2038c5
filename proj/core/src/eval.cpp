#include "visor/eval.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "visor/error.hpp"

namespace visor::eval {

using nlohmann::json;

std::string method_name(Method m) {
  switch (m) {
    case Method::kBaseline: return "baseline";
    case Method::kSystemPrompt: return "system_prompt";
    case Method::kSteeringVector: return "steering_vector";
    case Method::kVisorImage: return "visor_image";
  }
  throw Error("bad method enum");
}

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::kNone: return "none";
    case Direction::kPositive: return "positive";
    case Direction::kNegative: return "negative";
  }
  throw Error("bad direction enum");
}

Method parse_method(const std::string& s) {
  if (s == "baseline") return Method::kBaseline;
  if (s == "system_prompt") return Method::kSystemPrompt;
  if (s == "steering_vector") return Method::kSteeringVector;
  if (s == "visor_image") return Method::kVisorImage;
  throw ConfigError("unknown method '" + s + "'");
}

Direction parse_direction(const std::string& s) {
  if (s == "none") return Direction::kNone;
  if (s == "positive") return Direction::kPositive;
  if (s == "negative") return Direction::kNegative;
  throw ConfigError("unknown direction '" + s + "'");
}

std::string EvalCondition::label() const {
  return method_name(method) +
         (direction == Direction::kNone ? "" : ":" + direction_name(direction));
}

void EvalCondition::validate() const {
  switch (method) {
    case Method::kBaseline:
      break;
    case Method::kSystemPrompt:
      if (instruction.empty()) throw Error("condition " + label() + ": missing instruction");
      break;
    case Method::kSteeringVector:
      if (vectors.empty()) throw Error("condition " + label() + ": missing steering vectors");
      break;
    case Method::kVisorImage:
      if (!image.has_value()) throw Error("condition " + label() + ": missing steering image");
      break;
  }
  if (method != Method::kBaseline && direction == Direction::kNone) {
    throw Error("condition " + label() + ": steered methods need a direction");
  }
}

ConditionResult behavioral_alignment_score(const vlm::ModelParams& params,
                                           const std::vector<data::ContrastivePair>& test_pairs,
                                           const EvalCondition& condition, const Image& baseline) {
  if (test_pairs.empty()) throw Error("behavioral_alignment_score: empty pair list");
  condition.validate();

  ConditionResult result;
  result.behavior = test_pairs.front().behavior;
  result.method = condition.method;
  result.direction = condition.direction;

  const Image& image = condition.method == Method::kVisorImage ? *condition.image : baseline;
  vlm::SteeringSpec steer;
  const vlm::SteeringSpec* steer_ptr = nullptr;
  if (condition.method == Method::kSteeringVector) {
    steer.deltas = steering::to_deltas(condition.vectors);
    steer.alpha = condition.alpha;
    steer_ptr = &steer;
  }
  const std::string* instruction =
      condition.method == Method::kSystemPrompt ? &condition.instruction : nullptr;

  result.bas = alignment_score(params, test_pairs, image, steer_ptr, instruction,
                               &result.pair_scores);
  return result;
}

double retention_eval(const vlm::ModelParams& params,
                      const std::vector<data::RetentionItem>& suite, const Image& image) {
  if (suite.empty()) throw Error("retention_eval: empty suite");
  int correct = 0;
  for (const auto& item : suite) {
    int best = 0;
    double best_lp = 0;
    for (std::size_t c = 0; c < item.choices.size(); ++c) {
      const double lp = vlm::sequence_logprob(params, image, item.prompt, item.choices[c]);
      if (c == 0 || lp > best_lp) {
        best_lp = lp;
        best = static_cast<int>(c);
      }
    }
    if (best == item.answer_index) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(suite.size());
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json condition_to_json(const ConditionResult& r) {
  json pairs = json::array();
  for (const auto& s : r.pair_scores) {
    pairs.push_back(json{{"lp_positive", s.lp_positive},
                         {"lp_negative", s.lp_negative},
                         {"ratio", s.ratio}});
  }
  return json{{"method", method_name(r.method)},
              {"direction", direction_name(r.direction)},
              {"bas", r.bas},
              {"pairs", pairs}};
}

ConditionResult condition_from_json(const json& j, const std::string& behavior) {
  ConditionResult r;
  r.behavior = behavior;
  r.method = parse_method(j.at("method").get<std::string>());
  r.direction = parse_direction(j.at("direction").get<std::string>());
  r.bas = j.at("bas").get<double>();
  for (const json& p : j.at("pairs")) {
    PairScore s;
    s.lp_positive = p.at("lp_positive").get<double>();
    s.lp_negative = p.at("lp_negative").get<double>();
    s.ratio = p.at("ratio").get<double>();
    r.pair_scores.push_back(s);
  }
  return r;
}

}  // namespace

void write_report_json(const Report& report, const std::filesystem::path& path) {
  if (report.conditions.empty()) throw Error("write_report_json: no evaluated conditions");
  json conditions = json::array();
  for (const auto& c : report.conditions) conditions.push_back(condition_to_json(c));
  const json root{{"behavior", report.behavior},
                  {"conditions", conditions},
                  {"retention", report.retention},
                  {"fingerprints", report.fingerprints}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open report for writing: " + path.string());
  out << root.dump(2) << '\n';
  if (!out) throw Error("report write failed: " + path.string());
}

Report read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open report: " + path.string());
  json root = json::parse(in, nullptr, false);
  if (root.is_discarded()) throw Error("report is not valid JSON: " + path.string());
  Report report;
  try {
    report.behavior = root.at("behavior").get<std::string>();
    for (const json& c : root.at("conditions")) {
      report.conditions.push_back(condition_from_json(c, report.behavior));
    }
    report.retention = root.at("retention").get<std::map<std::string, double>>();
    report.fingerprints = root.at("fingerprints").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error("malformed report " + path.string() + ": " + e.what());
  }
  return report;
}

void write_report_csv(const Report& report, const std::filesystem::path& path) {
  if (report.conditions.empty()) throw Error("write_report_csv: no evaluated conditions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open CSV for writing: " + path.string());
  out << "behavior,method,direction,BAS\n";
  char buf[32];
  for (const auto& c : report.conditions) {
    std::snprintf(buf, sizeof(buf), "%.1f", c.bas);
    out << c.behavior << ',' << method_name(c.method) << ',' << direction_name(c.direction) << ','
        << buf << '\n';
  }
  if (!out) throw Error("CSV write failed: " + path.string());
}

Report merge_reports(const std::vector<Report>& reports) {
  if (reports.empty()) throw Error("merge_reports: need at least one report");
  Report merged = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const Report& r = reports[i];
    for (const auto& [name, hash] : r.fingerprints) {
      auto it = merged.fingerprints.find(name);
      if (it != merged.fingerprints.end() && it->second != hash) {
        throw Error("refusing to merge reports: fingerprint '" + name + "' differs (" +
                    it->second + " vs " + hash + ")");
      }
      merged.fingerprints[name] = hash;
    }
    merged.conditions.insert(merged.conditions.end(), r.conditions.begin(), r.conditions.end());
    for (const auto& [label, acc] : r.retention) merged.retention[label] = acc;
    if (merged.behavior != r.behavior) merged.behavior = merged.behavior + "+" + r.behavior;
  }
  return merged;
}

}  // namespace visor::eval
