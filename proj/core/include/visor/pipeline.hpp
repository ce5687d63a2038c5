#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "visor/eval.hpp"
#include "visor/model.hpp"
#include "visor/train.hpp"
#include "visor/visor_opt.hpp"

namespace visor::pipeline {

struct DataConfig {
  std::string behavior = "agreement";
  int n_train = 200;
  int n_test = 50;
  int retention_train_items = 300;
  int retention_eval_items = 600;
};

struct VectorConfig {
  std::vector<int> layers = {2, 4};
  std::vector<double> candidates = {-5, -3, -1, 0, 1, 3, 5};
  int validation_pairs = 50;  // taken from the tail of the train split
};

struct VisorRunConfig {
  vopt::VisorConfig opt;
  std::string init = "baseline";     // "baseline" or a corpus-image path
  double vector_scale = 0.0;         // 0 = use the selected multipliers
  std::vector<std::string> directions = {"positive", "negative"};
};

struct ConditionSpec {
  std::string method;
  std::string direction = "none";
};

struct EvalRunConfig {
  std::vector<ConditionSpec> conditions = {
      {"baseline", "none"},          {"system_prompt", "positive"},
      {"system_prompt", "negative"}, {"steering_vector", "positive"},
      {"steering_vector", "negative"}, {"visor_image", "positive"},
      {"visor_image", "negative"}};
  bool use_ppm8_roundtrip = true;
};

struct Paths {
  std::string corpus_train = "corpus_train.jsonl";
  std::string corpus_test = "corpus_test.jsonl";
  std::string retention_train = "retention_train.jsonl";
  std::string retention_eval = "retention_eval.jsonl";
  std::string checkpoint = "model.tvlm";
  std::string vectors = "vectors.json";
  std::string image_positive_raw = "image_positive.raw32";
  std::string image_negative_raw = "image_negative.raw32";
  std::string image_positive_ppm = "image_positive.ppm";
  std::string image_negative_ppm = "image_negative.ppm";
  std::string loss_positive = "loss_positive.csv";
  std::string loss_negative = "loss_negative.csv";
  std::string report_json = "report.json";
  std::string report_csv = "report.csv";
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::uint64_t baseline_seed = 7;
  std::filesystem::path out_dir = "runs/demo";
  vlm::ModelSpec model;  // vocab is always overwritten from the tokenizer
  DataConfig data;
  vlm::TrainConfig train;
  double signal_shift = 0.2;
  double system_prompt_fraction = 0.25;
  VectorConfig vectors;
  VisorRunConfig visor;
  EvalRunConfig eval;
  Paths paths;

  std::filesystem::path resolve(const std::string& name) const;
};

RunConfig default_config();
// Strict parse: unknown keys are rejected with their JSON pointer path.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

void cmd_gen_data(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_extract_vectors(const RunConfig& config);
void cmd_optimize_image(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
// Merges previously written eval reports into a combined table.
void cmd_report(const RunConfig& config, const std::vector<std::filesystem::path>& report_paths);

}  // namespace visor::pipeline
