#include "visor/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "visor/checkpoint.hpp"
#include "visor/error.hpp"
#include "visor/hash.hpp"
#include "visor/image_io.hpp"
#include "visor/steering.hpp"
#include "visor/tokenizer.hpp"

namespace visor::pipeline {

using nlohmann::json;

std::filesystem::path RunConfig::resolve(const std::string& name) const {
  const std::filesystem::path p(name);
  return p.is_absolute() ? p : out_dir / p;
}

RunConfig default_config() {
  RunConfig cfg;
  cfg.model.vocab = data::Tokenizer().vocab_size();
  cfg.train.steps = 1500;
  cfg.train.learning_rate = 0.05;
  cfg.train.momentum = 0.9;
  cfg.train.batch_size = 8;
  cfg.visor.opt.iterations = 800;
  return cfg;
}

// ---------------------------------------------------------------------------
// Strict config parsing

namespace {

void check_keys(const json& obj, const std::string& pointer,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key at " + pointer + "/" + key);
    }
    (void)value;
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& pointer) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("wrong type at " + pointer + "/" + key);
  }
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json root = json::parse(in, nullptr, false);
  if (root.is_discarded() || !root.is_object()) {
    throw ConfigError("config is not a JSON object: " + path.string());
  }

  check_keys(root, "", {"version", "seed", "baseline_seed", "out_dir", "model", "data", "train",
                        "vectors", "visor", "eval", "paths"});
  int version = 1;
  read_field(root, "version", version, "");
  if (version != 1) throw ConfigError("unsupported config version " + std::to_string(version));

  RunConfig cfg = default_config();
  read_field(root, "seed", cfg.seed, "");
  read_field(root, "baseline_seed", cfg.baseline_seed, "");
  std::string out_dir = cfg.out_dir.string();
  read_field(root, "out_dir", out_dir, "");
  cfg.out_dir = out_dir;

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m, "/model",
               {"height", "width", "patch_size", "dim", "layers", "heads", "max_seq_len"});
    read_field(m, "height", cfg.model.height, "/model");
    read_field(m, "width", cfg.model.width, "/model");
    read_field(m, "patch_size", cfg.model.patch_size, "/model");
    read_field(m, "dim", cfg.model.dim, "/model");
    read_field(m, "layers", cfg.model.layers, "/model");
    read_field(m, "heads", cfg.model.heads, "/model");
    read_field(m, "max_seq_len", cfg.model.max_seq_len, "/model");
  }
  cfg.model.vocab = data::Tokenizer().vocab_size();
  cfg.model.validate();

  if (root.contains("data")) {
    const json& d = root.at("data");
    check_keys(d, "/data",
               {"behavior", "n_train", "n_test", "retention_train_items", "retention_eval_items"});
    read_field(d, "behavior", cfg.data.behavior, "/data");
    read_field(d, "n_train", cfg.data.n_train, "/data");
    read_field(d, "n_test", cfg.data.n_test, "/data");
    read_field(d, "retention_train_items", cfg.data.retention_train_items, "/data");
    read_field(d, "retention_eval_items", cfg.data.retention_eval_items, "/data");
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    check_keys(t, "/train",
               {"steps", "learning_rate", "momentum", "batch_size", "signal_shift",
                "system_prompt_fraction", "log_every"});
    read_field(t, "steps", cfg.train.steps, "/train");
    read_field(t, "learning_rate", cfg.train.learning_rate, "/train");
    read_field(t, "momentum", cfg.train.momentum, "/train");
    read_field(t, "batch_size", cfg.train.batch_size, "/train");
    read_field(t, "log_every", cfg.train.log_every, "/train");
    read_field(t, "signal_shift", cfg.signal_shift, "/train");
    read_field(t, "system_prompt_fraction", cfg.system_prompt_fraction, "/train");
  }

  if (root.contains("vectors")) {
    const json& v = root.at("vectors");
    check_keys(v, "/vectors", {"layers", "candidates", "validation_pairs"});
    read_field(v, "layers", cfg.vectors.layers, "/vectors");
    read_field(v, "candidates", cfg.vectors.candidates, "/vectors");
    read_field(v, "validation_pairs", cfg.vectors.validation_pairs, "/vectors");
  }

  if (root.contains("visor")) {
    const json& v = root.at("visor");
    check_keys(v, "/visor",
               {"layers", "layer_weights", "learning_rate", "iterations", "last_token_count",
                "batch_size", "constraint", "init", "vector_scale", "directions"});
    read_field(v, "layers", cfg.visor.opt.layers, "/visor");
    read_field(v, "layer_weights", cfg.visor.opt.layer_weights, "/visor");
    read_field(v, "learning_rate", cfg.visor.opt.learning_rate, "/visor");
    read_field(v, "iterations", cfg.visor.opt.iterations, "/visor");
    read_field(v, "last_token_count", cfg.visor.opt.last_token_count, "/visor");
    read_field(v, "batch_size", cfg.visor.opt.batch_size, "/visor");
    read_field(v, "init", cfg.visor.init, "/visor");
    read_field(v, "vector_scale", cfg.visor.vector_scale, "/visor");
    read_field(v, "directions", cfg.visor.directions, "/visor");
    if (v.contains("constraint")) {
      const json& c = v.at("constraint");
      check_keys(c, "/visor/constraint", {"kind", "epsilon"});
      std::string kind = "unconstrained";
      read_field(c, "kind", kind, "/visor/constraint");
      if (kind == "unconstrained") cfg.visor.opt.constraint.kind = vopt::ConstraintKind::kUnconstrained;
      else if (kind == "l_inf") cfg.visor.opt.constraint.kind = vopt::ConstraintKind::kLInf;
      else if (kind == "l_2") cfg.visor.opt.constraint.kind = vopt::ConstraintKind::kL2;
      else throw ConfigError("unknown constraint kind '" + kind + "' at /visor/constraint/kind");
      read_field(c, "epsilon", cfg.visor.opt.constraint.epsilon, "/visor/constraint");
    }
    for (const std::string& d : cfg.visor.directions) {
      if (d != "positive" && d != "negative") {
        throw ConfigError("unknown direction '" + d + "' at /visor/directions");
      }
    }
  }

  if (root.contains("eval")) {
    const json& e = root.at("eval");
    check_keys(e, "/eval", {"conditions", "use_ppm8_roundtrip"});
    read_field(e, "use_ppm8_roundtrip", cfg.eval.use_ppm8_roundtrip, "/eval");
    if (e.contains("conditions")) {
      cfg.eval.conditions.clear();
      int i = 0;
      for (const json& c : e.at("conditions")) {
        const std::string pointer = "/eval/conditions/" + std::to_string(i++);
        check_keys(c, pointer, {"method", "direction"});
        ConditionSpec spec;
        read_field(c, "method", spec.method, pointer);
        read_field(c, "direction", spec.direction, pointer);
        if (spec.method.empty()) throw ConfigError("missing method at " + pointer);
        eval::parse_method(spec.method);
        eval::parse_direction(spec.direction);
        cfg.eval.conditions.push_back(std::move(spec));
      }
    }
  }

  if (root.contains("paths")) {
    const json& p = root.at("paths");
    check_keys(p, "/paths",
               {"corpus_train", "corpus_test", "retention_train", "retention_eval", "checkpoint",
                "vectors", "image_positive_raw", "image_negative_raw", "image_positive_ppm",
                "image_negative_ppm", "loss_positive", "loss_negative", "report_json",
                "report_csv"});
    read_field(p, "corpus_train", cfg.paths.corpus_train, "/paths");
    read_field(p, "corpus_test", cfg.paths.corpus_test, "/paths");
    read_field(p, "retention_train", cfg.paths.retention_train, "/paths");
    read_field(p, "retention_eval", cfg.paths.retention_eval, "/paths");
    read_field(p, "checkpoint", cfg.paths.checkpoint, "/paths");
    read_field(p, "vectors", cfg.paths.vectors, "/paths");
    read_field(p, "image_positive_raw", cfg.paths.image_positive_raw, "/paths");
    read_field(p, "image_negative_raw", cfg.paths.image_negative_raw, "/paths");
    read_field(p, "image_positive_ppm", cfg.paths.image_positive_ppm, "/paths");
    read_field(p, "image_negative_ppm", cfg.paths.image_negative_ppm, "/paths");
    read_field(p, "loss_positive", cfg.paths.loss_positive, "/paths");
    read_field(p, "loss_negative", cfg.paths.loss_negative, "/paths");
    read_field(p, "report_json", cfg.paths.report_json, "/paths");
    read_field(p, "report_csv", cfg.paths.report_csv, "/paths");
  }

  return cfg;
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  json root;
  root["version"] = 1;
  root["seed"] = cfg.seed;
  root["baseline_seed"] = cfg.baseline_seed;
  root["out_dir"] = cfg.out_dir.string();
  root["model"] = {{"height", cfg.model.height},       {"width", cfg.model.width},
                   {"patch_size", cfg.model.patch_size}, {"dim", cfg.model.dim},
                   {"layers", cfg.model.layers},       {"heads", cfg.model.heads},
                   {"max_seq_len", cfg.model.max_seq_len}};
  root["data"] = {{"behavior", cfg.data.behavior},
                  {"n_train", cfg.data.n_train},
                  {"n_test", cfg.data.n_test},
                  {"retention_train_items", cfg.data.retention_train_items},
                  {"retention_eval_items", cfg.data.retention_eval_items}};
  root["train"] = {{"steps", cfg.train.steps},
                   {"learning_rate", cfg.train.learning_rate},
                   {"momentum", cfg.train.momentum},
                   {"batch_size", cfg.train.batch_size},
                   {"signal_shift", cfg.signal_shift},
                   {"system_prompt_fraction", cfg.system_prompt_fraction},
                   {"log_every", cfg.train.log_every}};
  root["vectors"] = {{"layers", cfg.vectors.layers},
                     {"candidates", cfg.vectors.candidates},
                     {"validation_pairs", cfg.vectors.validation_pairs}};
  std::string kind = "unconstrained";
  if (cfg.visor.opt.constraint.kind == vopt::ConstraintKind::kLInf) kind = "l_inf";
  if (cfg.visor.opt.constraint.kind == vopt::ConstraintKind::kL2) kind = "l_2";
  root["visor"] = {{"layers", cfg.visor.opt.layers},
                   {"layer_weights", cfg.visor.opt.layer_weights},
                   {"learning_rate", cfg.visor.opt.learning_rate},
                   {"iterations", cfg.visor.opt.iterations},
                   {"last_token_count", cfg.visor.opt.last_token_count},
                   {"batch_size", cfg.visor.opt.batch_size},
                   {"constraint", {{"kind", kind}, {"epsilon", cfg.visor.opt.constraint.epsilon}}},
                   {"init", cfg.visor.init},
                   {"vector_scale", cfg.visor.vector_scale},
                   {"directions", cfg.visor.directions}};
  json conditions = json::array();
  for (const auto& c : cfg.eval.conditions) {
    conditions.push_back({{"method", c.method}, {"direction", c.direction}});
  }
  root["eval"] = {{"conditions", conditions}, {"use_ppm8_roundtrip", cfg.eval.use_ppm8_roundtrip}};
  root["paths"] = {{"corpus_train", cfg.paths.corpus_train},
                   {"corpus_test", cfg.paths.corpus_test},
                   {"retention_train", cfg.paths.retention_train},
                   {"retention_eval", cfg.paths.retention_eval},
                   {"checkpoint", cfg.paths.checkpoint},
                   {"vectors", cfg.paths.vectors},
                   {"image_positive_raw", cfg.paths.image_positive_raw},
                   {"image_negative_raw", cfg.paths.image_negative_raw},
                   {"image_positive_ppm", cfg.paths.image_positive_ppm},
                   {"image_negative_ppm", cfg.paths.image_negative_ppm},
                   {"loss_positive", cfg.paths.loss_positive},
                   {"loss_negative", cfg.paths.loss_negative},
                   {"report_json", cfg.paths.report_json},
                   {"report_csv", cfg.paths.report_csv}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open config for writing: " + path.string());
  out << root.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Shared command helpers

namespace {

constexpr std::uint64_t kRetentionTrainStream = 0x52455431;
constexpr std::uint64_t kRetentionEvalStream = 0x52455432;

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& input_names,
                    const std::vector<std::string>& output_names) {
  json inputs = json::object();
  for (const auto& name : input_names) inputs[name] = hash_file_hex(cfg.resolve(name));
  json outputs = json::object();
  for (const auto& name : output_names) outputs[name] = hash_file_hex(cfg.resolve(name));
  const json manifest{{"command", command},
                      {"seed", cfg.seed},
                      {"baseline_seed", cfg.baseline_seed},
                      {"inputs", inputs},
                      {"outputs", outputs}};
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = cfg.out_dir / (command + ".manifest.json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest: " + path.string());
  out << manifest.dump(2) << '\n';
  for (const auto& name : output_names) {
    std::printf("%s  %s\n", outputs[name].get<std::string>().c_str(), name.c_str());
  }
}

void require_input(const RunConfig& cfg, const std::string& name, const char* command) {
  const auto path = cfg.resolve(name);
  if (!std::filesystem::exists(path)) {
    throw Error(std::string(command) + ": required input missing: " + path.string());
  }
}

Image resolve_init_image(const RunConfig& cfg) {
  if (cfg.visor.init == "baseline") {
    return steering::make_baseline_image(cfg.model, cfg.baseline_seed);
  }
  const std::filesystem::path p = cfg.resolve(cfg.visor.init);
  const auto fmt = p.extension() == ".ppm" ? eval::ImageFormat::kPpm8 : eval::ImageFormat::kRaw32;
  Image img = eval::import_image(p, fmt);
  if (img.height != cfg.model.height || img.width != cfg.model.width) {
    throw Error("init image size does not match model spec: " + p.string());
  }
  validate_pixels(img, "init image");
  return img;
}

std::string image_hash(const Image& img) {
  return hash_hex(fnv1a64(img.data.data(), img.data.size() * sizeof(float)));
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open loss CSV for writing: " + path.string());
  out << "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, history[i]);
    out << buf;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_data(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  data::generate_behavior_corpus(cfg.seed, cfg.data.behavior, cfg.data.n_train, cfg.data.n_test,
                                 cfg.resolve(cfg.paths.corpus_train),
                                 cfg.resolve(cfg.paths.corpus_test));
  data::generate_retention_suite(mix_seed(cfg.seed, kRetentionTrainStream),
                                 cfg.data.retention_train_items,
                                 cfg.resolve(cfg.paths.retention_train));
  data::generate_retention_suite(mix_seed(cfg.seed, kRetentionEvalStream),
                                 cfg.data.retention_eval_items,
                                 cfg.resolve(cfg.paths.retention_eval));
  write_manifest(cfg, "gen-data", {},
                 {cfg.paths.corpus_train, cfg.paths.corpus_test, cfg.paths.retention_train,
                  cfg.paths.retention_eval});
}

void cmd_train(const RunConfig& cfg) {
  require_input(cfg, cfg.paths.corpus_train, "train");
  require_input(cfg, cfg.paths.retention_train, "train");
  const auto pairs = data::load_pairs(cfg.resolve(cfg.paths.corpus_train));
  const auto retention = data::load_retention(cfg.resolve(cfg.paths.retention_train));
  const auto prompts = steering::default_system_prompts(cfg.data.behavior);
  const vlm::SystemPromptTexts sys{prompts.positive_instruction, prompts.negative_instruction};

  vlm::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto examples = vlm::build_training_examples(pairs, retention, cfg.model, cfg.seed,
                                                     cfg.signal_shift, cfg.system_prompt_fraction,
                                                     &sys);
  const vlm::TrainResult result = vlm::train_toy_model(examples, cfg.model, tc);
  vlm::save_checkpoint(result.params, cfg.resolve(cfg.paths.checkpoint));

  if (std::filesystem::exists(cfg.resolve(cfg.paths.corpus_test))) {
    const auto test_pairs = data::load_pairs(cfg.resolve(cfg.paths.corpus_test));
    const auto held_out = vlm::build_training_examples(test_pairs, {}, cfg.model,
                                                       mix_seed(cfg.seed, 0xBEEF), cfg.signal_shift,
                                                       0.0, nullptr);
    const double acc = vlm::completion_token_accuracy(result.params, held_out);
    const double flip = vlm::behavior_flip_rate(result.params, test_pairs,
                                                mix_seed(cfg.seed, 0xBEEF), cfg.signal_shift);
    std::printf("held-out next-token accuracy: %.1f%%\n", 100.0 * acc);
    std::printf("behavior flip rate: %.1f%%\n", 100.0 * flip);
  }
  write_manifest(cfg, "train", {cfg.paths.corpus_train, cfg.paths.retention_train},
                 {cfg.paths.checkpoint});
}

void cmd_extract_vectors(const RunConfig& cfg) {
  require_input(cfg, cfg.paths.checkpoint, "extract-vectors");
  require_input(cfg, cfg.paths.corpus_train, "extract-vectors");
  const auto params = vlm::load_checkpoint(cfg.resolve(cfg.paths.checkpoint));
  const auto pairs = data::load_pairs(cfg.resolve(cfg.paths.corpus_train));
  const Image baseline = steering::make_baseline_image(params.spec, cfg.baseline_seed);

  const auto vectors = steering::compute_caa_vectors(params, pairs, cfg.vectors.layers, baseline,
                                                     cfg.baseline_seed);

  const int n_val = std::min<int>(cfg.vectors.validation_pairs, static_cast<int>(pairs.size()));
  const std::vector<data::ContrastivePair> validation(pairs.end() - n_val, pairs.end());
  const auto selection =
      steering::select_multiplier(params, vectors, validation, cfg.vectors.candidates, baseline);

  steering::VectorFile file;
  file.behavior = cfg.data.behavior;
  file.vectors = vectors;
  file.multipliers = selection;
  file.baseline_seed = cfg.baseline_seed;
  file.checkpoint_hash = hash_file_hex(cfg.resolve(cfg.paths.checkpoint));
  steering::save_vectors(file, cfg.resolve(cfg.paths.vectors));

  std::printf("selected multipliers: positive %+g (score %.1f), negative %+g (score %.1f), "
              "unsteered %.1f\n",
              selection.alpha_positive, selection.score_positive, selection.alpha_negative,
              selection.score_negative, selection.score_zero);
  write_manifest(cfg, "extract-vectors", {cfg.paths.checkpoint, cfg.paths.corpus_train},
                 {cfg.paths.vectors});
}

void cmd_optimize_image(const RunConfig& cfg) {
  require_input(cfg, cfg.paths.checkpoint, "optimize-image");
  require_input(cfg, cfg.paths.vectors, "optimize-image");
  require_input(cfg, cfg.paths.corpus_train, "optimize-image");
  const auto params = vlm::load_checkpoint(cfg.resolve(cfg.paths.checkpoint));
  const auto file = steering::load_vectors(cfg.resolve(cfg.paths.vectors));
  const auto pairs = data::load_pairs(cfg.resolve(cfg.paths.corpus_train));
  const Image x_base = resolve_init_image(cfg);

  std::vector<std::string> outputs;
  for (const std::string& direction : cfg.visor.directions) {
    const bool positive = direction == "positive";
    double scale = positive ? file.multipliers.alpha_positive : file.multipliers.alpha_negative;
    if (cfg.visor.vector_scale != 0.0) {
      scale = positive ? std::abs(cfg.visor.vector_scale) : -std::abs(cfg.visor.vector_scale);
    }
    if (scale == 0.0) {
      throw Error("optimize-image: selected multiplier for direction '" + direction +
                  "' is zero; nothing to optimize toward");
    }
    std::vector<vlm::SteeringDelta> deltas;
    for (const auto& v : file.vectors) {
      vlm::SteeringDelta d;
      d.layer = v.layer;
      d.direction = Tensor({static_cast<int>(v.direction.size())});
      for (std::int64_t j = 0; j < v.direction.size(); ++j) {
        d.direction.at(j) = scale * v.direction.at(j);
      }
      deltas.push_back(std::move(d));
    }
    vopt::VisorConfig oc = cfg.visor.opt;
    oc.seed = mix_seed(cfg.seed, positive ? 0x504f53 : 0x4e4547);
    const auto result = vopt::optimize_steering_image(params, deltas, pairs, oc, x_base);

    const std::string& raw = positive ? cfg.paths.image_positive_raw : cfg.paths.image_negative_raw;
    const std::string& ppm = positive ? cfg.paths.image_positive_ppm : cfg.paths.image_negative_ppm;
    const std::string& loss = positive ? cfg.paths.loss_positive : cfg.paths.loss_negative;
    eval::export_image(result.image, cfg.resolve(raw), eval::ImageFormat::kRaw32);
    eval::export_image(result.image, cfg.resolve(ppm), eval::ImageFormat::kPpm8);
    write_loss_csv(cfg.resolve(loss), result.loss_history);
    outputs.push_back(raw);
    outputs.push_back(ppm);
    outputs.push_back(loss);
    if (!result.loss_history.empty()) {
      std::printf("%s image: loss %.4g -> %.4g over %zu iterations\n", direction.c_str(),
                  result.loss_history.front(), result.loss_history.back(),
                  result.loss_history.size());
    }
  }
  write_manifest(cfg, "optimize-image",
                 {cfg.paths.checkpoint, cfg.paths.vectors, cfg.paths.corpus_train}, outputs);
}

void cmd_evaluate(const RunConfig& cfg) {
  require_input(cfg, cfg.paths.checkpoint, "evaluate");
  require_input(cfg, cfg.paths.corpus_test, "evaluate");
  require_input(cfg, cfg.paths.retention_eval, "evaluate");
  const auto params = vlm::load_checkpoint(cfg.resolve(cfg.paths.checkpoint));
  const auto test_pairs = data::load_pairs(cfg.resolve(cfg.paths.corpus_test));
  const auto suite = data::load_retention(cfg.resolve(cfg.paths.retention_eval));
  const Image baseline = steering::make_baseline_image(params.spec, cfg.baseline_seed);

  eval::Report report;
  report.behavior = cfg.data.behavior;
  report.fingerprints["checkpoint"] = hash_file_hex(cfg.resolve(cfg.paths.checkpoint));
  report.fingerprints["corpus_test"] = hash_file_hex(cfg.resolve(cfg.paths.corpus_test));
  report.fingerprints["retention_eval"] = hash_file_hex(cfg.resolve(cfg.paths.retention_eval));
  report.fingerprints["baseline_image"] = image_hash(baseline);

  std::optional<steering::VectorFile> vector_file;
  auto need_vectors = [&]() -> const steering::VectorFile& {
    if (!vector_file.has_value()) {
      require_input(cfg, cfg.paths.vectors, "evaluate");
      vector_file = steering::load_vectors(cfg.resolve(cfg.paths.vectors));
      report.fingerprints["vectors"] = hash_file_hex(cfg.resolve(cfg.paths.vectors));
    }
    return *vector_file;
  };
  auto load_visor_image = [&](bool positive) {
    const std::string& name = cfg.eval.use_ppm8_roundtrip
                                  ? (positive ? cfg.paths.image_positive_ppm
                                              : cfg.paths.image_negative_ppm)
                                  : (positive ? cfg.paths.image_positive_raw
                                              : cfg.paths.image_negative_raw);
    require_input(cfg, name, "evaluate");
    const auto fmt =
        cfg.eval.use_ppm8_roundtrip ? eval::ImageFormat::kPpm8 : eval::ImageFormat::kRaw32;
    Image img = eval::import_image(cfg.resolve(name), fmt);
    report.fingerprints[positive ? "image_positive" : "image_negative"] =
        hash_file_hex(cfg.resolve(name));
    return img;
  };

  for (const ConditionSpec& spec : cfg.eval.conditions) {
    eval::EvalCondition cond;
    cond.method = eval::parse_method(spec.method);
    cond.direction = eval::parse_direction(spec.direction);
    const bool positive = cond.direction == eval::Direction::kPositive;
    switch (cond.method) {
      case eval::Method::kBaseline:
        break;
      case eval::Method::kSystemPrompt: {
        const auto prompts = steering::default_system_prompts(cfg.data.behavior);
        cond.instruction = positive ? prompts.positive_instruction : prompts.negative_instruction;
        break;
      }
      case eval::Method::kSteeringVector: {
        const auto& vf = need_vectors();
        cond.vectors = vf.vectors;
        cond.alpha = positive ? vf.multipliers.alpha_positive : vf.multipliers.alpha_negative;
        break;
      }
      case eval::Method::kVisorImage:
        cond.image = load_visor_image(positive);
        break;
    }
    eval::ConditionResult res = eval::behavioral_alignment_score(params, test_pairs, cond, baseline);
    std::printf("BAS %-28s %6.1f\n", cond.label().c_str(), res.bas);
    report.conditions.push_back(std::move(res));
  }

  report.retention["baseline"] = eval::retention_eval(params, suite, baseline);
  std::printf("retention %-22s %6.1f\n", "baseline", report.retention["baseline"]);
  for (const ConditionSpec& spec : cfg.eval.conditions) {
    if (eval::parse_method(spec.method) != eval::Method::kVisorImage) continue;
    const bool positive = eval::parse_direction(spec.direction) == eval::Direction::kPositive;
    const std::string label = positive ? "visor_positive" : "visor_negative";
    if (report.retention.count(label)) continue;
    report.retention[label] = eval::retention_eval(params, suite, load_visor_image(positive));
    std::printf("retention %-22s %6.1f\n", label.c_str(), report.retention[label]);
  }

  eval::write_report_json(report, cfg.resolve(cfg.paths.report_json));
  eval::write_report_csv(report, cfg.resolve(cfg.paths.report_csv));
  write_manifest(cfg, "evaluate",
                 {cfg.paths.checkpoint, cfg.paths.corpus_test, cfg.paths.retention_eval},
                 {cfg.paths.report_json, cfg.paths.report_csv});
}

void cmd_report(const RunConfig& cfg, const std::vector<std::filesystem::path>& report_paths) {
  if (report_paths.empty()) throw ConfigError("report: need at least one input report");
  std::vector<eval::Report> reports;
  for (const auto& p : report_paths) reports.push_back(eval::read_report_json(p));
  const eval::Report merged = eval::merge_reports(reports);
  std::filesystem::create_directories(cfg.out_dir);
  const auto json_path = cfg.out_dir / "merged_report.json";
  const auto csv_path = cfg.out_dir / "merged_report.csv";
  eval::write_report_json(merged, json_path);
  eval::write_report_csv(merged, csv_path);
  std::printf("behavior,method,direction,BAS\n");
  for (const auto& c : merged.conditions) {
    std::printf("%s,%s,%s,%.1f\n", c.behavior.c_str(), eval::method_name(c.method).c_str(),
                eval::direction_name(c.direction).c_str(), c.bas);
  }
}

}  // namespace visor::pipeline
