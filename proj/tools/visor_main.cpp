// Command-line driver for the steering-image workbench: data generation, toy
// model training, vector extraction, image optimization, evaluation, report
// merging. Every command is a pure function of (config, input artifacts).

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "visor/error.hpp"
#include "visor/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON run configuration")->required();
  cmd->add_option("--seed", args.seed, "override the config seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out", args.out_dir, "override the config output directory");
}

visor::pipeline::RunConfig load(const CommonArgs& args) {
  auto cfg = visor::pipeline::load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visor: universal steering-image workbench"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, extract_args, optimize_args, eval_args, report_args;
  std::vector<std::string> report_inputs;

  add_common(app.add_subcommand("gen-data", "generate behavior corpus and retention suites"),
             gen_args);
  add_common(app.add_subcommand("train", "train the toy vision-language model"), train_args);
  add_common(app.add_subcommand("extract-vectors",
                                "extract contrastive activation steering vectors"),
             extract_args);
  add_common(app.add_subcommand("optimize-image", "optimize universal steering images"),
             optimize_args);
  add_common(app.add_subcommand("evaluate", "score all configured control conditions"),
             eval_args);
  CLI::App* report_cmd = app.add_subcommand("report", "merge evaluation reports");
  add_common(report_cmd, report_args);
  report_cmd->add_option("reports", report_inputs, "evaluation report JSON files")
      ->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("gen-data")) {
      visor::pipeline::cmd_gen_data(load(gen_args));
    } else if (app.got_subcommand("train")) {
      visor::pipeline::cmd_train(load(train_args));
    } else if (app.got_subcommand("extract-vectors")) {
      visor::pipeline::cmd_extract_vectors(load(extract_args));
    } else if (app.got_subcommand("optimize-image")) {
      visor::pipeline::cmd_optimize_image(load(optimize_args));
    } else if (app.got_subcommand("evaluate")) {
      visor::pipeline::cmd_evaluate(load(eval_args));
    } else if (app.got_subcommand("report")) {
      std::vector<std::filesystem::path> paths(report_inputs.begin(), report_inputs.end());
      visor::pipeline::cmd_report(load(report_args), paths);
    }
  } catch (const visor::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const visor::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
