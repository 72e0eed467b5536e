/**
 * @file fewshot_main.cpp
 * @brief Command-line entry point: generate-data / train / eval / report.
 */
#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "fewshot/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Few-shot episodic training and evaluation harness"};
  app.require_subcommand(1);

  std::string config_path;
  long long seed = 0;
  std::string out_dir;
  std::vector<std::string> report_inputs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Path to a JSON experiment config")->required();
    cmd->add_option("--seed", seed, "Master random seed (overrides the config)");
    cmd->add_option("--out", out_dir, "Output directory (overrides the config)");
  };

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic image dataset to disk");
  add_common(gen);
  auto* train = app.add_subcommand("train", "Run a training scenario from a config");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over test tasks");
  add_common(eval);
  auto* report = app.add_subcommand("report", "Aggregate evaluation reports into a results table");
  report->add_option("inputs", report_inputs, "Report files or run directories")->required();
  report->add_option("--out", out_dir, "Output directory for results.csv");

  CLI11_PARSE(app, argc, argv);

  fewshot::CommandOptions opts;
  opts.config_path = config_path;
  CLI::App* sub = app.get_subcommands().front();
  if (sub != report && sub->count("--seed") > 0) opts.seed = static_cast<std::uint64_t>(seed);
  if (!out_dir.empty()) opts.out = out_dir;

  try {
    if (gen->parsed()) {
      fewshot::cmd_generate_data(opts);
    } else if (train->parsed()) {
      fewshot::cmd_train(opts);
    } else if (eval->parsed()) {
      fewshot::cmd_eval(opts);
    } else if (report->parsed()) {
      const std::string csv =
          fewshot::cmd_report(report_inputs, out_dir.empty() ? "." : out_dir);
      std::fputs(csv.c_str(), stdout);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
