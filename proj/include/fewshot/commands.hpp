/**
 * @file commands.hpp
 * @brief The four CLI commands as library functions: generate-data, train,
 * eval, report. Each validates its inputs up front, performs its side effects
 * under the output directory only, and throws (DataError/TensorError) with an
 * actionable message on any failure.
 */
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fewshot/config.hpp"

namespace fewshot {

/// Shared command-line inputs; unset optionals fall back to the config.
struct CommandOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;  // overrides ExperimentConfig::seed
  std::optional<std::string> out;     // overrides ExperimentConfig::output_dir
};

/// Exports the synthetic target dataset as root/<class>/<NNNN>.pgm|ppm plus
/// a manifest.json recording the generator parameters and seed.
void cmd_generate_data(const CommandOptions& opts);

/// Runs the configured scenario for n_repeats repeats. Each repeat persists
/// <out>/<method>_<scenario>_r<R>_s<seed>/ with checkpoint.bin, training
/// log(s), report.json, and the resolved config.
void cmd_train(const CommandOptions& opts);

/// Evaluates the configured checkpoint over test_tasks episodes and writes
/// <out>/report.json. Byte-identical for identical checkpoint and seed.
void cmd_eval(const CommandOptions& opts);

/// Aggregates report files (directories are searched for report.json) into
/// <out>/results.csv; returns the CSV text.
std::string cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir);

}  // namespace fewshot
