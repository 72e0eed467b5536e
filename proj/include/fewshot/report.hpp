/**
 * @file report.hpp
 * @brief Run-artifact persistence: evaluation reports (JSON), training logs
 * (tab-delimited text), and the aggregated results table (CSV).
 */
#pragma once

#include <string>
#include <vector>

#include "fewshot/trainer.hpp"

namespace fewshot {

/// Writes an evaluation report as JSON. Identical reports (same checkpoint
/// and seed) serialize to identical bytes.
void write_eval_report(const std::string& path, const EvalReport& report);

/// Reads a report written by write_eval_report.
EvalReport read_eval_report(const std::string& path);

/// Writes one `task<TAB>loss<TAB>val_acc` row per training task; val_acc is
/// -1 on tasks without a validation pass.
void write_train_log(const std::string& path, const std::vector<LogRow>& log);

/// Reads a log written by write_train_log.
std::vector<LogRow> read_train_log(const std::string& path);

/// One aggregated line of the results table.
struct ResultsRow {
  std::string method;
  std::string scenario;
  double mean_accuracy = 0.0;
  double ci_half_width = 0.0;  // 95% CI over the repeat means
  int n_repeats = 0;
};

/// Rows keyed by (method, scenario), sorted for deterministic output.
struct ResultsTable {
  std::vector<ResultsRow> rows;
};

/// Groups reports by (method, scenario); each row carries the mean of the
/// repeat means and the 95% half-width 1.96 * s / sqrt(n) over those means.
ResultsTable aggregate_reports(const std::vector<EvalReport>& reports);

/// Comma-delimited table with a header row; accuracies to four decimals.
std::string results_to_csv(const ResultsTable& table);

/// Collects every report file among `inputs` (JSON files are read directly,
/// directories are searched recursively for "report.json") and aggregates.
ResultsTable collect_reports(const std::vector<std::string>& inputs);

/// Canonical run-directory name: <method>_<scenario>_r<repeat>_s<seed>.
std::string run_dir_name(const std::string& method, const std::string& scenario, int repeat,
                         std::uint64_t seed);

}  // namespace fewshot
