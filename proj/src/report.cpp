/**
 * @file report.cpp
 * @brief Report, log, and results-table persistence (see report.hpp).
 */
#include "fewshot/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fewshot {

namespace {

using nlohmann::json;

}  // namespace

void write_eval_report(const std::string& path, const EvalReport& report) {
  json j{{"method", report.method},
         {"scenario", report.scenario},
         {"dataset", report.dataset},
         {"repeat_index", report.repeat_index},
         {"seed", report.seed},
         {"n_tasks", report.task_accuracies.size()},
         {"mean", report.mean},
         {"ci_half_width", report.ci_half_width},
         {"task_accuracies", report.task_accuracies}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open report file for writing: " + path);
  os << j.dump(2) << "\n";
  if (!os) throw DataError("failed writing report: " + path);
}

EvalReport read_eval_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open report file: " + path);
  json j;
  try {
    is >> j;
    EvalReport report;
    report.method = j.at("method").get<std::string>();
    report.scenario = j.at("scenario").get<std::string>();
    report.dataset = j.at("dataset").get<std::string>();
    report.repeat_index = j.at("repeat_index").get<int>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.mean = j.at("mean").get<double>();
    report.ci_half_width = j.at("ci_half_width").get<double>();
    report.task_accuracies = j.at("task_accuracies").get<std::vector<double>>();
    return report;
  } catch (const json::exception& e) {
    throw DataError("malformed report file " + path + ": " + e.what());
  }
}

void write_train_log(const std::string& path, const std::vector<LogRow>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open log file for writing: " + path);
  os << "task\tloss\tval_acc\n";
  char line[96];
  for (const auto& row : log) {
    std::snprintf(line, sizeof(line), "%d\t%.9g\t%.9g\n", row.task, row.loss, row.val_acc);
    os << line;
  }
  if (!os) throw DataError("failed writing log: " + path);
}

std::vector<LogRow> read_train_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open log file: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "task\tloss\tval_acc")
    throw DataError("not a training log (bad header): " + path);
  std::vector<LogRow> log;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LogRow row;
    std::istringstream fields(line);
    if (!(fields >> row.task >> row.loss >> row.val_acc))
      throw DataError("malformed log row in " + path + ": '" + line + "'");
    log.push_back(row);
  }
  return log;
}

ResultsTable aggregate_reports(const std::vector<EvalReport>& reports) {
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : reports) groups[{r.method, r.scenario}].push_back(r.mean);
  ResultsTable table;
  for (const auto& [key, means] : groups) {
    ResultsRow row;
    row.method = key.first;
    row.scenario = key.second;
    row.n_repeats = static_cast<int>(means.size());
    double sum = 0.0;
    for (double m : means) sum += m;
    row.mean_accuracy = sum / static_cast<double>(means.size());
    if (means.size() > 1) {
      double sq = 0.0;
      for (double m : means) sq += (m - row.mean_accuracy) * (m - row.mean_accuracy);
      const double s = std::sqrt(sq / static_cast<double>(means.size() - 1));
      row.ci_half_width = 1.96 * s / std::sqrt(static_cast<double>(means.size()));
    }
    table.rows.push_back(std::move(row));
  }
  return table;  // std::map iteration already sorts by (method, scenario)
}

std::string results_to_csv(const ResultsTable& table) {
  std::ostringstream os;
  os << "method,scenario,mean_accuracy,ci_half_width,n_repeats\n";
  char line[160];
  for (const auto& row : table.rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.4f,%.4f,%d\n", row.method.c_str(),
                  row.scenario.c_str(), row.mean_accuracy, row.ci_half_width, row.n_repeats);
    os << line;
  }
  return os.str();
}

ResultsTable collect_reports(const std::vector<std::string>& inputs) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& input : inputs) {
    if (fs::is_directory(input)) {
      for (const auto& entry : fs::recursive_directory_iterator(input))
        if (entry.is_regular_file() && entry.path().filename() == "report.json")
          files.push_back(entry.path().string());
    } else if (fs::is_regular_file(input)) {
      files.push_back(input);
    } else {
      throw DataError("report input does not exist: " + input);
    }
  }
  if (files.empty()) throw DataError("no report files found under the given inputs");
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> reports;
  reports.reserve(files.size());
  for (const auto& file : files) reports.push_back(read_eval_report(file));
  return aggregate_reports(reports);
}

std::string run_dir_name(const std::string& method, const std::string& scenario, int repeat,
                         std::uint64_t seed) {
  std::ostringstream os;
  os << method << "_" << scenario << "_r" << repeat << "_s" << seed;
  return os.str();
}

}  // namespace fewshot
