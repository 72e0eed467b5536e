/**
 * @file commands.cpp
 * @brief Implementations of the CLI commands (see commands.hpp).
 */
#include "fewshot/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fewshot/baseline.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/image_io.hpp"
#include "fewshot/report.hpp"
#include "fewshot/synthetic.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

namespace {

namespace fs = std::filesystem;

template <class T>
LabeledDataset<T> build_dataset(const DatasetSpec& spec) {
  if (spec.kind == "synthetic")
    return generate_synthetic_dataset<T>(spec.classes, spec.per_class, spec.image_size,
                                         spec.noise_level, spec.seed, spec.channels);
  return load_directory_dataset<T>(spec.path, spec.image_size);
}

std::string dataset_desc(const DatasetSpec& spec) {
  if (spec.kind == "directory") return spec.path;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "synthetic(classes=%d,per_class=%d,size=%d,noise=%g,seed=%llu)",
                spec.classes, spec.per_class, spec.image_size, spec.noise_level,
                static_cast<unsigned long long>(spec.seed));
  return buf;
}

ExperimentConfig load_effective_config(const CommandOptions& opts) {
  if (opts.config_path.empty()) throw DataError("no config file given (--config)");
  ExperimentConfig cfg = load_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.output_dir = *opts.out;
  return cfg;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path.string());
  os << text;
  if (!os) throw DataError("failed writing file: " + path.string());
}

/// Persists one finished repeat: checkpoint, logs, report, resolved config.
template <class T>
void persist_run(const fs::path& dir, const ExperimentConfig& cfg, const ScenarioResult<T>& result,
                 const std::string& dataset) {
  fs::create_directories(dir);
  save_state(dir / "checkpoint.bin", result.final_state);
  if (!result.general_phase.log.empty())
    write_train_log((dir / "general_log.tsv").string(), result.general_phase.log);
  if (!result.target_phase.log.empty())
    write_train_log((dir / "target_log.tsv").string(), result.target_phase.log);
  EvalReport report = result.report;
  report.dataset = dataset;
  write_eval_report((dir / "report.json").string(), report);
  write_text_file(dir / "config.json", config_to_json_text(cfg));
}

void print_report_line(const EvalReport& report) {
  std::printf("%-10s %-20s repeat %2d  accuracy %.4f +/- %.4f  (%zu tasks)\n",
              report.method.c_str(), report.scenario.c_str(), report.repeat_index, report.mean,
              report.ci_half_width, report.task_accuracies.size());
  std::fflush(stdout);
}

/// The ConvNet baseline path: supervised pre-training, then fine-tuned
/// evaluation. Repeat seeding mirrors repeat_experiment so baseline runs are
/// directly comparable with the meta-learned methods.
template <class T>
void train_convnet_ft(const ExperimentConfig& cfg, const LabeledDataset<T>& target) {
  const Conv4Config conv{target.channels, target.size, cfg.filters};
  PretrainConfig pretrain = cfg.pretrain;
  pretrain.val_spec = cfg.eval_episode;
  const auto& sizes = cfg.target_dataset.split;
  for (int r = 0; r < cfg.n_repeats; ++r) {
    const std::uint64_t seed = derive_seed(cfg.seed, kSeedRepeat, static_cast<std::uint32_t>(r));
    const auto split = make_split(target, sizes.train, sizes.val, sizes.test,
                                  derive_seed(seed, kSeedRepeat));
    BaselineModel<T> model(conv, static_cast<int>(split.train_classes.size()), seed);
    auto trained = pretrain_classifier(model, target, split, pretrain, seed);
    model.load(trained.best_state);
    EvalReport report = baseline_meta_test(model.backbone, target, split, cfg.eval_episode,
                                           pretrain, cfg.test_tasks, derive_seed(seed, kSeedTest, 3));
    report.scenario = cfg.scenario;
    report.repeat_index = r;
    report.dataset = dataset_desc(cfg.target_dataset);

    const fs::path dir = fs::path(cfg.output_dir) / run_dir_name(cfg.method, cfg.scenario, r, seed);
    fs::create_directories(dir);
    save_state(dir / "checkpoint.bin", trained.best_state);
    if (!trained.log.empty()) write_train_log((dir / "pretrain_log.tsv").string(), trained.log);
    write_eval_report((dir / "report.json").string(), report);
    write_text_file(dir / "config.json", config_to_json_text(cfg));
    print_report_line(report);
  }
}

template <class T>
void train_typed(const ExperimentConfig& cfg) {
  auto target = build_dataset<T>(cfg.target_dataset);
  if (parse_method(cfg.method) == MethodKey::convnet_ft) {
    train_convnet_ft<T>(cfg, target);
    return;
  }

  ScenarioSpec spec;
  spec.kind = parse_scenario(cfg.scenario);
  spec.general_budget = cfg.general_budget;
  spec.target_budget = cfg.budget;
  spec.general_train_spec = cfg.general_episode;
  spec.target_train_spec = cfg.episode;
  spec.eval_spec = cfg.eval_episode;
  spec.test_tasks = cfg.test_tasks;
  spec.labeled_fraction = cfg.labeled_fraction;
  spec.learning_rate = cfg.learning_rate;

  std::optional<LabeledDataset<T>> general;
  if (cfg.general_dataset) {
    general = build_dataset<T>(*cfg.general_dataset);
    if (general->channels != target.channels || general->size != target.size)
      throw DataError("general and target datasets must share image shape; got " +
                      std::to_string(general->channels) + "x" + std::to_string(general->size) +
                      " vs " + std::to_string(target.channels) + "x" +
                      std::to_string(target.size));
  }
  std::optional<StateDict<T>> resume;
  if (spec.kind == ScenarioKind::general_then_target && !cfg.general_checkpoint.empty())
    resume = load_state<T>(cfg.general_checkpoint);

  const Conv4Config conv{target.channels, target.size, cfg.filters};
  const SplitSizes general_sizes = cfg.general_dataset ? cfg.general_dataset->split : SplitSizes{};
  const std::string dataset = dataset_desc(cfg.target_dataset);
  const fs::path out(cfg.output_dir);
  auto persist = [&](int r, std::uint64_t seed, const ScenarioResult<T>& result) {
    persist_run(out / run_dir_name(cfg.method, cfg.scenario, r, seed), cfg, result, dataset);
    print_report_line(result.report);
  };
  repeat_experiment<T>(parse_method(cfg.method), conv, general ? &*general : nullptr,
                       general_sizes, target, cfg.target_dataset.split, spec, cfg.n_repeats,
                       cfg.seed, persist, resume ? &*resume : nullptr);
}

template <class T>
void eval_typed(const ExperimentConfig& cfg) {
  if (cfg.checkpoint.empty())
    throw DataError("eval needs a 'checkpoint' path in the config");
  auto target = build_dataset<T>(cfg.target_dataset);
  const Conv4Config conv{target.channels, target.size, cfg.filters};
  const auto& sizes = cfg.target_dataset.split;
  const std::uint64_t seed =
      derive_seed(cfg.seed, kSeedRepeat, static_cast<std::uint32_t>(cfg.repeat_index));
  const auto split = make_split(target, sizes.train, sizes.val, sizes.test,
                                derive_seed(seed, kSeedRepeat));
  const auto state = load_state<T>(cfg.checkpoint);
  const MethodKey method = parse_method(cfg.method);

  EvalReport report;
  if (method == MethodKey::convnet_ft) {
    Conv4Embedding<T> backbone(conv, derive_seed(seed, kSeedModel, 0));
    backbone.load(state);
    PretrainConfig pretrain = cfg.pretrain;
    pretrain.val_spec = cfg.eval_episode;
    report = baseline_meta_test(backbone, target, split, cfg.eval_episode, pretrain,
                                cfg.test_tasks, derive_seed(seed, kSeedTest, 3));
  } else {
    MetaModel<T> model(method, conv, seed);
    model.skm_iterations = cfg.skm_iterations;
    model.cpn = cfg.cpn;
    model.load(state);
    std::optional<LabeledUnlabeledPartition> partition;
    if (cfg.eval_episode.unlabeled > 0)
      partition = partition_labeled_unlabeled(target, cfg.labeled_fraction,
                                              derive_seed(seed + 1, kSeedPartition));
    report = meta_test(model, target, split, cfg.eval_episode, cfg.test_tasks,
                       derive_seed(seed, kSeedTest, 3), partition ? &*partition : nullptr);
  }
  report.scenario = cfg.scenario;
  report.repeat_index = cfg.repeat_index;
  report.dataset = dataset_desc(cfg.target_dataset);

  fs::create_directories(cfg.output_dir);
  write_eval_report((fs::path(cfg.output_dir) / "report.json").string(), report);
  print_report_line(report);
}

}  // namespace

void cmd_generate_data(const CommandOptions& opts) {
  ExperimentConfig cfg = load_effective_config(opts);
  DatasetSpec spec = cfg.target_dataset;
  if (opts.seed) spec.seed = *opts.seed;
  if (spec.kind != "synthetic")
    throw DataError("generate-data needs a synthetic target_dataset descriptor");
  validate_dataset_spec(spec, "target_dataset");

  auto ds = generate_synthetic_dataset<float>(spec.classes, spec.per_class, spec.image_size,
                                              spec.noise_level, spec.seed, spec.channels);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  export_dataset(ds, out.string());
  write_text_file(out / "manifest.json", dataset_manifest_text(spec));
  std::printf("wrote %d classes x %d images (%dx%d px) to %s\n", ds.num_classes(),
              spec.per_class, spec.image_size, spec.image_size, out.string().c_str());
}

void cmd_train(const CommandOptions& opts) {
  ExperimentConfig cfg = load_effective_config(opts);
  validate_config(cfg);
  if (cfg.precision == "float64")
    train_typed<double>(cfg);
  else
    train_typed<float>(cfg);
}

void cmd_eval(const CommandOptions& opts) {
  ExperimentConfig cfg = load_effective_config(opts);
  validate_config(cfg);
  if (cfg.precision == "float64")
    eval_typed<double>(cfg);
  else
    eval_typed<float>(cfg);
}

std::string cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
  ResultsTable table = collect_reports(inputs);
  const std::string csv = results_to_csv(table);
  fs::create_directories(out_dir);
  write_text_file(fs::path(out_dir) / "results.csv", csv);
  return csv;
}

}  // namespace fewshot
