/**
 * @file config.hpp
 * @brief Experiment configuration: a single JSON document whose defaults are
 * the protocol constants (84-pixel images, 5-shot 5-way episodes with 15
 * queries, 1000 test tasks, 40% labeled fraction, the Adam and pre-training
 * learning-rate schedules), so any deviation is explicit in the file.
 *
 * Parsing is strict: unknown keys anywhere in the document are rejected, and
 * `validate_config` checks every cross-field constraint before any work
 * starts.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fewshot/baseline.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

/// Where a dataset comes from: procedural generation or a directory of
/// netpbm images laid out as root/<class_name>/<image>.
struct DatasetSpec {
  std::string kind = "synthetic";  // "synthetic" | "directory"

  // synthetic parameters
  int classes = 18;
  int per_class = 60;
  int image_size = 84;
  double noise_level = 0.5;
  int channels = 1;
  std::uint64_t seed = 1;

  // directory parameters (images are resized to image_size)
  std::string path;

  SplitSizes split{8, 5, 5};  // train/val/test class counts
};

/// A full experiment: method, scenario, datasets, episode shapes, budgets.
struct ExperimentConfig {
  std::string method = "pn";
  std::string scenario = "target-only";
  std::string precision = "float32";  // "float32" | "float64"
  std::uint64_t seed = 0;
  std::string output_dir = "runs";

  int filters = 64;        // Conv-4 width
  int skm_iterations = 1;  // refinement steps for the soft k-means family
  double learning_rate = 1e-3;

  EpisodeSpec episode;          // target-phase training episodes
  EpisodeSpec general_episode;  // general-phase training episodes
  EpisodeSpec eval_episode;     // meta-validation and meta-test episodes

  TrainBudget budget;          // target phase
  TrainBudget general_budget;  // general phase
  int test_tasks = 1000;
  double labeled_fraction = 0.4;
  int n_repeats = 10;

  DatasetSpec target_dataset;
  std::optional<DatasetSpec> general_dataset;

  std::string checkpoint;          // eval input (model parameters)
  std::string general_checkpoint;  // optional resume input for scenario 3
  int repeat_index = 0;            // which repeat's split eval reconstructs

  CPNConfig cpn;
  PretrainConfig pretrain;  // convnet-ft settings (val_spec <- eval_episode)
};

/// Parses a JSON document; missing keys fall back to the defaults above,
/// unknown keys raise DataError. Does not validate cross-field constraints.
ExperimentConfig parse_config_text(const std::string& text);

/// Reads and parses a config file.
ExperimentConfig load_config(const std::string& path);

/// Serializes the fully resolved config (every field explicit, keys sorted)
/// so a persisted copy reproduces the run byte for byte.
std::string config_to_json_text(const ExperimentConfig& cfg);

/// The generate-data manifest: dataset parameters plus the seed, keys
/// sorted so identical configs produce identical manifest bytes.
std::string dataset_manifest_text(const DatasetSpec& spec);

/// Checks one dataset descriptor (kind, generator parameters, split sizes).
void validate_dataset_spec(const DatasetSpec& spec, const std::string& what);

/// Checks every module constraint the config can violate (method/scenario
/// keys, episode shapes, budgets, dataset descriptors, semi-supervised
/// methods without unlabeled samples, scenarios missing their general
/// dataset). Throws DataError with an actionable message.
void validate_config(const ExperimentConfig& cfg);

}  // namespace fewshot
