/**
 * @file config.cpp
 * @brief Strict JSON parsing, validation, and serialization for
 * ExperimentConfig (see config.hpp).
 */
#include "fewshot/config.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace fewshot {

namespace {

using nlohmann::json;

/// Rejects any key outside the allowlist so typos never pass silently.
void check_keys(const json& j, const char* what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw DataError(std::string(what) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known) throw DataError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

template <class V>
void read_into(const json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<V>();
}

EpisodeSpec parse_episode(const json& j, const char* what, const EpisodeSpec& defaults) {
  check_keys(j, what, {"shots", "way", "queries", "unlabeled", "distractors"});
  EpisodeSpec spec = defaults;
  read_into(j, "shots", spec.shots);
  read_into(j, "way", spec.way);
  read_into(j, "queries", spec.queries);
  read_into(j, "unlabeled", spec.unlabeled);
  read_into(j, "distractors", spec.distractors);
  return spec;
}

TrainBudget parse_budget(const json& j, const char* what, const TrainBudget& defaults) {
  check_keys(j, what, {"total_tasks", "val_period", "val_tasks"});
  TrainBudget budget = defaults;
  read_into(j, "total_tasks", budget.total_tasks);
  read_into(j, "val_period", budget.val_period);
  read_into(j, "val_tasks", budget.val_tasks);
  return budget;
}

DatasetSpec parse_dataset(const json& j, const char* what) {
  check_keys(j, what,
             {"kind", "classes", "per_class", "image_size", "noise_level", "channels", "seed",
              "path", "split"});
  DatasetSpec spec;
  read_into(j, "kind", spec.kind);
  read_into(j, "classes", spec.classes);
  read_into(j, "per_class", spec.per_class);
  read_into(j, "image_size", spec.image_size);
  read_into(j, "noise_level", spec.noise_level);
  read_into(j, "channels", spec.channels);
  read_into(j, "seed", spec.seed);
  read_into(j, "path", spec.path);
  if (auto it = j.find("split"); it != j.end()) {
    check_keys(*it, "dataset split", {"train", "val", "test"});
    read_into(*it, "train", spec.split.train);
    read_into(*it, "val", spec.split.val);
    read_into(*it, "test", spec.split.test);
  }
  return spec;
}

json episode_to_json(const EpisodeSpec& spec) {
  return json{{"shots", spec.shots},
              {"way", spec.way},
              {"queries", spec.queries},
              {"unlabeled", spec.unlabeled},
              {"distractors", spec.distractors}};
}

json budget_to_json(const TrainBudget& budget) {
  return json{{"total_tasks", budget.total_tasks},
              {"val_period", budget.val_period},
              {"val_tasks", budget.val_tasks}};
}

json dataset_to_json(const DatasetSpec& spec) {
  return json{{"kind", spec.kind},
              {"classes", spec.classes},
              {"per_class", spec.per_class},
              {"image_size", spec.image_size},
              {"noise_level", spec.noise_level},
              {"channels", spec.channels},
              {"seed", spec.seed},
              {"path", spec.path},
              {"split",
               json{{"train", spec.split.train},
                    {"val", spec.split.val},
                    {"test", spec.split.test}}}};
}

void validate_episode(const EpisodeSpec& spec, const char* what) {
  if (spec.shots < 1 || spec.way < 2 || spec.queries < 1)
    throw DataError(std::string(what) + ": need shots >= 1, way >= 2, queries >= 1");
  if (spec.unlabeled < 0 || spec.distractors < 0)
    throw DataError(std::string(what) + ": unlabeled and distractors must be >= 0");
}

/// way (+ distractor classes on semi-supervised episodes) must fit the phase.
void check_way_fits(const EpisodeSpec& spec, int available, const char* episode_name,
                    const char* phase_name) {
  const int need = spec.way + (spec.unlabeled > 0 ? spec.distractors : 0);
  if (need > available)
    throw DataError(std::string(episode_name) + " needs " + std::to_string(need) +
                    " classes per task but the " + phase_name + " has " +
                    std::to_string(available));
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  try {
    check_keys(j, "config",
               {"method", "scenario", "precision", "seed", "output_dir", "filters",
                "skm_iterations", "learning_rate", "episode", "general_episode", "eval_episode",
                "budget", "general_budget", "test_tasks", "labeled_fraction", "n_repeats",
                "target_dataset", "general_dataset", "checkpoint", "general_checkpoint",
                "repeat_index", "cpn", "pretrain"});
    ExperimentConfig cfg;
    read_into(j, "method", cfg.method);
    read_into(j, "scenario", cfg.scenario);
    read_into(j, "precision", cfg.precision);
    read_into(j, "seed", cfg.seed);
    read_into(j, "output_dir", cfg.output_dir);
    read_into(j, "filters", cfg.filters);
    read_into(j, "skm_iterations", cfg.skm_iterations);
    read_into(j, "learning_rate", cfg.learning_rate);

    if (auto it = j.find("episode"); it != j.end())
      cfg.episode = parse_episode(*it, "episode", cfg.episode);
    // the general phase and evaluation default to the target episode shape
    cfg.general_episode = cfg.episode;
    cfg.eval_episode = cfg.episode;
    if (auto it = j.find("general_episode"); it != j.end())
      cfg.general_episode = parse_episode(*it, "general_episode", cfg.general_episode);
    if (auto it = j.find("eval_episode"); it != j.end())
      cfg.eval_episode = parse_episode(*it, "eval_episode", cfg.eval_episode);

    if (auto it = j.find("budget"); it != j.end())
      cfg.budget = parse_budget(*it, "budget", cfg.budget);
    cfg.general_budget = cfg.budget;
    if (auto it = j.find("general_budget"); it != j.end())
      cfg.general_budget = parse_budget(*it, "general_budget", cfg.general_budget);

    read_into(j, "test_tasks", cfg.test_tasks);
    read_into(j, "labeled_fraction", cfg.labeled_fraction);
    read_into(j, "n_repeats", cfg.n_repeats);

    if (auto it = j.find("target_dataset"); it != j.end())
      cfg.target_dataset = parse_dataset(*it, "target_dataset");
    if (auto it = j.find("general_dataset"); it != j.end())
      cfg.general_dataset = parse_dataset(*it, "general_dataset");

    read_into(j, "checkpoint", cfg.checkpoint);
    read_into(j, "general_checkpoint", cfg.general_checkpoint);
    read_into(j, "repeat_index", cfg.repeat_index);

    if (auto it = j.find("cpn"); it != j.end()) {
      check_keys(*it, "cpn", {"epsilon", "power_iterations", "xi", "walk_length", "temperature"});
      read_into(*it, "epsilon", cfg.cpn.epsilon);
      read_into(*it, "power_iterations", cfg.cpn.power_iterations);
      read_into(*it, "xi", cfg.cpn.xi);
      read_into(*it, "walk_length", cfg.cpn.walk_length);
      read_into(*it, "temperature", cfg.cpn.temperature);
    }
    if (auto it = j.find("pretrain"); it != j.end()) {
      check_keys(*it, "pretrain",
                 {"batches", "batch_size", "learning_rate", "decay", "decay_period", "val_period",
                  "val_tasks", "finetune_iterations", "finetune_lr", "finetune_decay"});
      read_into(*it, "batches", cfg.pretrain.batches);
      read_into(*it, "batch_size", cfg.pretrain.batch_size);
      read_into(*it, "learning_rate", cfg.pretrain.learning_rate);
      read_into(*it, "decay", cfg.pretrain.decay);
      read_into(*it, "decay_period", cfg.pretrain.decay_period);
      read_into(*it, "val_period", cfg.pretrain.val_period);
      read_into(*it, "val_tasks", cfg.pretrain.val_tasks);
      read_into(*it, "finetune_iterations", cfg.pretrain.finetune_iterations);
      read_into(*it, "finetune_lr", cfg.pretrain.finetune_lr);
      read_into(*it, "finetune_decay", cfg.pretrain.finetune_decay);
    }
    cfg.pretrain.val_spec = cfg.eval_episode;
    return cfg;
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  std::ostringstream text;
  text << is.rdbuf();
  return parse_config_text(text.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j{{"method", cfg.method},
         {"scenario", cfg.scenario},
         {"precision", cfg.precision},
         {"seed", cfg.seed},
         {"output_dir", cfg.output_dir},
         {"filters", cfg.filters},
         {"skm_iterations", cfg.skm_iterations},
         {"learning_rate", cfg.learning_rate},
         {"episode", episode_to_json(cfg.episode)},
         {"general_episode", episode_to_json(cfg.general_episode)},
         {"eval_episode", episode_to_json(cfg.eval_episode)},
         {"budget", budget_to_json(cfg.budget)},
         {"general_budget", budget_to_json(cfg.general_budget)},
         {"test_tasks", cfg.test_tasks},
         {"labeled_fraction", cfg.labeled_fraction},
         {"n_repeats", cfg.n_repeats},
         {"target_dataset", dataset_to_json(cfg.target_dataset)},
         {"checkpoint", cfg.checkpoint},
         {"general_checkpoint", cfg.general_checkpoint},
         {"repeat_index", cfg.repeat_index},
         {"cpn",
          json{{"epsilon", cfg.cpn.epsilon},
               {"power_iterations", cfg.cpn.power_iterations},
               {"xi", cfg.cpn.xi},
               {"walk_length", cfg.cpn.walk_length},
               {"temperature", cfg.cpn.temperature}}},
         {"pretrain",
          json{{"batches", cfg.pretrain.batches},
               {"batch_size", cfg.pretrain.batch_size},
               {"learning_rate", cfg.pretrain.learning_rate},
               {"decay", cfg.pretrain.decay},
               {"decay_period", cfg.pretrain.decay_period},
               {"val_period", cfg.pretrain.val_period},
               {"val_tasks", cfg.pretrain.val_tasks},
               {"finetune_iterations", cfg.pretrain.finetune_iterations},
               {"finetune_lr", cfg.pretrain.finetune_lr},
               {"finetune_decay", cfg.pretrain.finetune_decay}}}};
  if (cfg.general_dataset) j["general_dataset"] = dataset_to_json(*cfg.general_dataset);
  return j.dump(2) + "\n";
}

std::string dataset_manifest_text(const DatasetSpec& spec) {
  return dataset_to_json(spec).dump(2) + "\n";
}

void validate_dataset_spec(const DatasetSpec& spec, const std::string& what) {
  if (spec.kind != "synthetic" && spec.kind != "directory")
    throw DataError(what + ": kind must be 'synthetic' or 'directory', got '" + spec.kind + "'");
  if (spec.image_size < 4) throw DataError(what + ": image_size must be >= 4");
  if (spec.split.train < 0 || spec.split.val < 0 || spec.split.test < 0)
    throw DataError(what + ": split sizes must be >= 0");
  if (spec.kind == "synthetic") {
    if (spec.classes < 2) throw DataError(what + ": need classes >= 2");
    if (spec.per_class < 1) throw DataError(what + ": need per_class >= 1");
    if (spec.noise_level < 0.0) throw DataError(what + ": noise_level must be >= 0");
    if (spec.channels != 1 && spec.channels != 3)
      throw DataError(what + ": channels must be 1 or 3");
    const int want = spec.split.train + spec.split.val + spec.split.test;
    if (want > spec.classes)
      throw DataError(what + ": split asks for " + std::to_string(want) +
                      " classes but the dataset has " + std::to_string(spec.classes));
  } else if (spec.path.empty()) {
    throw DataError(what + ": directory datasets need a 'path'");
  }
}

void validate_config(const ExperimentConfig& cfg) {
  const MethodKey method = parse_method(cfg.method);
  const ScenarioKind kind = parse_scenario(cfg.scenario);
  if (cfg.precision != "float32" && cfg.precision != "float64")
    throw DataError("config: precision must be 'float32' or 'float64', got '" + cfg.precision +
                    "'");
  if (cfg.filters < 1) throw DataError("config: filters must be >= 1");
  if (cfg.skm_iterations < 1) throw DataError("config: skm_iterations must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw DataError("config: learning_rate must be > 0");
  if (cfg.test_tasks < 1) throw DataError("config: test_tasks must be >= 1");
  if (cfg.n_repeats < 1) throw DataError("config: n_repeats must be >= 1");
  if (cfg.repeat_index < 0) throw DataError("config: repeat_index must be >= 0");
  if (!(cfg.labeled_fraction > 0.0 && cfg.labeled_fraction <= 1.0))
    throw DataError("config: labeled_fraction must lie in (0, 1]");

  validate_episode(cfg.episode, "episode");
  validate_episode(cfg.general_episode, "general_episode");
  validate_episode(cfg.eval_episode, "eval_episode");
  validate_budget(cfg.budget);
  validate_budget(cfg.general_budget);
  validate_pretrain_config(cfg.pretrain);

  validate_dataset_spec(cfg.target_dataset, "target_dataset");
  if (cfg.general_dataset) validate_dataset_spec(*cfg.general_dataset, "general_dataset");

  const bool runs_general = kind != ScenarioKind::target_only;
  const bool runs_target = kind != ScenarioKind::general_only;
  if (kind == ScenarioKind::general_only && !cfg.general_dataset)
    throw DataError("config: scenario general-only needs a general_dataset");
  if (kind == ScenarioKind::general_then_target && !cfg.general_dataset &&
      cfg.general_checkpoint.empty())
    throw DataError(
        "config: scenario general-then-target needs a general_dataset or a general_checkpoint");

  if (method == MethodKey::convnet_ft) {
    if (kind != ScenarioKind::target_only)
      throw DataError("config: convnet-ft pre-trains and fine-tunes on one dataset; "
                      "use scenario target-only");
    if (cfg.target_dataset.split.train < 2)
      throw DataError("config: convnet-ft needs at least 2 pre-training classes");
  } else if (detail::uses_unlabeled(method)) {
    if (runs_target && cfg.episode.unlabeled < 1)
      throw DataError("config: method " + cfg.method +
                      " trains on semi-supervised episodes; set episode.unlabeled >= 1");
    if (runs_general && cfg.general_episode.unlabeled < 1)
      throw DataError("config: method " + cfg.method +
                      " trains on semi-supervised episodes; set general_episode.unlabeled >= 1");
  }

  // class-count fits are decidable now for synthetic datasets; directory
  // datasets are checked when loaded
  if (cfg.target_dataset.kind == "synthetic") {
    const auto& s = cfg.target_dataset.split;
    if (runs_target && method != MethodKey::convnet_ft)
      check_way_fits(cfg.episode, s.train, "episode", "target training split");
    check_way_fits(cfg.eval_episode, s.test, "eval_episode", "target test split");
    if (runs_target) check_way_fits(cfg.eval_episode, s.val, "eval_episode", "target val split");
  }
  if (cfg.general_dataset && cfg.general_dataset->kind == "synthetic" && runs_general) {
    const auto& s = cfg.general_dataset->split;
    check_way_fits(cfg.general_episode, s.train, "general_episode", "general training split");
    check_way_fits(cfg.eval_episode, s.val, "eval_episode", "general val split");
  }
}

}  // namespace fewshot
