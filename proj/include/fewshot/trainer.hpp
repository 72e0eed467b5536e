#pragma once
/**
 * @brief Episodic meta-training, meta-validation checkpointing, meta-testing,
 *        training scenarios, and repeated experiments.
 *
 * One episode is one optimizer step. The best checkpoint is retained by
 * meta-validation accuracy; a zero-task budget returns the initialization.
 * Evaluation derives one rng per task index from the experiment seed, so
 * reports are bit-reproducible and independent of evaluation order.
 */
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/conv4.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/methods.hpp"
#include "fewshot/optim.hpp"

namespace fewshot {

// ---------------------------------------------------------------------------
// Specs, budgets, reports.
// ---------------------------------------------------------------------------

/// k-shot n-way episode shape with optional unlabeled and distractor counts.
struct EpisodeSpec {
  int shots = 5;
  int way = 5;
  int queries = 15;
  int unlabeled = 0;    // u per class (and per distractor class)
  int distractors = 0;  // extra unlabeled-only classes
};

/// Task budget and meta-validation cadence.
struct TrainBudget {
  int total_tasks = 5000;
  int val_period = 250;
  int val_tasks = 100;
};

inline void validate_budget(const TrainBudget& b) {
  if (b.total_tasks < 0) throw DataError("TrainBudget: total_tasks must be >= 0");
  if (b.val_period < 1 || b.val_tasks < 1)
    throw DataError("TrainBudget: validation period and task count must be positive");
  if (b.total_tasks > 0 && b.val_period > b.total_tasks)
    throw DataError("TrainBudget: validation period " + std::to_string(b.val_period) +
                    " exceeds total tasks " + std::to_string(b.total_tasks));
}

/// One training-log row; val_acc is negative on non-validation tasks.
struct LogRow {
  int task = 0;
  double loss = 0.0;
  double val_acc = -1.0;
};

/// Outcome of one meta-training phase.
template <class T>
struct TrainResult {
  StateDict<T> best_state;  // initialization if never validated or budget 0
  double best_val_acc = -1.0;
  std::vector<LogRow> log;  // one row per task
};

/// Per-task accuracies with summary statistics and provenance metadata.
struct EvalReport {
  std::vector<double> task_accuracies;
  double mean = 0.0;
  double ci_half_width = 0.0;  // 1.96 * sample std / sqrt(n)
  std::string method;
  std::string scenario;
  std::string dataset;
  int repeat_index = 0;
  std::uint64_t seed = 0;
};

/// Fills mean and the 95% confidence half-width (Bessel-corrected std).
inline void fill_report_stats(EvalReport& r) {
  const std::size_t n = r.task_accuracies.size();
  if (n == 0) {
    r.mean = 0.0;
    r.ci_half_width = 0.0;
    return;
  }
  double sum = 0.0;
  for (double a : r.task_accuracies) sum += a;
  r.mean = sum / static_cast<double>(n);
  if (n < 2) {
    r.ci_half_width = 0.0;
    return;
  }
  double sq = 0.0;
  for (double a : r.task_accuracies) sq += (a - r.mean) * (a - r.mean);
  const double sample_std = std::sqrt(sq / static_cast<double>(n - 1));
  r.ci_half_width = 1.96 * sample_std / std::sqrt(static_cast<double>(n));
}

// Seed-stream tags; every rng in a run is derived from (seed, tag, index).
inline constexpr std::uint32_t kSeedModel = 0x4d4f444cu;      // "MODL"
inline constexpr std::uint32_t kSeedTrain = 0x5452414eu;      // "TRAN"
inline constexpr std::uint32_t kSeedVal = 0x56414c49u;        // "VALI"
inline constexpr std::uint32_t kSeedTest = 0x54455354u;       // "TEST"
inline constexpr std::uint32_t kSeedPartition = 0x50415254u;  // "PART"
inline constexpr std::uint32_t kSeedRepeat = 0x52455054u;     // "REPT"

/// Deterministic stream splitting: one 64-bit seed per (base, tag, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint32_t tag, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32), tag,
                    index};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
}

// ---------------------------------------------------------------------------
// Model wrapper: backbone plus the method-specific trainable heads.
// ---------------------------------------------------------------------------

template <class T>
struct MetaModel {
  MethodKey method = MethodKey::pn;
  Conv4Config config;
  Conv4Embedding<T> backbone;
  std::optional<RelationModule<T>> relation;  // rn
  std::optional<MaskStatsNet<T>> mask_net;    // skm-mask
  std::optional<DistractorScale<T>> scale;    // skm-cluster
  CPNConfig cpn;                              // cpn, cpn-skm
  int skm_iterations = 1;

  MetaModel(MethodKey m, const Conv4Config& cfg, std::uint64_t seed)
      : method(m), config(cfg), backbone(cfg, derive_seed(seed, kSeedModel, 0)) {
    if (m == MethodKey::convnet_ft)
      throw DataError("convnet-ft is trained by the baseline pipeline, not the meta-trainer");
    if (m == MethodKey::rn)
      relation.emplace(2 * cfg.filters, backbone.final_spatial(), cfg.filters,
                       derive_seed(seed, kSeedModel, 1));
    if (m == MethodKey::skm_mask) mask_net.emplace(derive_seed(seed, kSeedModel, 2));
    if (m == MethodKey::skm_cluster) scale.emplace();
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out = backbone.parameters();
    if (relation) {
      auto extra = relation->parameters();
      out.insert(out.end(), extra.begin(), extra.end());
    }
    if (mask_net) {
      auto extra = mask_net->parameters();
      out.insert(out.end(), extra.begin(), extra.end());
    }
    if (scale) scale->parameters(out);
    return out;
  }

  StateDict<T> state() const {
    StateDict<T> out = backbone.state();
    if (relation) {
      auto extra = relation->state();
      out.insert(out.end(), extra.begin(), extra.end());
    }
    if (mask_net) mask_net->state("mask", out);
    if (scale) scale->state("distractor", out);
    return out;
  }

  void load(const StateDict<T>& state) {
    backbone.load(state);
    if (relation) relation->load(state);
    if (mask_net) mask_net->load(state, "mask");
    if (scale) scale->load(state, "distractor");
  }
};

namespace detail {

inline bool uses_unlabeled(MethodKey m) {
  return m == MethodKey::skm || m == MethodKey::skm_cluster || m == MethodKey::skm_mask ||
         m == MethodKey::cpn || m == MethodKey::cpn_skm;
}

/// Gathers [support | target | unlabeled] into one image batch.
template <class T>
Tensor<T> episode_batch(const LabeledDataset<T>& ds, const Episode& ep) {
  std::vector<int> idx = ep.support_indices;
  idx.insert(idx.end(), ep.target_indices.begin(), ep.target_indices.end());
  idx.insert(idx.end(), ep.unlabeled_indices.begin(), ep.unlabeled_indices.end());
  return ds.gather(idx);
}

/// Refined (or plain) prototypes for every prototype-based method.
template <class T>
PrototypeSet<T> method_prototypes(MetaModel<T>& model, const Episode& ep,
                                  const Tensor<T>& support, const Tensor<T>& unlabeled) {
  const bool have_unlabeled = unlabeled.numel() > 0;
  switch (model.method) {
    case MethodKey::pn:
    case MethodKey::cpn:
      return compute_prototypes(support, ep.support_labels, ep.n);
    case MethodKey::skm:
    case MethodKey::cpn_skm:
      return refine_soft_kmeans(support, ep.support_labels, ep.n, unlabeled,
                                model.skm_iterations);
    case MethodKey::skm_cluster:
      if (!have_unlabeled) return compute_prototypes(support, ep.support_labels, ep.n);
      return refine_with_distractor(support, ep.support_labels, ep.n, unlabeled, *model.scale,
                                    model.skm_iterations);
    case MethodKey::skm_mask:
      if (!have_unlabeled) return compute_prototypes(support, ep.support_labels, ep.n);
      return refine_with_masks(support, ep.support_labels, ep.n, unlabeled, *model.mask_net,
                               model.skm_iterations);
    default:
      throw DataError("method_prototypes: unsupported method");
  }
}

/// Relation scores for every (target, class) pair, row (j, c) at j*n + c.
template <class T>
Tensor<T> relation_scores(MetaModel<T>& model, const LabeledDataset<T>& ds, const Episode& ep,
                          bool train) {
  std::vector<int> idx = ep.support_indices;
  idx.insert(idx.end(), ep.target_indices.begin(), ep.target_indices.end());
  auto maps = model.backbone.feature_maps(ds.gather(idx), train);
  const int s = static_cast<int>(ep.support_indices.size());
  const int b = maps.dim(0);
  const int flat = model.backbone.embedding_dim();
  auto rows = reshape(maps, {b, flat});
  auto protos = compute_prototypes(slice_axis0(rows, 0, s), ep.support_labels, ep.n);
  const int f = model.config.filters;
  const int sp = model.backbone.final_spatial();
  auto proto_maps = reshape(protos.centroids, {ep.n, f, sp, sp});
  auto target_maps = reshape(slice_axis0(rows, s, b), {b - s, f, sp, sp});
  return model.relation->scores(concat_features(proto_maps, target_maps), train);
}

/// The CPN semi-supervised term: VAT + RW against the given prototypes.
/// The VAT branch embeds with running statistics (eval-mode normalization)
/// so its clean and perturbed distributions are directly comparable and the
/// direction search never touches the running-statistics state.
template <class T>
Tensor<T> cpn_ssl_term(MetaModel<T>& model, const PrototypeSet<T>& protos,
                       const Tensor<T>& unlabeled_images, const Tensor<T>& unlabeled_emb,
                       std::mt19937_64& rng) {
  const auto centroids = protos.class_centroids();
  std::vector<T> p_probs;
  {
    NoGradGuard ng;
    auto clean = model.backbone.embed(unlabeled_images, false);
    auto probs = softmax_rows(neg(pairwise_sq_euclidean(clean, detach(centroids))));
    p_probs.assign(probs.data().begin(), probs.data().end());
  }
  auto params = model.parameters();
  auto vat = vat_loss([&](const Tensor<T>& x) { return model.backbone.embed(x, false); }, params,
                      centroids, unlabeled_images, p_probs, model.cpn, rng);
  auto rw = rw_loss(centroids, unlabeled_emb, model.cpn.walk_length, model.cpn.temperature);
  return cpn_loss(vat, rw);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Episode loss (training) and episode accuracy (evaluation).
// ---------------------------------------------------------------------------

/// Differentiable loss of one episode under the model's method.
template <class T>
Tensor<T> episode_loss(MetaModel<T>& model, const LabeledDataset<T>& ds, const Episode& ep,
                       std::mt19937_64& rng, bool train = true) {
  if (model.method == MethodKey::rn)
    return rn_loss(detail::relation_scores(model, ds, ep, train), ep.target_labels, ep.n);

  auto emb = model.backbone.embed(detail::episode_batch(ds, ep), train);
  const int s = static_cast<int>(ep.support_indices.size());
  const int st = s + static_cast<int>(ep.target_indices.size());
  auto support = slice_axis0(emb, 0, s);
  auto target = slice_axis0(emb, s, st);
  auto unlabeled = emb.dim(0) > st ? slice_axis0(emb, st, emb.dim(0))
                                   : Tensor<T>::from_data({0, emb.dim(1)}, {});

  auto protos = detail::method_prototypes(model, ep, support, unlabeled);
  auto loss = pn_loss(protos, target, ep.target_labels);
  if (model.method == MethodKey::cpn || model.method == MethodKey::cpn_skm) {
    if (ep.unlabeled_indices.empty())
      throw DataError("episode_loss: CPN methods need unlabeled samples (u >= 1)");
    auto unlabeled_images = ds.gather(ep.unlabeled_indices);
    loss = add(loss, detail::cpn_ssl_term(model, protos, unlabeled_images, unlabeled, rng));
  }
  return loss;
}

/// Fraction of correctly classified targets; eval mode, no autodiff tape.
template <class T>
double episode_accuracy(MetaModel<T>& model, const LabeledDataset<T>& ds, const Episode& ep) {
  NoGradGuard ng;
  std::vector<int> pred;
  if (model.method == MethodKey::rn) {
    pred = rn_predict(detail::relation_scores(model, ds, ep, false), ep.n);
  } else {
    auto emb = model.backbone.embed(detail::episode_batch(ds, ep), false);
    const int s = static_cast<int>(ep.support_indices.size());
    const int st = s + static_cast<int>(ep.target_indices.size());
    auto support = slice_axis0(emb, 0, s);
    auto target = slice_axis0(emb, s, st);
    auto unlabeled = emb.dim(0) > st ? slice_axis0(emb, st, emb.dim(0))
                                     : Tensor<T>::from_data({0, emb.dim(1)}, {});
    auto protos = detail::method_prototypes(model, ep, support, unlabeled);
    pred = predict_labels(protos, target);
  }
  int hit = 0;
  for (std::size_t j = 0; j < pred.size(); ++j)
    hit += pred[j] == ep.target_labels[j] ? 1 : 0;
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Mean accuracy over `n_tasks` fresh episodes drawn from `classes`.
template <class T>
double mean_accuracy(MetaModel<T>& model, const LabeledDataset<T>& ds,
                     const std::vector<int>& classes, const EpisodeSpec& spec, int n_tasks,
                     std::mt19937_64& rng, const LabeledUnlabeledPartition* partition = nullptr) {
  double sum = 0.0;
  for (int e = 0; e < n_tasks; ++e) {
    auto ep = sample_episode(ds, classes, spec.shots, spec.way, spec.queries, spec.unlabeled,
                             spec.distractors, rng, partition);
    sum += episode_accuracy(model, ds, ep);
  }
  return n_tasks > 0 ? sum / n_tasks : 0.0;
}

// ---------------------------------------------------------------------------
// Meta-training with periodic meta-validation checkpointing.
// ---------------------------------------------------------------------------

/**
 * Trains one task per optimizer step and validates every `budget.val_period`
 * tasks on `budget.val_tasks` episodes from the validation classes using the
 * evaluation episode shape. Returns the best-by-validation checkpoint (the
 * initialization if the budget is zero) and a log row per task.
 */
template <class T>
TrainResult<T> meta_train(MetaModel<T>& model, const LabeledDataset<T>& ds,
                          const SplitSpec& split, const TrainBudget& budget,
                          const EpisodeSpec& train_spec, const EpisodeSpec& val_spec,
                          std::uint64_t seed,
                          const LabeledUnlabeledPartition* partition = nullptr,
                          double learning_rate = 1e-3) {
  validate_budget(budget);
  const int need = train_spec.way + (train_spec.unlabeled > 0 ? train_spec.distractors : 0);
  if (static_cast<int>(split.train_classes.size()) < need)
    throw DataError("meta_train: " + std::to_string(split.train_classes.size()) +
                    " training classes cannot host " + std::to_string(train_spec.way) + "-way+" +
                    std::to_string(train_spec.distractors) + "-distractor episodes");
  if (detail::uses_unlabeled(model.method) && train_spec.unlabeled < 1)
    throw DataError(std::string("meta_train: method ") + method_name(model.method) +
                    " trains on semi-supervised episodes; set unlabeled >= 1");

  TrainResult<T> result;
  result.best_state = model.state();
  Adam<T> opt(model.parameters(), T(learning_rate));
  std::mt19937_64 train_rng(derive_seed(seed, kSeedTrain));
  result.log.reserve(static_cast<std::size_t>(budget.total_tasks));

  for (int task = 1; task <= budget.total_tasks; ++task) {
    auto ep = sample_episode(ds, split.train_classes, train_spec.shots, train_spec.way,
                             train_spec.queries, train_spec.unlabeled, train_spec.distractors,
                             train_rng, partition);
    auto loss = episode_loss(model, ds, ep, train_rng, true);
    opt.zero_grad();
    loss.backward();
    opt.step();

    LogRow row;
    row.task = task;
    row.loss = static_cast<double>(loss.item());
    if (task % budget.val_period == 0) {
      std::mt19937_64 val_rng(derive_seed(seed, kSeedVal, static_cast<std::uint32_t>(task)));
      row.val_acc = mean_accuracy(model, ds, split.val_classes, val_spec, budget.val_tasks,
                                  val_rng, partition);
      if (row.val_acc > result.best_val_acc) {
        result.best_val_acc = row.val_acc;
        result.best_state = model.state();
      }
    }
    result.log.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Meta-testing.
// ---------------------------------------------------------------------------

/**
 * Evaluates a frozen model on `n_tasks` episodes from the test classes.
 * Task i draws its episode from an rng seeded by (seed, task index), so the
 * report is reproducible bit-for-bit and tasks are order-independent.
 */
template <class T>
EvalReport meta_test(MetaModel<T>& model, const LabeledDataset<T>& ds, const SplitSpec& split,
                     const EpisodeSpec& spec, int n_tasks, std::uint64_t seed,
                     const LabeledUnlabeledPartition* partition = nullptr) {
  if (n_tasks < 0) throw DataError("meta_test: negative task count");
  EvalReport report;
  report.method = method_name(model.method);
  report.seed = seed;
  report.task_accuracies.reserve(static_cast<std::size_t>(n_tasks));
  for (int i = 0; i < n_tasks; ++i) {
    std::mt19937_64 rng(derive_seed(seed, kSeedTest, static_cast<std::uint32_t>(i)));
    auto ep = sample_episode(ds, split.test_classes, spec.shots, spec.way, spec.queries,
                             spec.unlabeled, spec.distractors, rng, partition);
    report.task_accuracies.push_back(episode_accuracy(model, ds, ep));
  }
  fill_report_stats(report);
  return report;
}

// ---------------------------------------------------------------------------
// Scenarios and repeats.
// ---------------------------------------------------------------------------

/// The three meta-training scenarios.
enum class ScenarioKind { general_only = 1, target_only = 2, general_then_target = 3 };

inline const char* scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::general_only: return "general-only";
    case ScenarioKind::target_only: return "target-only";
    case ScenarioKind::general_then_target: return "general-then-target";
  }
  return "?";
}

inline ScenarioKind parse_scenario(const std::string& name) {
  for (ScenarioKind k : {ScenarioKind::general_only, ScenarioKind::target_only,
                         ScenarioKind::general_then_target})
    if (name == scenario_name(k)) return k;
  throw DataError("unknown scenario '" + name +
                  "' (expected general-only, target-only, or general-then-target)");
}

/// Everything needed to run one scenario end to end.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::target_only;
  TrainBudget general_budget;       // kinds 1 and 3
  TrainBudget target_budget;        // kinds 2 and 3
  EpisodeSpec general_train_spec;   // e.g. higher-way episodes on general data
  EpisodeSpec target_train_spec;
  EpisodeSpec eval_spec;            // meta-validation and meta-testing shape
  int test_tasks = 1000;
  double labeled_fraction = 0.4;    // labeled/unlabeled partition for u > 0
  double learning_rate = 1e-3;
};

/// One dataset with its class split (and partition when episodes use u > 0).
template <class T>
struct PhaseData {
  const LabeledDataset<T>* dataset = nullptr;
  SplitSpec split;
  std::optional<LabeledUnlabeledPartition> partition;

  const LabeledUnlabeledPartition* partition_ptr() const {
    return partition ? &*partition : nullptr;
  }
};

template <class T>
struct ScenarioResult {
  EvalReport report;
  TrainResult<T> general_phase;  // empty log if the scenario has no such phase
  TrainResult<T> target_phase;
  StateDict<T> final_state;      // the evaluated checkpoint
};

namespace detail {

template <class T>
PhaseData<T> make_phase(const LabeledDataset<T>& ds, const SplitSpec& split, bool needs_partition,
                        double labeled_fraction, std::uint64_t seed) {
  PhaseData<T> phase;
  phase.dataset = &ds;
  phase.split = split;
  if (needs_partition)
    phase.partition = partition_labeled_unlabeled(ds, labeled_fraction,
                                                  derive_seed(seed, kSeedPartition));
  return phase;
}

}  // namespace detail

/**
 * Runs one scenario:
 *   general-only         — train on general, meta-test on the target test split;
 *   target-only          — train on target from random initialization;
 *   general-then-target  — resume from the general-only best checkpoint
 *                          (parameters bit-identical before the first update)
 *                          and continue training on target.
 * For general-then-target, pass the checkpoint of a completed general-only
 * run; without one, the general phase is run here first if general data is
 * available, otherwise the missing prerequisite is an error.
 */
template <class T>
ScenarioResult<T> run_scenario(MethodKey method, const Conv4Config& config,
                               const PhaseData<T>* general, const PhaseData<T>& target,
                               const ScenarioSpec& spec, std::uint64_t seed,
                               const StateDict<T>* general_checkpoint = nullptr) {
  ScenarioResult<T> result;
  result.report.scenario = scenario_name(spec.kind);
  MetaModel<T> model(method, config, seed);

  if (spec.kind == ScenarioKind::general_only && general == nullptr)
    throw DataError("general-only needs the general dataset");
  if (spec.kind == ScenarioKind::general_then_target && general == nullptr &&
      general_checkpoint == nullptr)
    throw DataError("general-then-target needs the general dataset or the best "
                    "checkpoint of a completed general-only run");

  if (spec.kind == ScenarioKind::general_only ||
      (spec.kind == ScenarioKind::general_then_target && general_checkpoint == nullptr)) {
    result.general_phase =
        meta_train(model, *general->dataset, general->split, spec.general_budget,
                   spec.general_train_spec, spec.eval_spec, derive_seed(seed, kSeedTrain, 1),
                   general->partition_ptr(), spec.learning_rate);
    model.load(result.general_phase.best_state);
  } else if (general_checkpoint != nullptr && spec.kind == ScenarioKind::general_then_target) {
    model.load(*general_checkpoint);
  }

  if (spec.kind != ScenarioKind::general_only) {
    result.target_phase =
        meta_train(model, *target.dataset, target.split, spec.target_budget,
                   spec.target_train_spec, spec.eval_spec, derive_seed(seed, kSeedTrain, 2),
                   target.partition_ptr(), spec.learning_rate);
    model.load(result.target_phase.best_state);
  }

  result.report = meta_test(model, *target.dataset, target.split, spec.eval_spec, spec.test_tasks,
                            derive_seed(seed, kSeedTest, 3), target.partition_ptr());
  result.report.scenario = scenario_name(spec.kind);
  result.final_state = model.state();
  return result;
}

/// Split sizes used when repeats resample the class splits.
struct SplitSizes {
  int train = 0;
  int val = 0;
  int test = 0;
};

/**
 * Repeats a scenario with freshly resampled class splits; repeat r derives
 * its seed and splits from (master_seed, r). Reports carry repeat metadata.
 * The optional observer sees every finished repeat (index, repeat seed,
 * full scenario result) so callers can persist checkpoints and logs.
 */
template <class T>
std::vector<EvalReport> repeat_experiment(
    MethodKey method, const Conv4Config& config, const LabeledDataset<T>* general_ds,
    SplitSizes general_sizes, const LabeledDataset<T>& target_ds, SplitSizes target_sizes,
    const ScenarioSpec& spec, int n_repeats, std::uint64_t master_seed,
    const std::function<void(int, std::uint64_t, const ScenarioResult<T>&)>& observer = {},
    const StateDict<T>* general_checkpoint = nullptr) {
  if (n_repeats < 1) throw DataError("repeat_experiment: need at least one repeat");
  const bool needs_general =
      spec.kind == ScenarioKind::general_only ||
      (spec.kind == ScenarioKind::general_then_target && general_checkpoint == nullptr);
  if (needs_general && general_ds == nullptr)
    throw DataError(std::string(scenario_name(spec.kind)) + " needs a general dataset");
  const bool unlabeled = spec.general_train_spec.unlabeled > 0 ||
                         spec.target_train_spec.unlabeled > 0 || spec.eval_spec.unlabeled > 0;

  std::vector<EvalReport> reports;
  reports.reserve(static_cast<std::size_t>(n_repeats));
  for (int r = 0; r < n_repeats; ++r) {
    const std::uint64_t seed = derive_seed(master_seed, kSeedRepeat, static_cast<std::uint32_t>(r));
    std::optional<PhaseData<T>> general;
    if (needs_general)
      general = detail::make_phase(*general_ds,
                                   make_split(*general_ds, general_sizes.train, general_sizes.val,
                                              general_sizes.test, seed),
                                   unlabeled, spec.labeled_fraction, seed);
    auto target = detail::make_phase(target_ds,
                                     make_split(target_ds, target_sizes.train, target_sizes.val,
                                                target_sizes.test, derive_seed(seed, kSeedRepeat)),
                                     unlabeled, spec.labeled_fraction, seed + 1);
    auto result = run_scenario(method, config, general ? &*general : nullptr, target, spec, seed,
                               general_checkpoint);
    result.report.repeat_index = r;
    if (observer) observer(r, seed, result);
    reports.push_back(std::move(result.report));
  }
  return reports;
}

}  // namespace fewshot
