#pragma once
/**
 * @brief The ConvNet pre-train + fine-tune baseline.
 *
 * Pre-training: standard cross-entropy classification over the training-split
 * classes with mini-batches of 64 and a 0.9-decaying learning rate, validated
 * periodically on few-shot tasks (fine-tune + classify) so the best backbone
 * is checkpointed the same way as the meta-trained models.
 *
 * Evaluation: per task, all but the last linear layer are frozen; a fresh
 * 5-output head is re-initialized and trained for 10 full-support iterations
 * with lr_i = 0.01 * 0.5^i, then targets are classified by argmax.
 */
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/conv4.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/optim.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

/// Pre-training schedule; paper-scale defaults, all scalable for desk runs.
struct PretrainConfig {
  int batches = 400000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double decay = 0.9;
  int decay_period = 40000;  // batches between learning-rate decays
  int val_period = 2000;     // batches between FSL meta-validations
  int val_tasks = 100;
  EpisodeSpec val_spec;      // few-shot validation task shape
  int finetune_iterations = 10;
  double finetune_lr = 0.01;
  double finetune_decay = 0.5;
};

inline void validate_pretrain_config(const PretrainConfig& cfg) {
  if (cfg.batches < 0) throw DataError("PretrainConfig: batches must be >= 0");
  if (cfg.batch_size < 1) throw DataError("PretrainConfig: batch_size must be positive");
  if (cfg.decay_period < 1 || cfg.val_period < 1 || cfg.val_tasks < 1)
    throw DataError("PretrainConfig: schedule periods must be positive");
  if (cfg.finetune_iterations < 0) throw DataError("PretrainConfig: negative fine-tune iterations");
}

/// Learning rate after `batch` completed batches: lr * decay^floor(batch/period).
inline double pretrain_learning_rate(const PretrainConfig& cfg, int batch) {
  return cfg.learning_rate * std::pow(cfg.decay, batch / cfg.decay_period);
}

/// Backbone plus the pre-training classification head.
template <class T>
struct BaselineModel {
  Conv4Config config;
  Conv4Embedding<T> backbone;
  nn::Dense<T> head;  // over the pre-training classes
  int n_classes = 0;

  BaselineModel(const Conv4Config& cfg, int n_pretrain_classes, std::uint64_t seed)
      : config(cfg), backbone(cfg, derive_seed(seed, kSeedModel, 0)), n_classes(n_pretrain_classes) {
    if (n_pretrain_classes < 2)
      throw DataError("BaselineModel: pre-training needs at least 2 classes");
    std::mt19937_64 rng(derive_seed(seed, kSeedModel, 1));
    head = nn::Dense<T>(backbone.embedding_dim(), n_pretrain_classes, rng);
  }

  std::vector<Tensor<T>> parameters() {
    auto out = backbone.parameters();
    head.parameters(out);
    return out;
  }

  StateDict<T> state() const {
    StateDict<T> out = backbone.state();
    head.state("pretrain_head", out);
    return out;
  }

  void load(const StateDict<T>& state) {
    backbone.load(state);
    nn::load_dense(state, "pretrain_head", head);
  }
};

/**
 * Re-initializes and trains a fresh linear head on the frozen backbone's
 * support embeddings: `iterations` full-support gradient-descent steps with
 * lr_i = finetune_lr * finetune_decay^i. The backbone is never touched.
 */
template <class T>
nn::Dense<T> finetune_last_layer(Conv4Embedding<T>& backbone, const LabeledDataset<T>& ds,
                                 const Episode& ep, const PretrainConfig& cfg,
                                 std::uint64_t head_seed) {
  if (ep.support_indices.empty()) throw DataError("finetune_last_layer: empty support set");
  Tensor<T> support;
  {
    NoGradGuard ng;
    support = backbone.embed(ds.gather(ep.support_indices), false);
  }
  const auto features = detach(support);  // constants: gradients stop at the head

  std::mt19937_64 rng(head_seed);
  nn::Dense<T> head(backbone.embedding_dim(), ep.n, rng);
  for (int i = 0; i < cfg.finetune_iterations; ++i) {
    const T lr = static_cast<T>(cfg.finetune_lr * std::pow(cfg.finetune_decay, i));
    auto loss = nll_loss(log_softmax_rows(head.forward(features)), ep.support_labels);
    head.weight.zero_grad();
    head.bias.zero_grad();
    loss.backward();
    for (Tensor<T>* p : {&head.weight, &head.bias}) {
      auto data = p->data();
      auto grad = p->grad();
      for (std::size_t j = 0; j < data.size(); ++j) data[j] -= lr * grad[j];
    }
  }
  return head;
}

/// Fine-tunes on the episode support, classifies targets by argmax.
template <class T>
double evaluate_finetuned(Conv4Embedding<T>& backbone, const LabeledDataset<T>& ds,
                          const Episode& ep, const PretrainConfig& cfg, std::uint64_t head_seed) {
  auto head = finetune_last_layer(backbone, ds, ep, cfg, head_seed);
  NoGradGuard ng;
  auto logits = head.forward(backbone.embed(ds.gather(ep.target_indices), false));
  auto pred = argmax_rows(softmax_rows(logits));
  int hit = 0;
  for (std::size_t j = 0; j < pred.size(); ++j)
    hit += pred[j] == ep.target_labels[j] ? 1 : 0;
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

namespace detail {

/// Mean fine-tuned accuracy over fresh few-shot tasks from `classes`.
template <class T>
double finetuned_accuracy(Conv4Embedding<T>& backbone, const LabeledDataset<T>& ds,
                          const std::vector<int>& classes, const PretrainConfig& cfg, int n_tasks,
                          std::uint64_t seed) {
  double sum = 0.0;
  for (int e = 0; e < n_tasks; ++e) {
    std::mt19937_64 rng(derive_seed(seed, kSeedVal, static_cast<std::uint32_t>(e)));
    auto ep = sample_episode(ds, classes, cfg.val_spec.shots, cfg.val_spec.way,
                             cfg.val_spec.queries, 0, 0, rng);
    sum += evaluate_finetuned(backbone, ds, ep, cfg, derive_seed(seed, kSeedModel, e));
  }
  return n_tasks > 0 ? sum / n_tasks : 0.0;
}

}  // namespace detail

template <class T>
struct PretrainResult {
  StateDict<T> best_state;  // full model at the best few-shot validation
  double best_val_acc = -1.0;
  std::vector<LogRow> log;  // one row per batch
};

/**
 * Cross-entropy pre-training on the training-split classes. Every
 * `val_period` batches the backbone is validated on few-shot fine-tuning
 * tasks from the validation classes and the best state is retained.
 * A zero-batch budget leaves the model at its initialization.
 */
template <class T>
PretrainResult<T> pretrain_classifier(BaselineModel<T>& model, const LabeledDataset<T>& ds,
                                      const SplitSpec& split, const PretrainConfig& cfg,
                                      std::uint64_t seed) {
  validate_pretrain_config(cfg);
  if (static_cast<int>(split.train_classes.size()) != model.n_classes)
    throw DataError("pretrain_classifier: head covers " + std::to_string(model.n_classes) +
                    " classes but the split has " + std::to_string(split.train_classes.size()));
  if (model.n_classes < 2) throw DataError("pretrain_classifier: need at least 2 classes");

  // flat image pool with labels re-mapped to [0, n_train)
  std::vector<int> pool_idx;
  std::vector<int> pool_label;
  for (std::size_t local = 0; local < split.train_classes.size(); ++local)
    for (int img : ds.class_index[static_cast<std::size_t>(split.train_classes[local])]) {
      pool_idx.push_back(img);
      pool_label.push_back(static_cast<int>(local));
    }
  if (pool_idx.empty()) throw DataError("pretrain_classifier: training split has no images");

  PretrainResult<T> result;
  result.best_state = model.state();
  Adam<T> opt(model.parameters(), static_cast<T>(cfg.learning_rate));
  std::mt19937_64 rng(derive_seed(seed, kSeedTrain));
  std::uniform_int_distribution<std::size_t> pick(0, pool_idx.size() - 1);
  result.log.reserve(static_cast<std::size_t>(cfg.batches));

  for (int batch = 1; batch <= cfg.batches; ++batch) {
    std::vector<int> idx(static_cast<std::size_t>(cfg.batch_size));
    std::vector<int> labels(static_cast<std::size_t>(cfg.batch_size));
    for (int j = 0; j < cfg.batch_size; ++j) {
      const std::size_t p = pick(rng);
      idx[static_cast<std::size_t>(j)] = pool_idx[p];
      labels[static_cast<std::size_t>(j)] = pool_label[p];
    }
    auto logits = model.head.forward(model.backbone.embed(ds.gather(idx), true));
    auto loss = nll_loss(log_softmax_rows(logits), labels);
    opt.set_learning_rate(static_cast<T>(pretrain_learning_rate(cfg, batch)));
    opt.zero_grad();
    loss.backward();
    opt.step();

    LogRow row;
    row.task = batch;
    row.loss = static_cast<double>(loss.item());
    if (batch % cfg.val_period == 0) {
      row.val_acc = detail::finetuned_accuracy(model.backbone, ds, split.val_classes, cfg,
                                               cfg.val_tasks,
                                               derive_seed(seed, kSeedVal,
                                                           static_cast<std::uint32_t>(batch)));
      if (row.val_acc > result.best_val_acc) {
        result.best_val_acc = row.val_acc;
        result.best_state = model.state();
      }
    }
    result.log.push_back(row);
  }
  return result;
}

/**
 * Meta-tests the fine-tune baseline: task i draws its episode and its fresh
 * head seed from (seed, i), so reports are reproducible and tasks remain
 * independent of evaluation order.
 */
template <class T>
EvalReport baseline_meta_test(Conv4Embedding<T>& backbone, const LabeledDataset<T>& ds,
                              const SplitSpec& split, const EpisodeSpec& spec,
                              const PretrainConfig& cfg, int n_tasks, std::uint64_t seed) {
  if (n_tasks < 0) throw DataError("baseline_meta_test: negative task count");
  EvalReport report;
  report.method = method_name(MethodKey::convnet_ft);
  report.seed = seed;
  report.task_accuracies.reserve(static_cast<std::size_t>(n_tasks));
  for (int i = 0; i < n_tasks; ++i) {
    std::mt19937_64 rng(derive_seed(seed, kSeedTest, static_cast<std::uint32_t>(i)));
    auto ep = sample_episode(ds, split.test_classes, spec.shots, spec.way, spec.queries, 0, 0, rng);
    report.task_accuracies.push_back(
        evaluate_finetuned(backbone, ds, ep, cfg, derive_seed(seed, kSeedModel, i)));
  }
  fill_report_stats(report);
  return report;
}

}  // namespace fewshot
