/**
 * @file dataset.hpp
 * @brief Labeled image datasets, class-disjoint splits, labeled/unlabeled
 * partitions, and episode sampling.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

/// Error type for dataset/split/episode protocol violations.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

template <class T>
struct LabeledDataset {
  int channels = 1;
  int size = 0;  // images are [channels, size, size]
  std::vector<std::vector<T>> images;
  std::vector<int> labels;                    // class id per image
  std::vector<std::string> class_names;       // class id -> name
  std::vector<std::vector<int>> class_index;  // class id -> image indices

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int num_images() const { return static_cast<int>(images.size()); }
  std::size_t image_numel() const {
    return static_cast<std::size_t>(channels) * size * size;
  }

  int add_class(std::string name) {
    class_names.push_back(std::move(name));
    class_index.emplace_back();
    return num_classes() - 1;
  }

  void add_image(int class_id, std::vector<T> pixels) {
    if (class_id < 0 || class_id >= num_classes())
      throw DataError("add_image: unknown class id " + std::to_string(class_id));
    if (pixels.size() != image_numel())
      throw DataError("add_image: got " + std::to_string(pixels.size()) + " pixels, expected " +
                      std::to_string(image_numel()));
    class_index[static_cast<std::size_t>(class_id)].push_back(num_images());
    labels.push_back(class_id);
    images.push_back(std::move(pixels));
  }

  /// Batch tensor [B, C, H, W] for the given image indices.
  Tensor<T> gather(const std::vector<int>& indices) const {
    const std::size_t numel = image_numel();
    std::vector<T> data(indices.size() * numel);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 0 || indices[i] >= num_images())
        throw DataError("gather: image index " + std::to_string(indices[i]) + " out of range");
      const auto& img = images[static_cast<std::size_t>(indices[i])];
      std::copy(img.begin(), img.end(), data.begin() + static_cast<std::ptrdiff_t>(i * numel));
    }
    return Tensor<T>::from_data({static_cast<int>(indices.size()), channels, size, size},
                                std::move(data));
  }
};

/// Class-disjoint phase assignment.
struct SplitSpec {
  std::vector<int> train_classes, val_classes, test_classes;
  std::uint64_t seed = 0;
};

/// Deterministically assigns eligible classes (those with at least
/// min_class_size images) to the three phases.
template <class T>
SplitSpec make_split(const LabeledDataset<T>& ds, int n_train, int n_val, int n_test,
                     std::uint64_t seed, int min_class_size = 40) {
  if (n_train < 0 || n_val < 0 || n_test < 0) throw DataError("make_split: negative phase size");
  std::vector<int> eligible;
  for (int c = 0; c < ds.num_classes(); ++c)
    if (static_cast<int>(ds.class_index[static_cast<std::size_t>(c)].size()) >= min_class_size)
      eligible.push_back(c);
  const int want = n_train + n_val + n_test;
  if (static_cast<int>(eligible.size()) < want)
    throw DataError("make_split: requested " + std::to_string(n_train) + "+" +
                    std::to_string(n_val) + "+" + std::to_string(n_test) + " = " +
                    std::to_string(want) + " classes but only " +
                    std::to_string(eligible.size()) + " of " + std::to_string(ds.num_classes()) +
                    " have at least " + std::to_string(min_class_size) + " images");
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  SplitSpec split;
  split.seed = seed;
  split.train_classes.assign(eligible.begin(), eligible.begin() + n_train);
  split.val_classes.assign(eligible.begin() + n_train, eligible.begin() + n_train + n_val);
  split.test_classes.assign(eligible.begin() + n_train + n_val, eligible.begin() + want);
  std::sort(split.train_classes.begin(), split.train_classes.end());
  std::sort(split.val_classes.begin(), split.val_classes.end());
  std::sort(split.test_classes.begin(), split.test_classes.end());
  return split;
}

/// Per-class labeled/unlabeled index assignment (the paper's 40%/60% split).
struct LabeledUnlabeledPartition {
  double labeled_fraction = 0.4;
  std::vector<std::vector<int>> labeled;    // per class id
  std::vector<std::vector<int>> unlabeled;  // per class id
};

template <class T>
LabeledUnlabeledPartition partition_labeled_unlabeled(const LabeledDataset<T>& ds,
                                                      double labeled_fraction,
                                                      std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw DataError("labeled_fraction must lie in (0, 1], got " +
                    std::to_string(labeled_fraction));
  LabeledUnlabeledPartition part;
  part.labeled_fraction = labeled_fraction;
  part.labeled.resize(static_cast<std::size_t>(ds.num_classes()));
  part.unlabeled.resize(static_cast<std::size_t>(ds.num_classes()));
  std::mt19937_64 rng(seed);
  for (int c = 0; c < ds.num_classes(); ++c) {
    auto indices = ds.class_index[static_cast<std::size_t>(c)];
    std::shuffle(indices.begin(), indices.end(), rng);
    const auto total = static_cast<std::ptrdiff_t>(indices.size());
    auto n_lab = static_cast<std::ptrdiff_t>(
        std::lround(labeled_fraction * static_cast<double>(total)));
    n_lab = std::clamp<std::ptrdiff_t>(n_lab, total > 0 ? 1 : 0, total);
    part.labeled[static_cast<std::size_t>(c)].assign(indices.begin(), indices.begin() + n_lab);
    part.unlabeled[static_cast<std::size_t>(c)].assign(indices.begin() + n_lab, indices.end());
  }
  return part;
}

/// One k-shot n-way task with optional unlabeled and distractor images.
struct Episode {
  int n = 0, k = 0, t = 0, u = 0;
  std::vector<int> classes;             // the n episode classes (dataset ids)
  std::vector<int> distractor_classes;  // extra unlabeled-only classes
  std::vector<int> support_indices;     // k*n dataset image indices
  std::vector<int> support_labels;      // episode-local labels in [0, n)
  std::vector<int> target_indices;      // t*n dataset image indices
  std::vector<int> target_labels;
  std::vector<int> unlabeled_indices;   // u*(n + distractors) image indices
};

namespace detail {

/// Draws `count` indices without replacement from `pool` (shuffled copy).
inline std::vector<int> draw(const std::vector<int>& pool, std::size_t count,
                             std::mt19937_64& rng) {
  std::vector<int> shuffled = pool;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.resize(count);
  return shuffled;
}

}  // namespace detail

/**
 * Samples one episode. Supervised episodes (u == 0) draw support and target
 * images from each class's full index list. Semi-supervised episodes
 * (u > 0) draw support/target from the labeled partition and unlabeled
 * images from the unlabeled partition, which must then be provided.
 * Distractor classes are drawn from phase_classes outside the n episode
 * classes and contribute u unlabeled images each.
 */
template <class T>
Episode sample_episode(const LabeledDataset<T>& ds, const std::vector<int>& phase_classes, int k,
                       int n, int t, int u, int distractor_count, std::mt19937_64& rng,
                       const LabeledUnlabeledPartition* partition = nullptr) {
  if (k < 1 || n < 1 || t < 0) throw DataError("sample_episode: need k >= 1, n >= 1, t >= 0");
  if (static_cast<int>(phase_classes.size()) < n + (u > 0 ? distractor_count : 0))
    throw DataError("sample_episode: phase has " + std::to_string(phase_classes.size()) +
                    " classes, need " + std::to_string(n) + " episode classes plus " +
                    std::to_string(u > 0 ? distractor_count : 0) + " distractors");
  if (u > 0 && partition == nullptr)
    throw DataError("sample_episode: unlabeled samples requested but no partition provided");

  std::vector<int> pool = phase_classes;
  std::shuffle(pool.begin(), pool.end(), rng);

  Episode ep;
  ep.n = n;
  ep.k = k;
  ep.t = t;
  ep.u = u;
  ep.classes.assign(pool.begin(), pool.begin() + n);
  if (u > 0 && distractor_count > 0)
    ep.distractor_classes.assign(pool.begin() + n, pool.begin() + n + distractor_count);

  for (int local = 0; local < n; ++local) {
    const int c = ep.classes[static_cast<std::size_t>(local)];
    const std::vector<int>& source =
        u > 0 ? partition->labeled[static_cast<std::size_t>(c)]
              : ds.class_index[static_cast<std::size_t>(c)];
    if (static_cast<int>(source.size()) < k + t)
      throw DataError("sample_episode: class '" + ds.class_names[static_cast<std::size_t>(c)] +
                      "' has " + std::to_string(source.size()) + (u > 0 ? " labeled" : "") +
                      " images, need k+t = " + std::to_string(k + t));
    auto chosen = detail::draw(source, static_cast<std::size_t>(k + t), rng);
    for (int i = 0; i < k; ++i) {
      ep.support_indices.push_back(chosen[static_cast<std::size_t>(i)]);
      ep.support_labels.push_back(local);
    }
    for (int i = 0; i < t; ++i) {
      ep.target_indices.push_back(chosen[static_cast<std::size_t>(k + i)]);
      ep.target_labels.push_back(local);
    }
  }

  if (u > 0) {
    std::vector<int> unlabeled_classes = ep.classes;
    unlabeled_classes.insert(unlabeled_classes.end(), ep.distractor_classes.begin(),
                             ep.distractor_classes.end());
    for (int c : unlabeled_classes) {
      const auto& source = partition->unlabeled[static_cast<std::size_t>(c)];
      if (static_cast<int>(source.size()) < u)
        throw DataError("sample_episode: class '" + ds.class_names[static_cast<std::size_t>(c)] +
                        "' has " + std::to_string(source.size()) + " unlabeled images, need " +
                        std::to_string(u));
      auto chosen = detail::draw(source, static_cast<std::size_t>(u), rng);
      ep.unlabeled_indices.insert(ep.unlabeled_indices.end(), chosen.begin(), chosen.end());
    }
  }
  return ep;
}

// Split file persistence (JSON with class names and seed); definitions in
// src/dataset.cpp.
void save_split(const std::string& path, const SplitSpec& split,
                const std::vector<std::string>& class_names);
SplitSpec load_split(const std::string& path, const std::vector<std::string>& class_names);

}  // namespace fewshot
