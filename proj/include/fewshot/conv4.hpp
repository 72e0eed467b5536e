/**
 * @file conv4.hpp
 * @brief The Conv-4 embedding backbone and the relation module.
 *
 * Conv-4: four blocks of conv(3x3, 64 filters, stride 1, no padding) +
 * batch-norm + ReLU + 2x2 max-pool. Spatial extent follows
 * s -> floor((s-2)/2) per block; an input size is admissible only if the
 * trace stays >= 1 through all four blocks (smallest such size: 46).
 *
 * Relation module: two conv blocks (3x3, padding 1 so that 1x1 maps survive,
 * pooling only while the extent allows it) over channel-concatenated
 * (prototype, target) feature-map pairs, then one linear output unit and a
 * sigmoid.
 */
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fewshot/nn.hpp"
#include "fewshot/ops.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

struct Conv4Config {
  int in_channels = 3;
  int input_size = 84;
  int filters = 64;
};

/// Spatial extents after each of the four blocks; throws if any collapses.
inline std::vector<int> conv4_spatial_trace(int input_size) {
  std::vector<int> trace;
  int s = input_size;
  for (int b = 0; b < 4; ++b) {
    s = (s - 2) / 2;  // conv(3x3, pad 0) then pool(2x2), floored
    if (s < 1) {
      std::string msg = "input_size " + std::to_string(input_size) +
                        " collapses in conv block " + std::to_string(b + 1) + " (trace:";
      int t = input_size;
      for (int i = 0; i <= b; ++i) {
        t = (t - 2) / 2;
        msg += " " + std::to_string(t);
      }
      throw TensorError(msg + "); smallest admissible input_size is 46");
    }
    trace.push_back(s);
  }
  return trace;
}

template <class T>
class Conv4Embedding {
 public:
  Conv4Embedding() = default;

  Conv4Embedding(const Conv4Config& config, std::uint64_t seed) : config_(config) {
    const auto trace = conv4_spatial_trace(config.input_size);
    final_spatial_ = trace.back();
    std::mt19937_64 rng(seed);
    int ch = config.in_channels;
    for (int b = 0; b < 4; ++b) {
      blocks_[static_cast<std::size_t>(b)] =
          nn::ConvBlock<T>(ch, config.filters, 3, 1, 0, true, rng);
      ch = config.filters;
    }
  }

  const Conv4Config& config() const { return config_; }
  int final_spatial() const { return final_spatial_; }
  int embedding_dim() const { return config_.filters * final_spatial_ * final_spatial_; }

  /// Final feature maps [B, filters, s, s].
  Tensor<T> feature_maps(const Tensor<T>& images, bool train) {
    if (images.ndim() != 4 || images.dim(1) != config_.in_channels ||
        images.dim(2) != config_.input_size || images.dim(3) != config_.input_size)
      throw TensorError("Conv4Embedding: expected images [B," +
                        std::to_string(config_.in_channels) + "," +
                        std::to_string(config_.input_size) + "," +
                        std::to_string(config_.input_size) + "], got " +
                        shape_str(images.shape()));
    Tensor<T> h = images;
    for (auto& block : blocks_) h = block.forward(h, train);
    return h;
  }

  /// Flattened embeddings [B, M].
  Tensor<T> embed(const Tensor<T>& images, bool train) {
    auto maps = feature_maps(images, train);
    return reshape(maps, {maps.dim(0), embedding_dim()});
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& block : blocks_) block.parameters(out);
    return out;
  }

  StateDict<T> state() const {
    StateDict<T> out;
    for (int b = 0; b < 4; ++b)
      blocks_[static_cast<std::size_t>(b)].state("conv4.block" + std::to_string(b), out);
    return out;
  }

  void load(const StateDict<T>& state) {
    for (int b = 0; b < 4; ++b)
      nn::load_block(state, "conv4.block" + std::to_string(b), blocks_[static_cast<std::size_t>(b)]);
  }

 private:
  Conv4Config config_;
  int final_spatial_ = 0;
  std::array<nn::ConvBlock<T>, 4> blocks_;
};

template <class T>
class RelationModule {
 public:
  RelationModule() = default;

  /// in_channels is 2F (concatenated pair); spatial is the feature-map extent.
  RelationModule(int in_channels, int spatial, int filters, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    int s = spatial;
    int ch = in_channels;
    for (int b = 0; b < 2; ++b) {
      const bool pool = s >= 2;
      blocks_[static_cast<std::size_t>(b)] = nn::ConvBlock<T>(ch, filters, 3, 1, 1, pool, rng);
      if (pool) s /= 2;
      ch = filters;
    }
    in_channels_ = in_channels;
    spatial_ = spatial;
    flat_dim_ = filters * s * s;
    head_ = nn::Dense<T>(flat_dim_, 1, rng);
  }

  /// One scalar score in (0,1) per combined pair row [P, 2F, s, s].
  Tensor<T> scores(const Tensor<T>& combined, bool train) {
    if (combined.ndim() != 4 || combined.dim(1) != in_channels_ ||
        combined.dim(2) != spatial_ || combined.dim(3) != spatial_)
      throw TensorError("RelationModule: expected pairs [P," + std::to_string(in_channels_) + "," +
                        std::to_string(spatial_) + "," + std::to_string(spatial_) + "], got " +
                        shape_str(combined.shape()));
    Tensor<T> h = combined;
    for (auto& block : blocks_) h = block.forward(h, train);
    auto flat = reshape(h, {h.dim(0), flat_dim_});
    return reshape(sigmoid(head_.forward(flat)), {combined.dim(0)});
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& block : blocks_) block.parameters(out);
    head_.parameters(out);
    return out;
  }

  StateDict<T> state() const {
    StateDict<T> out;
    for (int b = 0; b < 2; ++b)
      blocks_[static_cast<std::size_t>(b)].state("relation.block" + std::to_string(b), out);
    head_.state("relation.head", out);
    return out;
  }

  void load(const StateDict<T>& state) {
    for (int b = 0; b < 2; ++b)
      nn::load_block(state, "relation.block" + std::to_string(b),
                     blocks_[static_cast<std::size_t>(b)]);
    nn::load_dense(state, "relation.head", head_);
  }

 private:
  int in_channels_ = 0;
  int spatial_ = 0;
  int flat_dim_ = 0;
  std::array<nn::ConvBlock<T>, 2> blocks_;
  nn::Dense<T> head_;
};

}  // namespace fewshot
