/**
 * @file nn.hpp
 * @brief Layer building blocks: conv/BN/linear with fan-in init and named
 * state for checkpointing.
 */
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/ops.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

/// One named parameter or buffer flattened for serialization.
template <class T>
struct StateEntry {
  std::string name;
  Shape shape;
  std::vector<T> data;
};

template <class T>
using StateDict = std::vector<StateEntry<T>>;

namespace nn {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <class T>
Tensor<T> fan_in_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  return Tensor<T>::uniform(shape, -bound, bound, rng, true);
}

/// conv(3x3, no bias) + batch-norm + ReLU + optional 2x2 max-pool.
template <class T>
struct ConvBlock {
  Tensor<T> weight;       // [F, C, k, k]
  Tensor<T> gamma, beta;  // [F]
  std::vector<T> running_mean, running_var;
  int stride = 1;
  int padding = 0;
  bool pool = true;
  T bn_eps = T(1e-5);
  T bn_momentum = T(0.1);

  ConvBlock() = default;
  ConvBlock(int in_channels, int filters, int kernel, int stride_, int padding_, bool pool_,
            std::mt19937_64& rng)
      : weight(fan_in_uniform<T>({filters, in_channels, kernel, kernel},
                                 in_channels * kernel * kernel, rng)),
        gamma(Tensor<T>::ones({filters}, true)),
        beta(Tensor<T>::zeros({filters}, true)),
        running_mean(static_cast<std::size_t>(filters), T(0)),
        running_var(static_cast<std::size_t>(filters), T(1)),
        stride(stride_),
        padding(padding_),
        pool(pool_) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    auto h = conv2d(x, weight, stride, padding);
    if (train) {
      std::vector<T> batch_mean, batch_var;
      h = batch_norm_train(h, gamma, beta, bn_eps, &batch_mean, &batch_var);
      // Running averages track the batch statistics (unbiased variance).
      const std::size_t count = h.numel() / static_cast<std::size_t>(h.dim(1));
      const T correction =
          count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
      for (std::size_t c = 0; c < running_mean.size(); ++c) {
        running_mean[c] = (T(1) - bn_momentum) * running_mean[c] + bn_momentum * batch_mean[c];
        running_var[c] =
            (T(1) - bn_momentum) * running_var[c] + bn_momentum * batch_var[c] * correction;
      }
    } else {
      h = batch_norm_eval(h, gamma, beta, running_mean, running_var, bn_eps);
    }
    h = relu(h);
    if (pool) h = max_pool2x2(h);
    return h;
  }

  void parameters(std::vector<Tensor<T>>& out) {
    out.push_back(weight);
    out.push_back(gamma);
    out.push_back(beta);
  }

  void state(const std::string& prefix, StateDict<T>& out) const {
    out.push_back({prefix + ".weight", weight.shape(),
                   std::vector<T>(weight.data().begin(), weight.data().end())});
    out.push_back({prefix + ".gamma", gamma.shape(),
                   std::vector<T>(gamma.data().begin(), gamma.data().end())});
    out.push_back({prefix + ".beta", beta.shape(),
                   std::vector<T>(beta.data().begin(), beta.data().end())});
    out.push_back({prefix + ".running_mean", {static_cast<int>(running_mean.size())},
                   running_mean});
    out.push_back({prefix + ".running_var", {static_cast<int>(running_var.size())}, running_var});
  }
};

/// Fully connected layer with bias.
template <class T>
struct Dense {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Dense() = default;
  Dense(int in_features, int out_features, std::mt19937_64& rng)
      : weight(fan_in_uniform<T>({out_features, in_features}, in_features, rng)),
        bias(fan_in_uniform<T>({out_features}, in_features, rng)) {}

  Tensor<T> forward(const Tensor<T>& x) { return linear(x, weight, bias); }

  void parameters(std::vector<Tensor<T>>& out) {
    out.push_back(weight);
    out.push_back(bias);
  }

  void state(const std::string& prefix, StateDict<T>& out) const {
    out.push_back({prefix + ".weight", weight.shape(),
                   std::vector<T>(weight.data().begin(), weight.data().end())});
    out.push_back({prefix + ".bias", bias.shape(),
                   std::vector<T>(bias.data().begin(), bias.data().end())});
  }
};

/// Restores one entry of a state dict into a tensor (shape must match).
template <class T>
void load_entry(const StateDict<T>& state, const std::string& name, Tensor<T>& dst) {
  for (const auto& e : state) {
    if (e.name != name) continue;
    if (e.shape != dst.shape())
      throw TensorError("checkpoint entry '" + name + "' has shape " + shape_str(e.shape) +
                        ", expected " + shape_str(dst.shape()));
    std::copy(e.data.begin(), e.data.end(), dst.data().begin());
    return;
  }
  throw TensorError("checkpoint is missing entry '" + name + "'");
}

template <class T>
void load_entry(const StateDict<T>& state, const std::string& name, std::vector<T>& dst) {
  for (const auto& e : state) {
    if (e.name != name) continue;
    if (e.data.size() != dst.size())
      throw TensorError("checkpoint entry '" + name + "' has " + std::to_string(e.data.size()) +
                        " values, expected " + std::to_string(dst.size()));
    dst = e.data;
    return;
  }
  throw TensorError("checkpoint is missing entry '" + name + "'");
}

template <class T>
void load_block(const StateDict<T>& state, const std::string& prefix, ConvBlock<T>& block) {
  load_entry(state, prefix + ".weight", block.weight);
  load_entry(state, prefix + ".gamma", block.gamma);
  load_entry(state, prefix + ".beta", block.beta);
  load_entry(state, prefix + ".running_mean", block.running_mean);
  load_entry(state, prefix + ".running_var", block.running_var);
}

template <class T>
void load_dense(const StateDict<T>& state, const std::string& prefix, Dense<T>& dense) {
  load_entry(state, prefix + ".weight", dense.weight);
  load_entry(state, prefix + ".bias", dense.bias);
}

}  // namespace nn
}  // namespace fewshot
