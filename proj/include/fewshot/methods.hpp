// @file methods.hpp
// Few-shot classification and loss procedures: prototypical classification,
// relation scores, soft k-means prototype refinement (vanilla / distractor
// cluster / soft masks), VAT and random-walk consistency losses.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fewshot/nn.hpp"
#include "fewshot/ops.hpp"

namespace fewshot {

// Method selection keys.
enum class MethodKey { pn, rn, skm, skm_cluster, skm_mask, cpn, cpn_skm, convnet_ft };

inline const char* method_name(MethodKey m) {
  switch (m) {
    case MethodKey::pn: return "pn";
    case MethodKey::rn: return "rn";
    case MethodKey::skm: return "skm";
    case MethodKey::skm_cluster: return "skm-cluster";
    case MethodKey::skm_mask: return "skm-mask";
    case MethodKey::cpn: return "cpn";
    case MethodKey::cpn_skm: return "cpn-skm";
    default: return "convnet-ft";
  }
}

inline MethodKey parse_method(const std::string& key) {
  for (MethodKey m : {MethodKey::pn, MethodKey::rn, MethodKey::skm, MethodKey::skm_cluster,
                      MethodKey::skm_mask, MethodKey::cpn, MethodKey::cpn_skm,
                      MethodKey::convnet_ft})
    if (key == method_name(m)) return m;
  throw TensorError("unknown method key '" + key +
                    "' (expected pn, rn, skm, skm-cluster, skm-mask, cpn, cpn-skm, convnet-ft)");
}

// Class centroids. With a distractor cluster the centroid matrix carries one
// extra final row which classification ignores.
template <class T>
struct PrototypeSet {
  Tensor<T> centroids;            // [n, M] or [n+1, M]
  std::vector<int> class_ids;     // episode-local ids, size n
  bool refined = false;

  int num_classes() const { return static_cast<int>(class_ids.size()); }
  bool has_distractor() const {
    return centroids.shape().at(0) == num_classes() + 1;
  }
  // Rows used for classification (first n).
  Tensor<T> class_centroids() const {
    return has_distractor() ? slice_axis0(centroids, 0, num_classes()) : centroids;
  }
};

// Per-class soft-mask parameters of Eq. (8).
template <class T>
struct MaskParams {
  Tensor<T> beta;   // [n] thresholds
  Tensor<T> gamma;  // [n] positive slopes
};

// Length scales of the distractor refinement, Eq. (6). Cluster scales
// q_{1..n} are fixed to 1; only the catch-all scale is trainable.
template <class T>
struct DistractorScale {
  Tensor<T> q_extra;  // scalar, > 0

  DistractorScale() : q_extra(Tensor<T>::scalar(T(1), true)) {}
  explicit DistractorScale(T q, bool trainable = true)
      : q_extra(Tensor<T>::scalar(q, trainable)) {}

  void parameters(std::vector<Tensor<T>>& out) { out.push_back(q_extra); }
  void state(const std::string& prefix, StateDict<T>& out) const {
    out.push_back({prefix + ".q_extra", q_extra.shape(),
                   std::vector<T>(q_extra.data().begin(), q_extra.data().end())});
  }
  void load(const StateDict<T>& state, const std::string& prefix) {
    nn::load_entry(state, prefix + ".q_extra", q_extra);
  }
};

// VAT and random-walk constants of the CPN loss, Eq. (9).
struct CPNConfig {
  double epsilon = 2.0;      // perturbation radius in input units
  int power_iterations = 1;  // adversarial-direction iterations
  double xi = 1e-6;          // finite-difference step
  int walk_length = 1;       // unlabeled->unlabeled steps
  double temperature = 1.0;  // transition temperature
};

namespace detail {

template <class T>
void check_embedding_matrix(const char* who, const Tensor<T>& t) {
  if (t.shape().size() != 2)
    throw TensorError(std::string(who) + ": expected [rows, M] embeddings, got " +
                      shape_str(t.shape()));
}

inline void check_labels(const char* who, const std::vector<int>& labels, int rows,
                         int n_classes) {
  if (static_cast<int>(labels.size()) != rows)
    throw TensorError(std::string(who) + ": " + std::to_string(labels.size()) +
                      " labels for " + std::to_string(rows) + " embeddings");
  std::vector<int> count(n_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes)
      throw TensorError(std::string(who) + ": label " + std::to_string(l) +
                        " outside [0, " + std::to_string(n_classes) + ")");
    ++count[l];
  }
  for (int c = 0; c < n_classes; ++c)
    if (count[c] == 0)
      throw TensorError(std::string(who) + ": class " + std::to_string(c) +
                        " has no support samples");
}

// Shared Eq. (5)/(6)/(8) refinement step: convex re-estimation of centroids
// from fixed hard numerators/denominators plus weighted unlabeled terms.
template <class T>
Tensor<T> refine_step(const Tensor<T>& hard_num, const Tensor<T>& hard_den,
                      const Tensor<T>& weights, const Tensor<T>& unlabeled) {
  auto num = add(hard_num, matmul(transpose(weights), unlabeled));
  auto den = add(hard_den, colwise_sum(weights));
  return div_rows_by_vec(num, den);
}

} // namespace detail

// Eq. (1): prototype c = mean of support embeddings with label c.
template <class T>
PrototypeSet<T> compute_prototypes(const Tensor<T>& embeddings, const std::vector<int>& labels,
                                   int n_classes) {
  detail::check_embedding_matrix("compute_prototypes", embeddings);
  detail::check_labels("compute_prototypes", labels, embeddings.shape()[0], n_classes);
  auto z = one_hot<T>(labels, n_classes);          // [s, n]
  auto counts = colwise_sum(z);                    // [n]
  auto centroids = div_rows_by_vec(matmul(transpose(z), embeddings), counts);
  PrototypeSet<T> out;
  out.centroids = centroids;
  out.class_ids.resize(n_classes);
  for (int c = 0; c < n_classes; ++c) out.class_ids[c] = c;
  out.refined = false;
  return out;
}

// Eq. (2): row-softmax over negative squared Euclidean distances.
template <class T>
Tensor<T> classify_by_distance(const PrototypeSet<T>& protos, const Tensor<T>& targets) {
  return softmax_rows(neg(pairwise_sq_euclidean(targets, protos.class_centroids())));
}

template <class T>
Tensor<T> log_probs_by_distance(const PrototypeSet<T>& protos, const Tensor<T>& targets) {
  return log_softmax_rows(neg(pairwise_sq_euclidean(targets, protos.class_centroids())));
}

template <class T>
std::vector<int> predict_labels(const PrototypeSet<T>& protos, const Tensor<T>& targets) {
  return argmax_rows(classify_by_distance(protos, targets));
}

// Eq. (3): mean negative log-probability of the true classes, evaluated
// through the log-softmax for stability.
template <class T>
Tensor<T> pn_loss(const PrototypeSet<T>& protos, const Tensor<T>& targets,
                  const std::vector<int>& labels) {
  return nll_loss(log_probs_by_distance(protos, targets), labels);
}

// Eq. (4) training objective: MSE between relation scores and one-hot labels.
// Scores are flat with pair (target j, class c) at index j*n + c.
template <class T>
Tensor<T> rn_loss(const Tensor<T>& scores, const std::vector<int>& labels, int n_classes) {
  const int expected = static_cast<int>(labels.size()) * n_classes;
  if (static_cast<int>(scores.numel()) != expected)
    throw TensorError("rn_loss: " + std::to_string(scores.numel()) + " scores for " +
                      std::to_string(labels.size()) + " targets x " +
                      std::to_string(n_classes) + " classes");
  std::vector<T> target(scores.numel(), T(0));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || labels[j] >= n_classes)
      throw TensorError("rn_loss: label outside class range");
    target[j * n_classes + labels[j]] = T(1);
  }
  return mse_loss(scores, target);
}

// Argmax relation score per target row.
template <class T>
std::vector<int> rn_predict(const Tensor<T>& scores, int n_classes) {
  const int t = static_cast<int>(scores.numel()) / n_classes;
  return argmax_rows(reshape(scores, {t, n_classes}));
}

// Eq. (5) soft assignment: row-softmax of negative squared distances.
template <class T>
Tensor<T> soft_assign(const Tensor<T>& unlabeled, const Tensor<T>& centroids) {
  return softmax_rows(neg(pairwise_sq_euclidean(unlabeled, centroids)));
}

// Eq. (5): one or more soft k-means refinement rounds; hard assignments stay
// fixed, the unlabeled soft assignment is recomputed per round. Zero unlabeled
// samples reduce exactly to Eq. (1).
template <class T>
PrototypeSet<T> refine_soft_kmeans(const Tensor<T>& support, const std::vector<int>& labels,
                                   int n_classes, const Tensor<T>& unlabeled,
                                   int iterations = 1) {
  auto base = compute_prototypes(support, labels, n_classes);
  if (unlabeled.numel() == 0) return base;
  detail::check_embedding_matrix("refine_soft_kmeans", unlabeled);
  auto z = one_hot<T>(labels, n_classes);
  auto hard_num = matmul(transpose(z), support);
  auto hard_den = colwise_sum(z);
  auto p = base.centroids;
  for (int it = 0; it < iterations; ++it) {
    auto zu = soft_assign(unlabeled, p);
    p = detail::refine_step(hard_num, hard_den, zu, unlabeled);
  }
  base.centroids = p;
  base.refined = true;
  return base;
}

// Eq. (6): soft k-means with a catch-all distractor cluster at the origin.
// Assignment uses exp(-d/q_c^2 - A(q_c)) with A(q) = log q + log(2*pi)/2;
// q_{1..n} = 1, only the catch-all scale is trainable. The returned set keeps
// n+1 centroid rows; classification uses the first n.
template <class T>
PrototypeSet<T> refine_with_distractor(const Tensor<T>& support, const std::vector<int>& labels,
                                       int n_classes, const Tensor<T>& unlabeled,
                                       const DistractorScale<T>& scale, int iterations = 1) {
  const T q = scale.q_extra.data()[0];
  if (!(q > T(0)))
    throw TensorError("refine_with_distractor: length-scale q must be positive, got " +
                      std::to_string(static_cast<double>(q)));
  auto base = compute_prototypes(support, labels, n_classes);
  const int m = base.centroids.shape()[1];
  auto origin = Tensor<T>::zeros({1, m});
  auto p = concat_axis0<T>({base.centroids, origin});
  base.centroids = p;
  base.refined = false;
  if (unlabeled.numel() == 0) return base;
  detail::check_embedding_matrix("refine_with_distractor", unlabeled);

  const T a1 = T(0.5) * T(std::log(2.0 * M_PI)); // A(1)
  // per-cluster inverse square scales and offsets; only the last entry trains
  auto inv_q2 = concat_axis0<T>({Tensor<T>::ones({n_classes}),
                                 pow_scalar(scale.q_extra, T(-2))});
  auto a_q = concat_axis0<T>({Tensor<T>::full({n_classes}, a1),
                              add_scalar(log(scale.q_extra), a1)});
  auto z = one_hot<T>(labels, n_classes);
  auto hard_num = concat_axis0<T>({matmul(transpose(z), support), Tensor<T>::zeros({1, m})});
  auto hard_den = concat_axis0<T>({colwise_sum(z), Tensor<T>::zeros({1})});
  for (int it = 0; it < iterations; ++it) {
    auto d = pairwise_sq_euclidean(unlabeled, p);
    auto logits = sub_rowvec(neg(mul_rowvec(d, inv_q2)), a_q);
    auto zu = softmax_rows(logits);
    p = detail::refine_step(hard_num, hard_den, zu, unlabeled);
  }
  base.centroids = p;
  base.refined = true;
  return base;
}

// Eq. (7): distances normalized by the per-row mean over clusters. A row of
// all-zero distances maps to a row of ones.
template <class T>
Tensor<T> normalized_distances(const Tensor<T>& unlabeled, const Tensor<T>& centroids) {
  return normalize_rows_by_mean(pairwise_sq_euclidean(unlabeled, centroids));
}

template <class T>
Tensor<T> normalized_distances(const Tensor<T>& unlabeled, const PrototypeSet<T>& protos) {
  return normalized_distances(unlabeled, protos.class_centroids());
}

// The small trainable network of Eq. (8): per-class distance statistics
// (min, max, variance, skewness, kurtosis) -> hidden tanh layer -> (beta
// pre-activation, gamma pre-softplus). The beta output bias starts at 1 so
// thresholds begin around the normalized-distance mean.
template <class T>
struct MaskStatsNet {
  nn::Dense<T> fc1;
  nn::Dense<T> fc2;

  MaskStatsNet() = default;
  explicit MaskStatsNet(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    fc1 = nn::Dense<T>(5, 16, rng);
    fc2 = nn::Dense<T>(16, 2, rng);
    fc2.bias.data()[0] = T(1);
  }

  Tensor<T> forward(const Tensor<T>& stats) { return fc2.forward(tanh(fc1.forward(stats))); }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    fc1.parameters(out);
    fc2.parameters(out);
    return out;
  }
  void state(const std::string& prefix, StateDict<T>& out) const {
    fc1.state(prefix + ".fc1", out);
    fc2.state(prefix + ".fc2", out);
  }
  void load(const StateDict<T>& state, const std::string& prefix) {
    nn::load_dense(state, prefix + ".fc1", fc1);
    nn::load_dense(state, prefix + ".fc2", fc2);
  }
};

// Mask formula of Eq. (8) for given per-class thresholds and slopes:
// m_{r,c} = sigmoid(-gamma_c * (d~_{r,c} - beta_c)).
template <class T>
Tensor<T> masks_from_params(const Tensor<T>& norm_dist, const Tensor<T>& beta,
                            const Tensor<T>& gamma) {
  return sigmoid(neg(mul_rowvec(sub_rowvec(norm_dist, beta), gamma)));
}

// Per-class statistics of the normalized distances feeding the mask network.
// With fewer than 2 unlabeled rows the dispersion statistics are defined as 0.
template <class T>
Tensor<T> mask_statistics(const Tensor<T>& norm_dist) {
  detail::check_embedding_matrix("mask_statistics", norm_dist);
  const int rows = norm_dist.shape()[0];
  const int n = norm_dist.shape()[1];
  auto mn = colwise_min(norm_dist);
  auto mx = colwise_max(norm_dist);
  Tensor<T> var, skew, kurt;
  if (rows >= 2) {
    const T guard = T(1e-12); // keeps skew/kurt finite for near-constant columns
    auto xc = sub_rowvec(norm_dist, colwise_mean(norm_dist));
    auto x2 = mul(xc, xc);
    var = colwise_mean(x2);
    auto m3 = colwise_mean(mul(x2, xc));
    auto m4 = colwise_mean(mul(x2, x2));
    skew = mul(m3, pow_scalar(add_scalar(var, guard), T(-1.5)));
    kurt = mul(m4, pow_scalar(add_scalar(var, guard), T(-2)));
  } else {
    var = Tensor<T>::zeros({n});
    skew = Tensor<T>::zeros({n});
    kurt = Tensor<T>::zeros({n});
  }
  return stack_cols<T>({mn, mx, var, skew, kurt}); // [n, 5]
}

template <class T>
struct MaskResult {
  MaskParams<T> params;
  Tensor<T> masks; // [u~, n]
};

// Eq. (8) mask computation: statistics -> network -> (beta, gamma) -> masks.
template <class T>
MaskResult<T> compute_masks(const Tensor<T>& norm_dist, MaskStatsNet<T>& net) {
  auto out = net.forward(mask_statistics(norm_dist)); // [n, 2]
  MaskResult<T> res;
  res.params.beta = select_col(out, 0);
  res.params.gamma = softplus(select_col(out, 1));
  res.masks = masks_from_params(norm_dist, res.params.beta, res.params.gamma);
  return res;
}

// Eq. (8): soft k-means refinement with unlabeled contributions weighted by
// the learned soft masks.
template <class T>
PrototypeSet<T> refine_with_masks(const Tensor<T>& support, const std::vector<int>& labels,
                                  int n_classes, const Tensor<T>& unlabeled,
                                  MaskStatsNet<T>& net, int iterations = 1) {
  auto base = compute_prototypes(support, labels, n_classes);
  if (unlabeled.numel() == 0) return base;
  detail::check_embedding_matrix("refine_with_masks", unlabeled);
  auto z = one_hot<T>(labels, n_classes);
  auto hard_num = matmul(transpose(z), support);
  auto hard_den = colwise_sum(z);
  auto p = base.centroids;
  for (int it = 0; it < iterations; ++it) {
    auto norm_dist = normalized_distances(unlabeled, p);
    auto mask = compute_masks(norm_dist, net);
    auto zu = soft_assign(unlabeled, p);
    p = detail::refine_step(hard_num, hard_den, mul(zu, mask.masks), unlabeled);
  }
  base.centroids = p;
  base.refined = true;
  return base;
}

// Test seam: Eq. (8) with externally forced masks. Masks of all ones recover
// Eq. (5); masks of all zeros recover Eq. (1).
template <class T>
PrototypeSet<T> refine_with_masks(const Tensor<T>& support, const std::vector<int>& labels,
                                  int n_classes, const Tensor<T>& unlabeled,
                                  const Tensor<T>& forced_masks, int iterations = 1) {
  auto base = compute_prototypes(support, labels, n_classes);
  if (unlabeled.numel() == 0) return base;
  detail::check_embedding_matrix("refine_with_masks", unlabeled);
  auto z = one_hot<T>(labels, n_classes);
  auto hard_num = matmul(transpose(z), support);
  auto hard_den = colwise_sum(z);
  auto p = base.centroids;
  for (int it = 0; it < iterations; ++it) {
    auto zu = soft_assign(unlabeled, p);
    p = detail::refine_step(hard_num, hard_den, mul(zu, forced_masks), unlabeled);
  }
  base.centroids = p;
  base.refined = true;
  return base;
}

// Mean KL(p || q) over rows for a constant distribution p given as raw
// probabilities and log-probabilities; differentiable through log_q only.
template <class T>
Tensor<T> kl_to_const(const std::vector<T>& p_probs, const Tensor<T>& log_q) {
  if (p_probs.size() != log_q.numel())
    throw TensorError("kl_to_const: p has " + std::to_string(p_probs.size()) +
                      " entries, log_q " + std::to_string(log_q.numel()));
  const int rows = log_q.shape().at(0);
  double p_log_p = 0.0;
  for (T p : p_probs)
    if (p > T(0)) p_log_p += double(p) * std::log(double(p));
  auto p_const = Tensor<T>::from_data(log_q.shape(),
                                      std::vector<T>(p_probs.begin(), p_probs.end()));
  auto cross = scale(sum_all(mul(p_const, log_q)), T(-1.0 / rows));
  return add_scalar(cross, T(p_log_p / rows));
}

// L_VAT of Eq. (9). The adversarial direction comes from the cited power
// iteration (random unit direction, KL-gradient steps of size xi against the
// current predictions, renormalized); the loss is the mean KL between the
// fixed current predictions and the predictions at x + epsilon * direction.
// Gradients flow only through the perturbed branch, so the direction search
// scrubs any gradient it deposits on `params`.
template <class T, class EmbedFn>
Tensor<T> vat_loss(EmbedFn&& embed, const std::vector<Tensor<T>>& params,
                   const Tensor<T>& prototypes, const Tensor<T>& images,
                   const std::vector<T>& p_probs, const CPNConfig& cfg, std::mt19937_64& rng) {
  if (cfg.epsilon == 0.0) return Tensor<T>::scalar(T(0));
  const auto& shape = images.shape();
  const int b = shape.at(0);
  const std::size_t stride = images.numel() / b;

  auto normalize_per_image = [&](std::vector<T>& v) {
    for (int i = 0; i < b; ++i) {
      double nrm = 0.0;
      for (std::size_t k = 0; k < stride; ++k) {
        const double x = v[i * stride + k];
        nrm += x * x;
      }
      nrm = std::sqrt(nrm);
      const T inv = nrm > 0.0 ? T(1.0 / nrm) : T(0);
      for (std::size_t k = 0; k < stride; ++k) v[i * stride + k] *= inv;
    }
  };

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<T> dir(images.numel());
  for (auto& v : dir) v = T(gauss(rng));
  normalize_per_image(dir);

  auto protos_const = detach(prototypes);
  for (int it = 0; it < cfg.power_iterations; ++it) {
    std::vector<T> probe(images.numel());
    for (std::size_t k = 0; k < probe.size(); ++k)
      probe[k] = images.data()[k] + T(cfg.xi) * dir[k];
    auto x_hat = Tensor<T>::from_data(shape, std::move(probe), true);
    auto log_q = log_softmax_rows(neg(pairwise_sq_euclidean(embed(x_hat), protos_const)));
    kl_to_const(p_probs, log_q).backward();
    auto g = x_hat.grad();
    dir.assign(g.begin(), g.end());
    normalize_per_image(dir);
    for (auto p : params) p.zero_grad(); // direction search must not leak grads
  }

  std::vector<T> adv(images.numel());
  for (std::size_t k = 0; k < adv.size(); ++k)
    adv[k] = images.data()[k] + T(cfg.epsilon) * dir[k];
  auto x_adv = Tensor<T>::from_data(shape, std::move(adv));
  auto log_q = log_softmax_rows(neg(pairwise_sq_euclidean(embed(x_adv), prototypes)));
  return kl_to_const(p_probs, log_q);
}

// L_RW of Eq. (9): round-trip random walk prototype -> unlabeled^(walk) ->
// prototype; loss is the mean cross-entropy of the landing rows against the
// identity (the walker should return to its starting prototype).
template <class T>
Tensor<T> rw_loss(const Tensor<T>& prototypes, const Tensor<T>& unlabeled, int walk_length = 1,
                  double temperature = 1.0) {
  detail::check_embedding_matrix("rw_loss", unlabeled);
  if (unlabeled.shape()[0] < 1) throw TensorError("rw_loss: need at least one unlabeled sample");
  const int n = prototypes.shape().at(0);
  const T inv_temp = T(1.0 / temperature);
  auto pu = softmax_rows(scale(neg(pairwise_sq_euclidean(prototypes, unlabeled)), inv_temp));
  auto up = softmax_rows(scale(neg(pairwise_sq_euclidean(unlabeled, prototypes)), inv_temp));
  auto landing = pu;
  if (walk_length > 0) {
    auto uu = softmax_rows(set_diag_const(
        scale(neg(pairwise_sq_euclidean(unlabeled, unlabeled)), inv_temp), T(-1e30)));
    for (int stepi = 0; stepi < walk_length; ++stepi) landing = matmul(landing, uu);
  }
  landing = matmul(landing, up); // [n, n]
  std::vector<T> eye(static_cast<std::size_t>(n) * n, T(0));
  for (int c = 0; c < n; ++c) eye[static_cast<std::size_t>(c) * n + c] = T(1);
  auto diag = colwise_sum(mul(landing, Tensor<T>::from_data({n, n}, std::move(eye))));
  return neg(mean_all(log(diag)));
}

// Eq. (9): L_SSL = L_VAT + L_RW.
template <class T>
Tensor<T> cpn_loss(const Tensor<T>& vat, const Tensor<T>& rw) {
  return add(vat, rw);
}

} // namespace fewshot
