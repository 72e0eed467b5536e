/**
 * @file oracles.hpp
 * @brief Naive reference implementations used only by the test suite.
 *
 * Every oracle here is written as directly as possible from the defining
 * formula — plain loops, no shared code with the library under test — so the
 * two sides fail independently.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracles {

/// Plain quadruple-loop 2-d cross-correlation. x:[N,C,H,W], w:[F,C,KH,KW].
inline std::vector<double> conv2d(const std::vector<double>& x, int N, int C, int H, int W,
                                  const std::vector<double>& w, int F, int KH, int KW, int stride,
                                  int pad) {
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(N) * F * OH * OW, 0.0);
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int kh = 0; kh < KH; ++kh)
              for (int kw = 0; kw < KW; ++kw) {
                const int ih = oh * stride - pad + kh;
                const int iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((static_cast<std::size_t>(n) * C + c) * H + ih) * W + iw] *
                       w[((static_cast<std::size_t>(f) * C + c) * KH + kh) * KW + kw];
              }
          y[((static_cast<std::size_t>(n) * F + f) * OH + oh) * OW + ow] = acc;
        }
  return y;
}

/// y = x W^T + b with x:[N,I], W:[O,I], b:[O].
inline std::vector<double> linear(const std::vector<double>& x, int N, int I,
                                  const std::vector<double>& w, int O,
                                  const std::vector<double>& b) {
  std::vector<double> y(static_cast<std::size_t>(N) * O, 0.0);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      for (int i = 0; i < I; ++i)
        acc += x[static_cast<std::size_t>(n) * I + i] * w[static_cast<std::size_t>(o) * I + i];
      y[static_cast<std::size_t>(n) * O + o] = acc;
    }
  return y;
}

/// Squared euclidean distances between rows of a:[P,M] and b:[Q,M].
inline std::vector<double> pairwise_sq(const std::vector<double>& a, int P,
                                       const std::vector<double>& b, int Q, int M) {
  std::vector<double> d(static_cast<std::size_t>(P) * Q, 0.0);
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < Q; ++j) {
      double acc = 0.0;
      for (int k = 0; k < M; ++k) {
        const double diff = a[static_cast<std::size_t>(i) * M + k] - b[static_cast<std::size_t>(j) * M + k];
        acc += diff * diff;
      }
      d[static_cast<std::size_t>(i) * Q + j] = acc;
    }
  return d;
}

/// Row softmax of -d over clusters: z[i][c] = exp(-d_ic) / sum_k exp(-d_ik).
inline std::vector<double> soft_assignment(const std::vector<double>& d, int R, int C) {
  std::vector<double> z(d.size());
  for (int i = 0; i < R; ++i) {
    double denom = 0.0;
    for (int c = 0; c < C; ++c) denom += std::exp(-d[static_cast<std::size_t>(i) * C + c]);
    for (int c = 0; c < C; ++c)
      z[static_cast<std::size_t>(i) * C + c] = std::exp(-d[static_cast<std::size_t>(i) * C + c]) / denom;
  }
  return z;
}

/// Class means of rows of f:[S,M] grouped by labels (values in [0,n)).
inline std::vector<double> prototypes(const std::vector<double>& f, int S, int M,
                                      const std::vector<int>& labels, int n) {
  std::vector<double> p(static_cast<std::size_t>(n) * M, 0.0);
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (int s = 0; s < S; ++s) {
    ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(s)])];
    for (int k = 0; k < M; ++k)
      p[static_cast<std::size_t>(labels[static_cast<std::size_t>(s)]) * M + k] += f[static_cast<std::size_t>(s) * M + k];
  }
  for (int c = 0; c < n; ++c)
    for (int k = 0; k < M; ++k) p[static_cast<std::size_t>(c) * M + k] /= static_cast<double>(count[static_cast<std::size_t>(c)]);
  return p;
}

/// One step of soft k-means refinement: supervised rows use hard one-hot
/// weights, unlabeled rows use their soft assignments z:[U,n].
inline std::vector<double> refined_prototypes(const std::vector<double>& fs, int S,
                                              const std::vector<int>& labels,
                                              const std::vector<double>& fu, int U,
                                              const std::vector<double>& z, int n, int M) {
  std::vector<double> p(static_cast<std::size_t>(n) * M, 0.0);
  for (int c = 0; c < n; ++c) {
    double denom = 0.0;
    for (int s = 0; s < S; ++s)
      if (labels[static_cast<std::size_t>(s)] == c) {
        denom += 1.0;
        for (int k = 0; k < M; ++k) p[static_cast<std::size_t>(c) * M + k] += fs[static_cast<std::size_t>(s) * M + k];
      }
    for (int u = 0; u < U; ++u) {
      const double zc = z[static_cast<std::size_t>(u) * n + c];
      denom += zc;
      for (int k = 0; k < M; ++k) p[static_cast<std::size_t>(c) * M + k] += zc * fu[static_cast<std::size_t>(u) * M + k];
    }
    for (int k = 0; k < M; ++k) p[static_cast<std::size_t>(c) * M + k] /= denom;
  }
  return p;
}

/// General row softmax of raw logits (shifted by the row max, which leaves the
/// value unchanged but keeps very negative logits finite).
inline std::vector<double> row_softmax(const std::vector<double>& logits, int R, int C) {
  std::vector<double> z(logits.size());
  for (int i = 0; i < R; ++i) {
    double mx = logits[static_cast<std::size_t>(i) * C];
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits[static_cast<std::size_t>(i) * C + c]);
    double denom = 0.0;
    for (int c = 0; c < C; ++c)
      denom += std::exp(logits[static_cast<std::size_t>(i) * C + c] - mx);
    for (int c = 0; c < C; ++c)
      z[static_cast<std::size_t>(i) * C + c] =
          std::exp(logits[static_cast<std::size_t>(i) * C + c] - mx) / denom;
  }
  return z;
}

/// Eq. (2) probabilities for targets t:[T,M] against prototypes p:[n,M].
inline std::vector<double> classify(const std::vector<double>& t, int T,
                                    const std::vector<double>& p, int n, int M) {
  return soft_assignment(pairwise_sq(t, T, p, n, M), T, n);
}

/// Eq. (3): mean negative log true-class probability.
inline double pn_loss(const std::vector<double>& t, int T, const std::vector<double>& p, int n,
                      int M, const std::vector<int>& labels) {
  const auto probs = classify(t, T, p, n, M);
  double acc = 0.0;
  for (int j = 0; j < T; ++j)
    acc -= std::log(probs[static_cast<std::size_t>(j) * n + labels[static_cast<std::size_t>(j)]]);
  return acc / T;
}

/// Eq. (5) with a configurable number of refinement rounds.
inline std::vector<double> soft_kmeans(const std::vector<double>& fs, int S,
                                       const std::vector<int>& labels,
                                       const std::vector<double>& fu, int U, int n, int M,
                                       int iterations) {
  std::vector<double> p = prototypes(fs, S, M, labels, n);
  for (int it = 0; it < iterations; ++it) {
    const auto z = soft_assignment(pairwise_sq(fu, U, p, n, M), U, n);
    p = refined_prototypes(fs, S, labels, fu, U, z, n, M);
  }
  return p;
}

/// Eq. (6): soft k-means over n+1 clusters with the catch-all at the origin,
/// assignment logits -d/q_c^2 - (log q_c + log(2 pi)/2), q_{1..n} = 1.
inline std::vector<double> distractor_refine(const std::vector<double>& fs, int S,
                                             const std::vector<int>& labels,
                                             const std::vector<double>& fu, int U, int n, int M,
                                             double q, int iterations) {
  std::vector<double> p(static_cast<std::size_t>(n + 1) * M, 0.0);
  const auto base = prototypes(fs, S, M, labels, n);
  std::copy(base.begin(), base.end(), p.begin());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::acos(-1.0)); // A(1) of Eq. (6)
  for (int it = 0; it < iterations; ++it) {
    const auto d = pairwise_sq(fu, U, p, n + 1, M);
    std::vector<double> logits(d.size());
    for (int u = 0; u < U; ++u)
      for (int c = 0; c <= n; ++c) {
        const double qc = c < n ? 1.0 : q;
        logits[static_cast<std::size_t>(u) * (n + 1) + c] =
            -d[static_cast<std::size_t>(u) * (n + 1) + c] / (qc * qc) -
            (std::log(qc) + half_log_2pi);
      }
    const auto z = row_softmax(logits, U, n + 1);
    // refinement over n+1 clusters: labeled rows never touch the catch-all
    std::vector<double> next(static_cast<std::size_t>(n + 1) * M, 0.0);
    for (int c = 0; c <= n; ++c) {
      double denom = 0.0;
      if (c < n)
        for (int s = 0; s < S; ++s)
          if (labels[static_cast<std::size_t>(s)] == c) {
            denom += 1.0;
            for (int k = 0; k < M; ++k)
              next[static_cast<std::size_t>(c) * M + k] += fs[static_cast<std::size_t>(s) * M + k];
          }
      for (int u = 0; u < U; ++u) {
        const double zc = z[static_cast<std::size_t>(u) * (n + 1) + c];
        denom += zc;
        for (int k = 0; k < M; ++k)
          next[static_cast<std::size_t>(c) * M + k] += zc * fu[static_cast<std::size_t>(u) * M + k];
      }
      for (int k = 0; k < M; ++k) next[static_cast<std::size_t>(c) * M + k] /= denom;
    }
    p = std::move(next);
  }
  return p;
}

/// Eq. (7): distances divided by their row mean; all-zero rows map to ones.
inline std::vector<double> normalized_dist(const std::vector<double>& d, int R, int C) {
  std::vector<double> out(d.size());
  for (int i = 0; i < R; ++i) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += d[static_cast<std::size_t>(i) * C + c];
    mean /= C;
    for (int c = 0; c < C; ++c)
      out[static_cast<std::size_t>(i) * C + c] =
          mean > 0.0 ? d[static_cast<std::size_t>(i) * C + c] / mean : 1.0;
  }
  return out;
}

/// Per-class statistics of normalized distances: min, max, variance,
/// skewness, kurtosis (rows < 2 leave the dispersion entries at 0).
inline std::vector<double> mask_stats(const std::vector<double>& dt, int U, int n) {
  std::vector<double> stats(static_cast<std::size_t>(n) * 5, 0.0);
  for (int c = 0; c < n; ++c) {
    double mn = dt[static_cast<std::size_t>(c)], mx = dt[static_cast<std::size_t>(c)];
    double mean = 0.0;
    for (int u = 0; u < U; ++u) {
      const double v = dt[static_cast<std::size_t>(u) * n + c];
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      mean += v;
    }
    mean /= U;
    stats[static_cast<std::size_t>(c) * 5 + 0] = mn;
    stats[static_cast<std::size_t>(c) * 5 + 1] = mx;
    if (U >= 2) {
      double m2 = 0.0, m3 = 0.0, m4 = 0.0;
      for (int u = 0; u < U; ++u) {
        const double x = dt[static_cast<std::size_t>(u) * n + c] - mean;
        m2 += x * x;
        m3 += x * x * x;
        m4 += x * x * x * x;
      }
      m2 /= U;
      m3 /= U;
      m4 /= U;
      stats[static_cast<std::size_t>(c) * 5 + 2] = m2;
      stats[static_cast<std::size_t>(c) * 5 + 3] = m3 * std::pow(m2 + 1e-12, -1.5);
      stats[static_cast<std::size_t>(c) * 5 + 4] = m4 * std::pow(m2 + 1e-12, -2.0);
    }
  }
  return stats;
}

inline double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Eq. (8): full mask refinement including the statistics network, evaluated
/// with plain loops from the network's raw weight vectors.
inline std::vector<double> mask_refine(const std::vector<double>& fs, int S,
                                       const std::vector<int>& labels,
                                       const std::vector<double>& fu, int U, int n, int M,
                                       const std::vector<double>& w1, const std::vector<double>& b1,
                                       const std::vector<double>& w2, const std::vector<double>& b2,
                                       int hidden, int iterations) {
  std::vector<double> p = prototypes(fs, S, M, labels, n);
  for (int it = 0; it < iterations; ++it) {
    const auto d = pairwise_sq(fu, U, p, n, M);
    const auto dt = normalized_dist(d, U, n);
    const auto stats = mask_stats(dt, U, n);
    // dense(5->hidden) -> tanh -> dense(hidden->2)
    std::vector<double> beta(static_cast<std::size_t>(n)), gamma(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
      std::vector<double> h(static_cast<std::size_t>(hidden));
      for (int j = 0; j < hidden; ++j) {
        double acc = b1[static_cast<std::size_t>(j)];
        for (int i = 0; i < 5; ++i)
          acc += stats[static_cast<std::size_t>(c) * 5 + i] * w1[static_cast<std::size_t>(j) * 5 + i];
        h[static_cast<std::size_t>(j)] = std::tanh(acc);
      }
      double out[2];
      for (int o = 0; o < 2; ++o) {
        double acc = b2[static_cast<std::size_t>(o)];
        for (int j = 0; j < hidden; ++j)
          acc += h[static_cast<std::size_t>(j)] * w2[static_cast<std::size_t>(o) * hidden + j];
        out[o] = acc;
      }
      beta[static_cast<std::size_t>(c)] = out[0];
      gamma[static_cast<std::size_t>(c)] = softplus_scalar(out[1]);
    }
    const auto z = soft_assignment(d, U, n);
    std::vector<double> zm(z.size());
    for (int u = 0; u < U; ++u)
      for (int c = 0; c < n; ++c) {
        const double m = 1.0 / (1.0 + std::exp(gamma[static_cast<std::size_t>(c)] *
                                               (dt[static_cast<std::size_t>(u) * n + c] -
                                                beta[static_cast<std::size_t>(c)])));
        zm[static_cast<std::size_t>(u) * n + c] = z[static_cast<std::size_t>(u) * n + c] * m;
      }
    p = refined_prototypes(fs, S, labels, fu, U, zm, n, M);
  }
  return p;
}

/// L_RW: round-trip landing matrix and its mean cross-entropy against the
/// identity.
inline double rw_loss(const std::vector<double>& p, int n, const std::vector<double>& fu, int U,
                      int M, int walk_length) {
  auto neg = [](std::vector<double> v) {
    for (auto& x : v) x = -x;
    return v;
  };
  const auto t_pu = row_softmax(neg(pairwise_sq(p, n, fu, U, M)), n, U);
  const auto t_up = row_softmax(neg(pairwise_sq(fu, U, p, n, M)), U, n);
  std::vector<double> landing = t_pu; // [n, U]
  if (walk_length > 0) {
    auto logits = neg(pairwise_sq(fu, U, fu, U, M));
    for (int u = 0; u < U; ++u) logits[static_cast<std::size_t>(u) * U + u] = -1e30;
    const auto t_uu = row_softmax(logits, U, U);
    for (int stepi = 0; stepi < walk_length; ++stepi) {
      std::vector<double> next(static_cast<std::size_t>(n) * U, 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < U; ++j) {
          double acc = 0.0;
          for (int k = 0; k < U; ++k)
            acc += landing[static_cast<std::size_t>(i) * U + k] *
                   t_uu[static_cast<std::size_t>(k) * U + j];
          next[static_cast<std::size_t>(i) * U + j] = acc;
        }
      landing = std::move(next);
    }
  }
  double loss = 0.0;
  for (int c = 0; c < n; ++c) {
    double diag = 0.0;
    for (int k = 0; k < U; ++k)
      diag += landing[static_cast<std::size_t>(c) * U + k] * t_up[static_cast<std::size_t>(k) * n + c];
    loss -= std::log(diag);
  }
  return loss / n;
}

/// Nearest-centroid classifier in raw pixel space: fits per-class mean images
/// on train_idx and reports accuracy over eval_idx. Dataset must expose
/// images/labels like fewshot::LabeledDataset.
template <class Dataset>
double centroid_pixel_accuracy(const Dataset& ds, const std::vector<int>& train_idx,
                               const std::vector<int>& eval_idx) {
  const std::size_t dim = ds.images.at(0).size();
  const int n_classes = static_cast<int>(ds.class_names.size());
  std::vector<std::vector<double>> centroid(static_cast<std::size_t>(n_classes),
                                            std::vector<double>(dim, 0.0));
  std::vector<int> count(static_cast<std::size_t>(n_classes), 0);
  for (int idx : train_idx) {
    const int c = ds.labels[static_cast<std::size_t>(idx)];
    ++count[static_cast<std::size_t>(c)];
    for (std::size_t k = 0; k < dim; ++k)
      centroid[static_cast<std::size_t>(c)][k] +=
          static_cast<double>(ds.images[static_cast<std::size_t>(idx)][k]);
  }
  for (int c = 0; c < n_classes; ++c)
    if (count[static_cast<std::size_t>(c)] > 0)
      for (auto& v : centroid[static_cast<std::size_t>(c)]) v /= count[static_cast<std::size_t>(c)];
  int hits = 0;
  for (int idx : eval_idx) {
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(ds.images[static_cast<std::size_t>(idx)][k]) -
                            centroid[static_cast<std::size_t>(c)][k];
        d += diff * diff;
      }
      if (best < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    if (best == ds.labels[static_cast<std::size_t>(idx)]) ++hits;
  }
  return eval_idx.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(eval_idx.size());
}

}  // namespace oracles
