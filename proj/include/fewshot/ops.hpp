/**
 * @file ops.hpp
 * @brief Differentiable primitive operations over fewshot::Tensor.
 *
 * Each op validates shapes, computes the forward value, and registers a
 * backward closure that scatters the output gradient into its parents.
 * Convolution and dense layers route their inner products through Eigen;
 * everything else is written directly against the flat buffers.
 */
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

template <class T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenRowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenRowMat<T>>;

namespace detail {

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

template <class T>
void check_matrix(const char* op, const Tensor<T>& t) {
  if (t.ndim() != 2)
    throw TensorError(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (matching shapes).
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_op<T>("add", a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& self) {
                              if (ai->requires_grad) detail::accumulate(*ai, self.grad);
                              if (bi->requires_grad) detail::accumulate(*bi, self.grad);
                            });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_op<T>("sub", a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& self) {
                              if (ai->requires_grad) detail::accumulate(*ai, self.grad);
                              if (bi->requires_grad) {
                                bi->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  bi->grad[i] -= self.grad[i];
                              }
                            });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& self) {
                              if (ai->requires_grad) {
                                ai->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  ai->grad[i] += self.grad[i] * bi->data[i];
                              }
                              if (bi->requires_grad) {
                                bi->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  bi->grad[i] += self.grad[i] * ai->data[i];
                              }
                            });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("div", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_op<T>("div", a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& self) {
                              if (ai->requires_grad) {
                                ai->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  ai->grad[i] += self.grad[i] / bi->data[i];
                              }
                              if (bi->requires_grad) {
                                bi->ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  bi->grad[i] -= self.grad[i] * ai->data[i] /
                                                 (bi->data[i] * bi->data[i]);
                              }
                            });
}

// ---------------------------------------------------------------------------
// Scalar-constant and unary ops.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto ai = a.impl();
  return detail::make_op<T>("scale", a.shape(), std::move(out), {a},
                            [ai, c](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                ai->grad[i] += self.grad[i] * c;
                            });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  auto ai = a.impl();
  return detail::make_op<T>("add_scalar", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) { detail::accumulate(*ai, self.grad); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  auto ai = a.impl();
  return detail::make_op<T>("exp", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                ai->grad[i] += self.grad[i] * self.data[i];
                            });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  auto ai = a.impl();
  return detail::make_op<T>("log", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                ai->grad[i] += self.grad[i] / ai->data[i];
                            });
}

/// x^p for constant p; inputs must be positive when p is fractional.
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(a.data()[i], p);
  auto ai = a.impl();
  return detail::make_op<T>("pow_scalar", a.shape(), std::move(out), {a},
                            [ai, p](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                ai->grad[i] += self.grad[i] * p *
                                               std::pow(ai->data[i], p - T(1));
                            });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  auto ai = a.impl();
  return detail::make_op<T>("relu", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                if (ai->data[i] > T(0)) ai->grad[i] += self.grad[i];
                            });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T x = a.data()[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
  }
  auto ai = a.impl();
  return detail::make_op<T>("sigmoid", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                T y = self.data[i];
                                ai->grad[i] += self.grad[i] * y * (T(1) - y);
                              }
                            });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  auto ai = a.impl();
  return detail::make_op<T>("tanh", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                T y = self.data[i];
                                ai->grad[i] += self.grad[i] * (T(1) - y * y);
                              }
                            });
}

/// log(1 + e^x), evaluated in the overflow-safe branch form.
template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T x = a.data()[i];
    out[i] = x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  auto ai = a.impl();
  return detail::make_op<T>("softplus", a.shape(), std::move(out), {a},
                            [ai](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                T x = ai->data[i];
                                T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                                : std::exp(x) / (T(1) + std::exp(x));
                                ai->grad[i] += self.grad[i] * s;
                              }
                            });
}

/// Constant copy detached from the graph.
template <class T>
Tensor<T> detach(const Tensor<T>& a) {
  return Tensor<T>::from_data(a.shape(), std::vector<T>(a.data().begin(), a.data().end()));
}

/// Copy with a new shape of equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw TensorError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto ai = a.impl();
  return detail::make_op<T>("reshape", shape, std::move(out), {a},
                            [ai](TensorImpl<T>& self) { detail::accumulate(*ai, self.grad); });
}

// ---------------------------------------------------------------------------
// Matrix ops.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matrix("matmul", a);
  detail::check_matrix("matmul", b);
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw TensorError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  ConstMatMap<T> A(a.data_ptr(), m, k), B(b.data_ptr(), k, n);
  MatMap<T>(out.data(), m, n).noalias() = A * B;
  auto ai = a.impl(), bi = b.impl();
  return detail::make_op<T>(
      "matmul", {m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](TensorImpl<T>& self) {
        ConstMatMap<T> G(self.grad.data(), m, n);
        if (ai->requires_grad) {
          ai->ensure_grad();
          ConstMatMap<T> B(bi->data.data(), k, n);
          MatMap<T>(ai->grad.data(), m, k).noalias() += G * B.transpose();
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          ConstMatMap<T> A(ai->data.data(), m, k);
          MatMap<T>(bi->grad.data(), k, n).noalias() += A.transpose() * G;
        }
      });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::check_matrix("transpose", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a.data()[static_cast<std::size_t>(i) * c + j];
  auto ai = a.impl();
  return detail::make_op<T>("transpose", {c, r}, std::move(out), {a},
                            [ai, r, c](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (int i = 0; i < r; ++i)
                                for (int j = 0; j < c; ++j)
                                  ai->grad[static_cast<std::size_t>(i) * c + j] +=
                                      self.grad[static_cast<std::size_t>(j) * r + i];
                            });
}

/// Dense layer: x[N,in] * W[out,in]^T + b[out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::check_matrix("linear", x);
  detail::check_matrix("linear", weight);
  const int n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in)
    throw TensorError("linear: input features " + std::to_string(in) +
                      " do not match weight shape " + shape_str(weight.shape()));
  if (bias.ndim() != 1 || bias.dim(0) != out_f)
    throw TensorError("linear: bias shape " + shape_str(bias.shape()) + " does not match " +
                      std::to_string(out_f) + " outputs");
  std::vector<T> out(static_cast<std::size_t>(n) * out_f);
  ConstMatMap<T> X(x.data_ptr(), n, in), W(weight.data_ptr(), out_f, in);
  MatMap<T> Y(out.data(), n, out_f);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data_ptr(), out_f);
  auto xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  return detail::make_op<T>(
      "linear", {n, out_f}, std::move(out), {x, weight, bias},
      [xi, wi, bi, n, in, out_f](TensorImpl<T>& self) {
        ConstMatMap<T> G(self.grad.data(), n, out_f);
        if (xi->requires_grad) {
          xi->ensure_grad();
          ConstMatMap<T> W(wi->data.data(), out_f, in);
          MatMap<T>(xi->grad.data(), n, in).noalias() += G * W;
        }
        if (wi->requires_grad) {
          wi->ensure_grad();
          ConstMatMap<T> X(xi->data.data(), n, in);
          MatMap<T>(wi->grad.data(), out_f, in).noalias() += G.transpose() * X;
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_f; ++j) bi->grad[j] += G(i, j);
        }
      });
}

// ---------------------------------------------------------------------------
// Structural ops: slicing along axis 0, concatenation, column assembly.
// ---------------------------------------------------------------------------

/// Rows [from, to) along the leading axis, any rank.
template <class T>
Tensor<T> slice_axis0(const Tensor<T>& a, int from, int to) {
  if (a.ndim() < 1 || from < 0 || to > a.dim(0) || from > to)
    throw TensorError("slice_axis0: range [" + std::to_string(from) + "," + std::to_string(to) +
                      ") invalid for shape " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = to - from;
  const std::size_t row = a.numel() / static_cast<std::size_t>(std::max(a.dim(0), 1));
  std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(row * from),
                     a.data().begin() + static_cast<std::ptrdiff_t>(row * to));
  auto ai = a.impl();
  return detail::make_op<T>("slice_axis0", out_shape, std::move(out), {a},
                            [ai, row, from](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              const std::size_t off = row * static_cast<std::size_t>(from);
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                ai->grad[off + i] += self.grad[i];
                            });
}

/// Concatenation along the leading axis; trailing extents must agree.
template <class T>
Tensor<T> concat_axis0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw TensorError("concat_axis0: no inputs");
  Shape out_shape = parts[0].shape();
  std::size_t total_rows = 0;
  for (const auto& p : parts) {
    Shape tail = p.shape();
    if (tail.empty()) throw TensorError("concat_axis0: zero-rank input");
    int rows = tail[0];
    tail[0] = out_shape[0];
    if (tail != out_shape)
      throw TensorError("concat_axis0: trailing extents differ, " + shape_str(p.shape()) +
                        " vs " + shape_str(out_shape));
    total_rows += static_cast<std::size_t>(rows);
  }
  out_shape[0] = static_cast<int>(total_rows);
  std::vector<T> out;
  out.reserve(shape_numel(out_shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    sizes.push_back(p.numel());
  }
  return detail::make_op<T>("concat_axis0", out_shape, std::move(out), parts,
                            [impls, sizes](TensorImpl<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < impls.size(); ++k) {
                                if (impls[k]->requires_grad) {
                                  impls[k]->ensure_grad();
                                  for (std::size_t i = 0; i < sizes[k]; ++i)
                                    impls[k]->grad[i] += self.grad[off + i];
                                }
                                off += sizes[k];
                              }
                            });
}

/// Stack length-n vectors as the columns of an [n, k] matrix.
template <class T>
Tensor<T> stack_cols(const std::vector<Tensor<T>>& cols) {
  if (cols.empty()) throw TensorError("stack_cols: no inputs");
  const int n = cols[0].dim(0);
  const int k = static_cast<int>(cols.size());
  for (const auto& c : cols)
    if (c.ndim() != 1 || c.dim(0) != n)
      throw TensorError("stack_cols: expected length-" + std::to_string(n) + " vectors, got " +
                        shape_str(c.shape()));
  std::vector<T> out(static_cast<std::size_t>(n) * k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * k + j] = cols[static_cast<std::size_t>(j)].data()[i];
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& c : cols) impls.push_back(c.impl());
  return detail::make_op<T>("stack_cols", {n, k}, std::move(out), cols,
                            [impls, n, k](TensorImpl<T>& self) {
                              for (int j = 0; j < k; ++j) {
                                auto& ci = impls[static_cast<std::size_t>(j)];
                                if (!ci->requires_grad) continue;
                                ci->ensure_grad();
                                for (int i = 0; i < n; ++i)
                                  ci->grad[i] += self.grad[static_cast<std::size_t>(i) * k + j];
                              }
                            });
}

/// Column j of an [R, C] matrix as a length-R vector.
template <class T>
Tensor<T> select_col(const Tensor<T>& a, int j) {
  detail::check_matrix("select_col", a);
  const int r = a.dim(0), c = a.dim(1);
  if (j < 0 || j >= c)
    throw TensorError("select_col: column " + std::to_string(j) + " out of range for " +
                      shape_str(a.shape()));
  std::vector<T> out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out[static_cast<std::size_t>(i)] = a.data()[static_cast<std::size_t>(i) * c + j];
  auto ai = a.impl();
  return detail::make_op<T>("select_col", {r}, std::move(out), {a},
                            [ai, c, j](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                ai->grad[i * c + j] += self.grad[i];
                            });
}

// ---------------------------------------------------------------------------
// Row/column broadcast ops on [R, C] matrices.
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void check_rowvec(const char* op, const Tensor<T>& mat, const Tensor<T>& vec) {
  check_matrix(op, mat);
  if (vec.ndim() != 1 || vec.dim(0) != mat.dim(1))
    throw TensorError(std::string(op) + ": vector " + shape_str(vec.shape()) +
                      " does not match columns of " + shape_str(mat.shape()));
}
}  // namespace detail

template <class T>
Tensor<T> add_rowvec(const Tensor<T>& mat, const Tensor<T>& vec) {
  detail::check_rowvec("add_rowvec", mat, vec);
  const int r = mat.dim(0), c = mat.dim(1);
  std::vector<T> out(mat.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = mat.data()[static_cast<std::size_t>(i) * c + j] + vec.data()[static_cast<std::size_t>(j)];
  auto mi = mat.impl(), vi = vec.impl();
  return detail::make_op<T>("add_rowvec", mat.shape(), std::move(out), {mat, vec},
                            [mi, vi, r, c](TensorImpl<T>& self) {
                              if (mi->requires_grad) detail::accumulate(*mi, self.grad);
                              if (vi->requires_grad) {
                                vi->ensure_grad();
                                for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < c; ++j)
                                    vi->grad[static_cast<std::size_t>(j)] +=
                                        self.grad[static_cast<std::size_t>(i) * c + j];
                              }
                            });
}

template <class T>
Tensor<T> sub_rowvec(const Tensor<T>& mat, const Tensor<T>& vec) {
  return add_rowvec(mat, neg(vec));
}

template <class T>
Tensor<T> mul_rowvec(const Tensor<T>& mat, const Tensor<T>& vec) {
  detail::check_rowvec("mul_rowvec", mat, vec);
  const int r = mat.dim(0), c = mat.dim(1);
  std::vector<T> out(mat.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = mat.data()[static_cast<std::size_t>(i) * c + j] * vec.data()[static_cast<std::size_t>(j)];
  auto mi = mat.impl(), vi = vec.impl();
  return detail::make_op<T>("mul_rowvec", mat.shape(), std::move(out), {mat, vec},
                            [mi, vi, r, c](TensorImpl<T>& self) {
                              if (mi->requires_grad) {
                                mi->ensure_grad();
                                for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < c; ++j)
                                    mi->grad[static_cast<std::size_t>(i) * c + j] +=
                                        self.grad[static_cast<std::size_t>(i) * c + j] * vi->data[static_cast<std::size_t>(j)];
                              }
                              if (vi->requires_grad) {
                                vi->ensure_grad();
                                for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < c; ++j)
                                    vi->grad[static_cast<std::size_t>(j)] +=
                                        self.grad[static_cast<std::size_t>(i) * c + j] * mi->data[static_cast<std::size_t>(i) * c + j];
                              }
                            });
}

/// Divides row i of mat[R,C] by v[i]; used for centroid denominators and
/// per-row normalizations.
template <class T>
Tensor<T> div_rows_by_vec(const Tensor<T>& mat, const Tensor<T>& vec) {
  detail::check_matrix("div_rows_by_vec", mat);
  if (vec.ndim() != 1 || vec.dim(0) != mat.dim(0))
    throw TensorError("div_rows_by_vec: vector " + shape_str(vec.shape()) +
                      " does not match rows of " + shape_str(mat.shape()));
  const int r = mat.dim(0), c = mat.dim(1);
  std::vector<T> out(mat.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = mat.data()[static_cast<std::size_t>(i) * c + j] / vec.data()[static_cast<std::size_t>(i)];
  auto mi = mat.impl(), vi = vec.impl();
  return detail::make_op<T>(
      "div_rows_by_vec", mat.shape(), std::move(out), {mat, vec},
      [mi, vi, r, c](TensorImpl<T>& self) {
        if (mi->requires_grad) {
          mi->ensure_grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              mi->grad[static_cast<std::size_t>(i) * c + j] +=
                  self.grad[static_cast<std::size_t>(i) * c + j] / vi->data[static_cast<std::size_t>(i)];
        }
        if (vi->requires_grad) {
          vi->ensure_grad();
          for (int i = 0; i < r; ++i) {
            T acc = T(0);
            for (int j = 0; j < c; ++j)
              acc += self.grad[static_cast<std::size_t>(i) * c + j] * mi->data[static_cast<std::size_t>(i) * c + j];
            vi->grad[static_cast<std::size_t>(i)] -= acc / (vi->data[static_cast<std::size_t>(i)] * vi->data[static_cast<std::size_t>(i)]);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  auto ai = a.impl();
  return detail::make_op<T>("sum_all", {1}, {acc}, {a}, [ai](TensorImpl<T>& self) {
    ai->ensure_grad();
    for (auto& g : ai->grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
  if (a.numel() == 0) throw TensorError("mean_all: empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> colwise_sum(const Tensor<T>& a) {
  detail::check_matrix("colwise_sum", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += a.data()[static_cast<std::size_t>(i) * c + j];
  auto ai = a.impl();
  return detail::make_op<T>("colwise_sum", {c}, std::move(out), {a},
                            [ai, r, c](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (int i = 0; i < r; ++i)
                                for (int j = 0; j < c; ++j)
                                  ai->grad[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j)];
                            });
}

template <class T>
Tensor<T> colwise_mean(const Tensor<T>& a) {
  detail::check_matrix("colwise_mean", a);
  if (a.dim(0) == 0) throw TensorError("colwise_mean: zero rows");
  return scale(colwise_sum(a), T(1) / static_cast<T>(a.dim(0)));
}

namespace detail {
// Shared min/max column reduction. The first extreme element in row order
// receives the gradient.
template <class T, class Cmp>
Tensor<T> colwise_extreme(const char* op, const Tensor<T>& a, Cmp better) {
  check_matrix(op, a);
  const int r = a.dim(0), c = a.dim(1);
  if (r == 0) throw TensorError(std::string(op) + ": zero rows");
  std::vector<T> out(static_cast<std::size_t>(c));
  std::vector<int> arg(static_cast<std::size_t>(c), 0);
  for (int j = 0; j < c; ++j) {
    T best = a.data()[static_cast<std::size_t>(j)];
    for (int i = 1; i < r; ++i) {
      T v = a.data()[static_cast<std::size_t>(i) * c + j];
      if (better(v, best)) {
        best = v;
        arg[static_cast<std::size_t>(j)] = i;
      }
    }
    out[static_cast<std::size_t>(j)] = best;
  }
  auto ai = a.impl();
  return make_op<T>(op, {c}, std::move(out), {a}, [ai, arg, c](TensorImpl<T>& self) {
    ai->ensure_grad();
    for (int j = 0; j < c; ++j)
      ai->grad[static_cast<std::size_t>(arg[static_cast<std::size_t>(j)]) * c + j] += self.grad[static_cast<std::size_t>(j)];
  });
}
}  // namespace detail

template <class T>
Tensor<T> colwise_min(const Tensor<T>& a) {
  return detail::colwise_extreme("colwise_min", a, [](T v, T best) { return v < best; });
}

template <class T>
Tensor<T> colwise_max(const Tensor<T>& a) {
  return detail::colwise_extreme("colwise_max", a, [](T v, T best) { return v > best; });
}

// ---------------------------------------------------------------------------
// Softmax family (over the last axis of a 2-d tensor).
// ---------------------------------------------------------------------------

/// Row softmax, stabilized by max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  detail::check_matrix("softmax_rows", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.numel());
  for (int i = 0; i < r; ++i) {
    const T* row = a.data_ptr() + static_cast<std::size_t>(i) * c;
    T* orow = out.data() + static_cast<std::size_t>(i) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= denom;
  }
  auto ai = a.impl();
  return detail::make_op<T>("softmax_rows", a.shape(), std::move(out), {a},
                            [ai, r, c](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (int i = 0; i < r; ++i) {
                                const T* y = self.data.data() + static_cast<std::size_t>(i) * c;
                                const T* g = self.grad.data() + static_cast<std::size_t>(i) * c;
                                T dot = T(0);
                                for (int j = 0; j < c; ++j) dot += y[j] * g[j];
                                T* d = ai->grad.data() + static_cast<std::size_t>(i) * c;
                                for (int j = 0; j < c; ++j) d[j] += y[j] * (g[j] - dot);
                              }
                            });
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  detail::check_matrix("log_softmax_rows", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.numel());
  for (int i = 0; i < r; ++i) {
    const T* row = a.data_ptr() + static_cast<std::size_t>(i) * c;
    T* orow = out.data() + static_cast<std::size_t>(i) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    T lse = mx + std::log(denom);
    for (int j = 0; j < c; ++j) orow[j] = row[j] - lse;
  }
  auto ai = a.impl();
  return detail::make_op<T>("log_softmax_rows", a.shape(), std::move(out), {a},
                            [ai, r, c](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (int i = 0; i < r; ++i) {
                                const T* y = self.data.data() + static_cast<std::size_t>(i) * c;
                                const T* g = self.grad.data() + static_cast<std::size_t>(i) * c;
                                T gsum = T(0);
                                for (int j = 0; j < c; ++j) gsum += g[j];
                                T* d = ai->grad.data() + static_cast<std::size_t>(i) * c;
                                for (int j = 0; j < c; ++j) d[j] += g[j] - std::exp(y[j]) * gsum;
                              }
                            });
}

// ---------------------------------------------------------------------------
// Convolution, pooling, batch normalization.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, int C, int H, int W, int KH, int KW, int stride, int pad, int OH, int OW,
            T* col) {
  // col layout: [C*KH*KW, OH*OW]
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < KH; ++kh) {
      for (int kw = 0; kw < KW; ++kw) {
        T* dst = col + (static_cast<std::size_t>(c) * KH * KW + static_cast<std::size_t>(kh) * KW + kw) *
                           (static_cast<std::size_t>(OH) * OW);
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + OW, T(0));
            dst += OW;
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          if (stride == 1) {
            const int iw0 = -pad + kw;
            int ow = 0;
            for (; ow < OW && iw0 + ow < 0; ++ow) dst[ow] = T(0);
            const int run_end = std::min(OW, W - iw0);
            if (run_end > ow) std::memcpy(dst + ow, src + iw0 + ow, static_cast<std::size_t>(run_end - ow) * sizeof(T));
            for (ow = std::max(ow, run_end); ow < OW; ++ow) dst[ow] = T(0);
          } else {
            for (int ow = 0; ow < OW; ++ow) {
              const int iw = ow * stride - pad + kw;
              dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
            }
          }
          dst += OW;
        }
      }
    }
  }
}

template <class T>
void col2im_accumulate(const T* col, int C, int H, int W, int KH, int KW, int stride, int pad,
                       int OH, int OW, T* dx) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < KH; ++kh) {
      for (int kw = 0; kw < KW; ++kw) {
        const T* src = col + (static_cast<std::size_t>(c) * KH * KW + static_cast<std::size_t>(kh) * KW + kw) *
                             (static_cast<std::size_t>(OH) * OW);
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih >= 0 && ih < H) {
            T* drow = dx + (static_cast<std::size_t>(c) * H + ih) * W;
            for (int ow = 0; ow < OW; ++ow) {
              const int iw = ow * stride - pad + kw;
              if (iw >= 0 && iw < W) drow[iw] += src[static_cast<std::size_t>(oh) * OW + ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-d cross-correlation of input[N,C,H,W] with weight[F,C,KH,KW].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride = 1, int padding = 0) {
  if (input.ndim() != 4)
    throw TensorError("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (weight.ndim() != 4)
    throw TensorError("conv2d: weight must be [F,C,KH,KW], got " + shape_str(weight.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int F = weight.dim(0), WC = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  if (C != WC)
    throw TensorError("conv2d: input channels " + std::to_string(C) +
                      " do not match weight channels " + std::to_string(WC));
  if (stride < 1) throw TensorError("conv2d: stride must be >= 1");
  if (H + 2 * padding < KH || W + 2 * padding < KW)
    throw TensorError("conv2d: kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                      " exceeds padded input " + std::to_string(H + 2 * padding) + "x" +
                      std::to_string(W + 2 * padding));
  const int OH = (H + 2 * padding - KH) / stride + 1;
  const int OW = (W + 2 * padding - KW) / stride + 1;
  const int CKK = C * KH * KW;
  const std::size_t ohw = static_cast<std::size_t>(OH) * OW;

  std::vector<T> out(static_cast<std::size_t>(N) * F * ohw);
  std::vector<T> col(static_cast<std::size_t>(CKK) * ohw);
  ConstMatMap<T> Wm(weight.data_ptr(), F, CKK);
  for (int n = 0; n < N; ++n) {
    detail::im2col(input.data_ptr() + static_cast<std::size_t>(n) * C * H * W, C, H, W, KH, KW,
                   stride, padding, OH, OW, col.data());
    MatMap<T>(out.data() + static_cast<std::size_t>(n) * F * ohw, F, static_cast<int>(ohw)).noalias() =
        Wm * ConstMatMap<T>(col.data(), CKK, static_cast<int>(ohw));
  }

  auto xi = input.impl(), wi = weight.impl();
  return detail::make_op<T>(
      "conv2d", {N, F, OH, OW}, std::move(out), {input, weight},
      [xi, wi, N, C, H, W, F, KH, KW, stride, padding, OH, OW, CKK, ohw](TensorImpl<T>& self) {
        std::vector<T> col(static_cast<std::size_t>(CKK) * ohw);
        std::vector<T> dcol(static_cast<std::size_t>(CKK) * ohw);
        if (xi->requires_grad) xi->ensure_grad();
        if (wi->requires_grad) wi->ensure_grad();
        ConstMatMap<T> Wm(wi->data.data(), F, CKK);
        for (int n = 0; n < N; ++n) {
          ConstMatMap<T> G(self.grad.data() + static_cast<std::size_t>(n) * F * ohw, F,
                           static_cast<int>(ohw));
          if (wi->requires_grad) {
            detail::im2col(xi->data.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, KH,
                           KW, stride, padding, OH, OW, col.data());
            MatMap<T>(wi->grad.data(), F, CKK).noalias() +=
                G * ConstMatMap<T>(col.data(), CKK, static_cast<int>(ohw)).transpose();
          }
          if (xi->requires_grad) {
            MatMap<T>(dcol.data(), CKK, static_cast<int>(ohw)).noalias() = Wm.transpose() * G;
            detail::col2im_accumulate(dcol.data(), C, H, W, KH, KW, stride, padding, OH, OW,
                                      xi->grad.data() + static_cast<std::size_t>(n) * C * H * W);
          }
        }
      });
}

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
/// On ties the first maximal element in row-major order takes the gradient.
template <class T>
Tensor<T> max_pool2x2(const Tensor<T>& input) {
  if (input.ndim() != 4)
    throw TensorError("max_pool2x2: input must be [N,C,H,W], got " + shape_str(input.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int OH = H / 2, OW = W / 2;
  if (OH < 1 || OW < 1)
    throw TensorError("max_pool2x2: spatial extent " + std::to_string(H) + "x" +
                      std::to_string(W) + " too small to pool");
  std::vector<T> out(static_cast<std::size_t>(N) * C * OH * OW);
  std::vector<std::int64_t> argmax(out.size());
  const T* x = input.data_ptr();
  std::size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t plane = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++o) {
          std::size_t base = plane + static_cast<std::size_t>(2 * oh) * W + 2 * ow;
          std::size_t best_i = base;
          T best = x[base];
          const std::array<std::size_t, 3> rest = {base + 1, base + W, base + W + 1};
          for (std::size_t idx : rest)
            if (x[idx] > best) {
              best = x[idx];
              best_i = idx;
            }
          out[o] = best;
          argmax[o] = static_cast<std::int64_t>(best_i);
        }
    }
  auto xi = input.impl();
  return detail::make_op<T>("max_pool2x2", {N, C, OH, OW}, std::move(out), {input},
                            [xi, argmax](TensorImpl<T>& self) {
                              xi->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                xi->grad[static_cast<std::size_t>(argmax[i])] += self.grad[i];
                            });
}

/// Training-mode batch normalization over [N,C,H,W]; per-channel statistics
/// are computed from the batch and written to out_mean / out_var (biased) for
/// the caller's running-average update.
template <class T>
Tensor<T> batch_norm_train(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           T eps, std::vector<T>* out_mean = nullptr,
                           std::vector<T>* out_var = nullptr) {
  if (input.ndim() != 4)
    throw TensorError("batch_norm: input must be [N,C,H,W], got " + shape_str(input.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
    throw TensorError("batch_norm: gamma/beta must be length-" + std::to_string(C) + " vectors");
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const std::size_t m = static_cast<std::size_t>(N) * hw;

  std::vector<T> mean(static_cast<std::size_t>(C), T(0)), var(static_cast<std::size_t>(C), T(0));
  const T* x = input.data_ptr();
  for (int c = 0; c < C; ++c) {
    T acc = T(0);
    for (int n = 0; n < N; ++n) {
      const T* p = x + ((static_cast<std::size_t>(n) * C + c) * hw);
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    }
    mean[static_cast<std::size_t>(c)] = acc / static_cast<T>(m);
  }
  for (int c = 0; c < C; ++c) {
    T acc = T(0);
    const T mu = mean[static_cast<std::size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const T* p = x + ((static_cast<std::size_t>(n) * C + c) * hw);
      for (std::size_t i = 0; i < hw; ++i) acc += (p[i] - mu) * (p[i] - mu);
    }
    var[static_cast<std::size_t>(c)] = acc / static_cast<T>(m);
  }
  if (out_mean) *out_mean = mean;
  if (out_var) *out_var = var;

  std::vector<T> invstd(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + eps);

  std::vector<T> xhat(input.numel());
  std::vector<T> out(input.numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
      const T mu = mean[static_cast<std::size_t>(c)], is = invstd[static_cast<std::size_t>(c)];
      const T g = gamma.data()[static_cast<std::size_t>(c)], b = beta.data()[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (x[off + i] - mu) * is;
        out[off + i] = g * xhat[off + i] + b;
      }
    }

  auto xi = input.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_op<T>(
      "batch_norm_train", input.shape(), std::move(out), {input, gamma, beta},
      [xi, gi, bi, N, C, hw, m, xhat = std::move(xhat),
       invstd = std::move(invstd)](TensorImpl<T>& self) {
        for (int c = 0; c < C; ++c) {
          // Per-channel sums of dy and dy*xhat.
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += self.grad[off + i];
              sum_dy_xhat += self.grad[off + i] * xhat[off + i];
            }
          }
          if (gi->requires_grad) {
            gi->ensure_grad();
            gi->grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
          }
          if (bi->requires_grad) {
            bi->ensure_grad();
            bi->grad[static_cast<std::size_t>(c)] += sum_dy;
          }
          if (xi->requires_grad) {
            xi->ensure_grad();
            const T g = gi->data[static_cast<std::size_t>(c)], is = invstd[static_cast<std::size_t>(c)];
            const T inv_m = T(1) / static_cast<T>(m);
            for (int n = 0; n < N; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                const T dxhat = self.grad[off + i] * g;
                xi->grad[off + i] += is * (dxhat - inv_m * (g * sum_dy +
                                                           g * sum_dy_xhat * xhat[off + i]));
              }
            }
          }
        }
      });
}

/// Evaluation-mode batch normalization using fixed running statistics.
template <class T>
Tensor<T> batch_norm_eval(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const std::vector<T>& running_mean, const std::vector<T>& running_var,
                          T eps) {
  if (input.ndim() != 4)
    throw TensorError("batch_norm: input must be [N,C,H,W], got " + shape_str(input.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
    throw TensorError("batch_norm: gamma/beta must be length-" + std::to_string(C) + " vectors");
  if (running_mean.size() != static_cast<std::size_t>(C) ||
      running_var.size() != static_cast<std::size_t>(C))
    throw TensorError("batch_norm: running statistics must have length " + std::to_string(C));
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<T> invstd(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
  std::vector<T> out(input.numel());
  const T* x = input.data_ptr();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
      const T mu = running_mean[static_cast<std::size_t>(c)], is = invstd[static_cast<std::size_t>(c)];
      const T g = gamma.data()[static_cast<std::size_t>(c)], b = beta.data()[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = g * (x[off + i] - mu) * is + b;
    }
  auto xi = input.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_op<T>(
      "batch_norm_eval", input.shape(), std::move(out), {input, gamma, beta},
      [xi, gi, bi, N, C, hw, rm = running_mean, invstd = std::move(invstd)](TensorImpl<T>& self) {
        for (int c = 0; c < C; ++c) {
          const T is = invstd[static_cast<std::size_t>(c)], mu = rm[static_cast<std::size_t>(c)];
          const T g = gi->data[static_cast<std::size_t>(c)];
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += self.grad[off + i];
              sum_dy_xhat += self.grad[off + i] * (xi->data[off + i] - mu) * is;
              if (xi->requires_grad) {
                xi->ensure_grad();
                xi->grad[off + i] += self.grad[off + i] * g * is;
              }
            }
          }
          if (gi->requires_grad) {
            gi->ensure_grad();
            gi->grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
          }
          if (bi->requires_grad) {
            bi->ensure_grad();
            bi->grad[static_cast<std::size_t>(c)] += sum_dy;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Distances and pair assembly.
// ---------------------------------------------------------------------------

/// Squared L2 distance between every row of a[P,M] and every row of b[Q,M].
template <class T>
Tensor<T> pairwise_sq_euclidean(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matrix("pairwise_sq_euclidean", a);
  detail::check_matrix("pairwise_sq_euclidean", b);
  const int P = a.dim(0), M = a.dim(1), Q = b.dim(0);
  if (b.dim(1) != M)
    throw TensorError("pairwise_sq_euclidean: feature dimensions differ, " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(P) * Q);
  for (int i = 0; i < P; ++i) {
    const T* ra = a.data_ptr() + static_cast<std::size_t>(i) * M;
    for (int j = 0; j < Q; ++j) {
      const T* rb = b.data_ptr() + static_cast<std::size_t>(j) * M;
      T acc = T(0);
      for (int k = 0; k < M; ++k) {
        const T d = ra[k] - rb[k];
        acc += d * d;
      }
      out[static_cast<std::size_t>(i) * Q + j] = acc;
    }
  }
  auto ai = a.impl(), bi = b.impl();
  return detail::make_op<T>(
      "pairwise_sq_euclidean", {P, Q}, std::move(out), {a, b},
      [ai, bi, P, Q, M](TensorImpl<T>& self) {
        if (ai->requires_grad) ai->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int i = 0; i < P; ++i) {
          const T* ra = ai->data.data() + static_cast<std::size_t>(i) * M;
          for (int j = 0; j < Q; ++j) {
            const T g = self.grad[static_cast<std::size_t>(i) * Q + j];
            if (g == T(0)) continue;
            const T* rb = bi->data.data() + static_cast<std::size_t>(j) * M;
            for (int k = 0; k < M; ++k) {
              const T d = T(2) * (ra[k] - rb[k]) * g;
              if (ai->requires_grad) ai->grad[static_cast<std::size_t>(i) * M + k] += d;
              if (bi->requires_grad) bi->grad[static_cast<std::size_t>(j) * M + k] -= d;
            }
          }
        }
      });
}

/// Channel-wise concatenation of every (prototype, sample) feature-map pair:
/// protos[n,F,h,w] x samples[B,F,h,w] -> [B*n, 2F, h, w], prototype channels
/// first. Pair (j, c) lands at row j*n + c.
template <class T>
Tensor<T> concat_features(const Tensor<T>& protos, const Tensor<T>& samples) {
  if (protos.ndim() != 4 || samples.ndim() != 4)
    throw TensorError("concat_features: expected 4-d feature maps, got " +
                      shape_str(protos.shape()) + " and " + shape_str(samples.shape()));
  const int n = protos.dim(0), F = protos.dim(1), h = protos.dim(2), w = protos.dim(3);
  const int B = samples.dim(0);
  if (samples.dim(1) != F || samples.dim(2) != h || samples.dim(3) != w)
    throw TensorError("concat_features: channel/spatial mismatch, " + shape_str(protos.shape()) +
                      " vs " + shape_str(samples.shape()));
  const std::size_t plane = static_cast<std::size_t>(F) * h * w;
  std::vector<T> out(static_cast<std::size_t>(B) * n * 2 * plane);
  for (int j = 0; j < B; ++j)
    for (int c = 0; c < n; ++c) {
      T* dst = out.data() + (static_cast<std::size_t>(j) * n + c) * 2 * plane;
      std::memcpy(dst, protos.data_ptr() + static_cast<std::size_t>(c) * plane, plane * sizeof(T));
      std::memcpy(dst + plane, samples.data_ptr() + static_cast<std::size_t>(j) * plane,
                  plane * sizeof(T));
    }
  auto pi = protos.impl(), si = samples.impl();
  return detail::make_op<T>(
      "concat_features", {B * n, 2 * F, h, w}, std::move(out), {protos, samples},
      [pi, si, B, n, plane](TensorImpl<T>& self) {
        if (pi->requires_grad) pi->ensure_grad();
        if (si->requires_grad) si->ensure_grad();
        for (int j = 0; j < B; ++j)
          for (int c = 0; c < n; ++c) {
            const T* g = self.grad.data() + (static_cast<std::size_t>(j) * n + c) * 2 * plane;
            if (pi->requires_grad) {
              T* dp = pi->grad.data() + static_cast<std::size_t>(c) * plane;
              for (std::size_t i = 0; i < plane; ++i) dp[i] += g[i];
            }
            if (si->requires_grad) {
              T* ds = si->grad.data() + static_cast<std::size_t>(j) * plane;
              for (std::size_t i = 0; i < plane; ++i) ds[i] += g[plane + i];
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Losses and specialized composites.
// ---------------------------------------------------------------------------

/// Mean of -log_probs[i, labels[i]].
template <class T>
Tensor<T> nll_loss(const Tensor<T>& log_probs, const std::vector<int>& labels) {
  detail::check_matrix("nll_loss", log_probs);
  const int n = log_probs.dim(0), c = log_probs.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw TensorError("nll_loss: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " rows");
  T acc = T(0);
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= c)
      throw TensorError("nll_loss: label out of range");
    acc -= log_probs.data()[static_cast<std::size_t>(i) * c + labels[static_cast<std::size_t>(i)]];
  }
  acc /= static_cast<T>(n);
  auto li = log_probs.impl();
  return detail::make_op<T>("nll_loss", {1}, {acc}, {log_probs},
                            [li, labels, n, c](TensorImpl<T>& self) {
                              li->ensure_grad();
                              const T g = self.grad[0] / static_cast<T>(n);
                              for (int i = 0; i < n; ++i)
                                li->grad[static_cast<std::size_t>(i) * c + labels[static_cast<std::size_t>(i)]] -= g;
                            });
}

/// Mean squared error against a constant target of identical shape.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const std::vector<T>& target) {
  if (pred.numel() != target.size())
    throw TensorError("mse_loss: target length " + std::to_string(target.size()) +
                      " does not match prediction " + shape_str(pred.shape()));
  T acc = T(0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T d = pred.data()[i] - target[i];
    acc += d * d;
  }
  acc /= static_cast<T>(pred.numel());
  auto pi = pred.impl();
  return detail::make_op<T>("mse_loss", {1}, {acc}, {pred}, [pi, target](TensorImpl<T>& self) {
    pi->ensure_grad();
    const T g = T(2) * self.grad[0] / static_cast<T>(target.size());
    for (std::size_t i = 0; i < target.size(); ++i)
      pi->grad[i] += g * (pi->data[i] - target[i]);
  });
}

/// Divides each row by its mean. A row whose mean is zero (all-zero distance
/// row) maps to a row of ones with zero gradient.
template <class T>
Tensor<T> normalize_rows_by_mean(const Tensor<T>& a) {
  detail::check_matrix("normalize_rows_by_mean", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> mu(static_cast<std::size_t>(r), T(0));
  std::vector<T> out(a.numel());
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) mu[static_cast<std::size_t>(i)] += a.data()[static_cast<std::size_t>(i) * c + j];
    mu[static_cast<std::size_t>(i)] /= static_cast<T>(c);
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] =
          mu[static_cast<std::size_t>(i)] <= T(0) ? T(1) : a.data()[static_cast<std::size_t>(i) * c + j] / mu[static_cast<std::size_t>(i)];
  }
  auto ai = a.impl();
  return detail::make_op<T>(
      "normalize_rows_by_mean", a.shape(), std::move(out), {a},
      [ai, r, c, mu = std::move(mu)](TensorImpl<T>& self) {
        ai->ensure_grad();
        for (int i = 0; i < r; ++i) {
          const T m = mu[static_cast<std::size_t>(i)];
          if (m <= T(0)) continue;
          T dot = T(0);
          for (int j = 0; j < c; ++j)
            dot += self.grad[static_cast<std::size_t>(i) * c + j] * ai->data[static_cast<std::size_t>(i) * c + j];
          for (int j = 0; j < c; ++j)
            ai->grad[static_cast<std::size_t>(i) * c + j] +=
                self.grad[static_cast<std::size_t>(i) * c + j] / m - dot / (static_cast<T>(c) * m * m);
        }
      });
}

/// Overwrites the diagonal of a square matrix with a constant; the replaced
/// entries contribute no gradient.
template <class T>
Tensor<T> set_diag_const(const Tensor<T>& a, T value) {
  detail::check_matrix("set_diag_const", a);
  if (a.dim(0) != a.dim(1))
    throw TensorError("set_diag_const: matrix must be square, got " + shape_str(a.shape()));
  const int n = a.dim(0);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * n + i] = value;
  auto ai = a.impl();
  return detail::make_op<T>("set_diag_const", a.shape(), std::move(out), {a},
                            [ai, n](TensorImpl<T>& self) {
                              ai->ensure_grad();
                              for (int i = 0; i < n; ++i)
                                for (int j = 0; j < n; ++j)
                                  if (i != j)
                                    ai->grad[static_cast<std::size_t>(i) * n + j] +=
                                        self.grad[static_cast<std::size_t>(i) * n + j];
                            });
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers.
// ---------------------------------------------------------------------------

/// Constant one-hot matrix [n, n_classes].
template <class T>
Tensor<T> one_hot(const std::vector<int>& labels, int n_classes) {
  std::vector<T> data(labels.size() * static_cast<std::size_t>(n_classes), T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw TensorError("one_hot: label out of range");
    data[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return Tensor<T>::from_data({static_cast<int>(labels.size()), n_classes}, std::move(data));
}

/// Row-wise argmax of a 2-d tensor (ties to the first index).
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& a) {
  const int r = a.dim(0), c = a.dim(1);
  std::vector<int> out(static_cast<std::size_t>(r), 0);
  for (int i = 0; i < r; ++i) {
    const T* row = a.data_ptr() + static_cast<std::size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

/// Compares reverse-mode gradients of a deterministic scalar-valued function
/// against central finite differences. Returns the maximum over all input
/// coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class T>
double grad_check(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, double step = 1e-4) {
  for (auto& in : inputs)
    if (!in.requires_grad())
      throw TensorError("grad_check: all inputs must require gradients");

  for (auto& in : inputs) in.zero_grad();
  Tensor<T> loss = f(inputs);
  if (loss.numel() != 1) throw TensorError("grad_check: function must be scalar-valued");
  loss.backward();
  std::vector<std::vector<T>> analytic;
  for (auto& in : inputs)
    analytic.emplace_back(in.grad().begin(), in.grad().end());

  double max_err = 0.0;
  NoGradGuard no_grad;  // finite-difference probes need values only
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& in = inputs[t];
    for (std::size_t i = 0; i < in.numel(); ++i) {
      const T saved = in.data()[i];
      in.data()[i] = saved + static_cast<T>(step);
      const double up = static_cast<double>(f(inputs).item());
      in.data()[i] = saved - static_cast<T>(step);
      const double down = static_cast<double>(f(inputs).item());
      in.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = static_cast<double>(analytic[t][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace fewshot
