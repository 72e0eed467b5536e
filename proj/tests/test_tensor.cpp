#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fewshot/ops.hpp"
#include "fewshot/tensor.hpp"
#include "oracles.hpp"

using fewshot::Shape;
using fewshot::Tensor;
using fewshot::TensorD;
using fewshot::TensorError;
using fewshot::TensorF;

TEST_CASE("factories produce the requested shapes and values") {
  auto z = TensorD::zeros({2, 3});
  CHECK(z.shape() == Shape{2, 3});
  CHECK(z.numel() == 6);
  for (double v : z.data()) CHECK(v == 0.0);

  auto f = TensorD::full({4}, 2.5);
  for (double v : f.data()) CHECK(v == 2.5);

  CHECK_THROWS_AS(TensorD::from_data({2, 2}, {1.0, 2.0, 3.0}), TensorError);
}

TEST_CASE("relu clamps negatives") {
  auto x = TensorD::from_data({2}, {-3.0, 2.0});
  auto y = fewshot::relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 2.0);
}

TEST_CASE("softmax over equal logits is uniform") {
  auto x = TensorD::full({1, 5}, 7.0);
  auto y = fewshot::softmax_rows(x);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("softmax rows are non-negative and sum to one, even for huge logits") {
  std::mt19937_64 rng(7);
  auto x = TensorD::uniform({6, 9}, -5.0, 5.0, rng);
  x.data()[3] = 1000.0;  // stabilization keeps this finite
  auto y = fewshot::softmax_rows(x);
  for (int i = 0; i < 6; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < 9; ++j) {
      double v = y.data()[static_cast<std::size_t>(i) * 9 + j];
      CHECK(v >= 0.0);
      CHECK(std::isfinite(v));
      row_sum += v;
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("max_pool2x2 takes window maxima") {
  auto x = TensorD::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto y = fewshot::max_pool2x2(x);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 4.0);

  // Odd trailing row/column is dropped: 3x5 pools to 1x2.
  auto odd = TensorD::zeros({1, 1, 3, 5});
  CHECK(fewshot::max_pool2x2(odd).shape() == Shape{1, 1, 1, 2});

  CHECK_THROWS_AS(fewshot::max_pool2x2(TensorD::zeros({1, 1, 1, 4})), TensorError);
}

TEST_CASE("pairwise_sq_euclidean basics") {
  auto a = TensorD::from_data({2, 2}, {0.0, 0.0, 1.0, 1.0});
  auto b = TensorD::from_data({2, 2}, {3.0, 4.0, 1.0, 1.0});
  auto d = fewshot::pairwise_sq_euclidean(a, b);
  CHECK(d.data()[0] == doctest::Approx(25.0));  // (0,0) vs (3,4)
  CHECK(d.data()[3] == 0.0);                    // identical rows
  CHECK(d.data()[2] == doctest::Approx(13.0));

  CHECK_THROWS_AS(fewshot::pairwise_sq_euclidean(TensorD::zeros({2, 3}), TensorD::zeros({2, 4})),
                  TensorError);
}

TEST_CASE("pairwise_sq_euclidean matches the loop oracle and is swap-symmetric") {
  std::mt19937_64 rng(11);
  auto a = TensorD::uniform({4, 6}, -2.0, 2.0, rng);
  auto b = TensorD::uniform({3, 6}, -2.0, 2.0, rng);
  auto d = fewshot::pairwise_sq_euclidean(a, b);
  std::vector<double> av(a.data().begin(), a.data().end());
  std::vector<double> bv(b.data().begin(), b.data().end());
  auto ref = oracles::pairwise_sq(av, 4, bv, 3, 6);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(d.data()[i] == doctest::Approx(ref[i]).epsilon(1e-6));

  auto dt = fewshot::pairwise_sq_euclidean(b, a);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(d.data()[static_cast<std::size_t>(i) * 3 + j] ==
            dt.data()[static_cast<std::size_t>(j) * 4 + i]);
}

TEST_CASE("conv2d matches the quadruple-loop oracle at 32-bit") {
  std::mt19937_64 rng(23);
  struct Case {
    int N, C, H, W, F, K, stride, pad;
  };
  for (const Case& cs : {Case{2, 3, 7, 9, 4, 3, 1, 0}, Case{1, 2, 8, 8, 3, 3, 2, 1},
                         Case{1, 1, 9, 9, 2, 5, 1, 2}, Case{4, 8, 16, 16, 4, 3, 1, 1}}) {
    auto x = TensorF::uniform({cs.N, cs.C, cs.H, cs.W}, -1.0f, 1.0f, rng);
    auto w = TensorF::uniform({cs.F, cs.C, cs.K, cs.K}, -0.5f, 0.5f, rng);
    auto y = fewshot::conv2d(x, w, cs.stride, cs.pad);
    std::vector<double> xv(x.data().begin(), x.data().end());
    std::vector<double> wv(w.data().begin(), w.data().end());
    auto ref = oracles::conv2d(xv, cs.N, cs.C, cs.H, cs.W, wv, cs.F, cs.K, cs.K, cs.stride, cs.pad);
    REQUIRE(y.numel() == ref.size());
    double max_err = 0.0;  // absolute for small outputs, relative for large
    for (std::size_t i = 0; i < ref.size(); ++i)
      max_err = std::max(max_err, std::abs(static_cast<double>(y.data()[i]) - ref[i]) /
                                      std::max(1.0, std::abs(ref[i])));
    CHECK(max_err < 1e-6);
  }
}

TEST_CASE("conv2d rejects invalid geometry") {
  CHECK_THROWS_AS(fewshot::conv2d(TensorD::zeros({1, 2, 5, 5}), TensorD::zeros({3, 4, 3, 3})),
                  TensorError);
  CHECK_THROWS_AS(fewshot::conv2d(TensorD::zeros({1, 1, 2, 2}), TensorD::zeros({1, 1, 3, 3})),
                  TensorError);
  CHECK_THROWS_AS(fewshot::conv2d(TensorD::zeros({1, 5, 5}), TensorD::zeros({1, 1, 3, 3})),
                  TensorError);
}

TEST_CASE("linear matches the loop oracle and validates shapes") {
  std::mt19937_64 rng(31);
  auto x = TensorD::uniform({5, 7}, -1.0, 1.0, rng);
  auto w = TensorD::uniform({3, 7}, -1.0, 1.0, rng);
  auto b = TensorD::uniform({3}, -1.0, 1.0, rng);
  auto y = fewshot::linear(x, w, b);
  std::vector<double> xv(x.data().begin(), x.data().end());
  std::vector<double> wv(w.data().begin(), w.data().end());
  std::vector<double> bv(b.data().begin(), b.data().end());
  auto ref = oracles::linear(xv, 5, 7, wv, 3, bv);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-10));

  CHECK_THROWS_AS(fewshot::linear(x, TensorD::zeros({3, 6}), b), TensorError);
  CHECK_THROWS_AS(fewshot::linear(x, w, TensorD::zeros({4})), TensorError);
}

TEST_CASE("batch norm removes mean and scale in train mode") {
  // Constant channel, gamma=1, beta=0: output is all zeros.
  auto x = TensorD::full({2, 1, 3, 3}, 4.2);
  auto g1 = TensorD::ones({1});
  auto b0 = TensorD::zeros({1});
  auto y = fewshot::batch_norm_train(x, g1, b0, 1e-5);
  for (double v : y.data()) CHECK(std::abs(v) < 1e-12);

  // gamma=0, beta=5: output is all fives.
  auto g0 = TensorD::zeros({1});
  auto b5 = TensorD::full({1}, 5.0);
  auto y2 = fewshot::batch_norm_train(x, g0, b5, 1e-5);
  for (double v : y2.data()) CHECK(v == 5.0);
}

TEST_CASE("batch norm output statistics are standardized") {
  std::mt19937_64 rng(47);
  const int N = 4, C = 3, H = 5, W = 5;
  auto x = TensorD::normal({N, C, H, W}, 1.5, 2.0, rng);
  auto gamma = TensorD::ones({C});
  auto beta = TensorD::zeros({C});
  auto y = fewshot::batch_norm_train(x, gamma, beta, 1e-5);
  const std::size_t hw = H * W, m = N * hw;
  for (int c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < N; ++n)
      for (std::size_t i = 0; i < hw; ++i)
        mean += y.data()[(static_cast<std::size_t>(n) * C + c) * hw + i];
    mean /= static_cast<double>(m);
    for (int n = 0; n < N; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        double d = y.data()[(static_cast<std::size_t>(n) * C + c) * hw + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(m);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("batch_norm_eval applies fixed statistics") {
  auto x = TensorD::from_data({1, 1, 1, 2}, {3.0, 5.0});
  auto gamma = TensorD::full({1}, 2.0);
  auto beta = TensorD::full({1}, 1.0);
  auto y = fewshot::batch_norm_eval(x, gamma, beta, {4.0}, {1.0}, 0.0);
  CHECK(y.data()[0] == doctest::Approx(-1.0));  // 2*(3-4)/1 + 1
  CHECK(y.data()[1] == doctest::Approx(3.0));
}

TEST_CASE("backward of x*x at x=3 yields 6") {
  auto x = TensorD::scalar(3.0, true);
  auto y = fewshot::mul(x, x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("constant loss leaves every grad at zero") {
  auto param = TensorD::ones({3}, true);
  param.zero_grad();
  auto loss = TensorD::scalar(5.0);
  loss.backward();  // no dependence on param: nothing propagates
  for (double g : param.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward on a non-scalar is an error") {
  auto x = TensorD::ones({2, 2}, true);
  auto y = fewshot::scale(x, 2.0);
  CHECK_THROWS_AS(y.backward(), TensorError);
}

TEST_CASE("leaf gradients accumulate across backward calls until zero_grad") {
  auto x = TensorD::scalar(3.0, true);
  fewshot::mul(x, x).backward();
  fewshot::mul(x, x).backward();
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("diamond-shaped graphs are visited once per node") {
  // z = (x + x)^2 = 4x^2, dz/dx = 8x = 8 at x = 1. Double-visiting the add
  // node would double the gradient.
  auto x = TensorD::scalar(1.0, true);
  auto y = fewshot::add(x, x);
  auto z = fewshot::mul(y, y);
  z.backward();
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto x = TensorD::scalar(2.0, true);
  {
    fewshot::NoGradGuard guard;
    auto y = fewshot::mul(x, x);
    CHECK_FALSE(y.requires_grad());
    y.backward();  // constant: no-op
  }
  CHECK(fewshot::grad_mode_enabled());
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("detach blocks gradient flow") {
  auto x = TensorD::scalar(2.0, true);
  auto d = fewshot::detach(x);
  CHECK_FALSE(d.requires_grad());
  auto y = fewshot::mul(fewshot::mul(d, d), x);  // y = 4x through the detached path
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("requires_grad cannot be toggled on interior nodes") {
  auto x = TensorD::scalar(2.0, true);
  auto y = fewshot::mul(x, x);
  CHECK_THROWS_AS(y.set_requires_grad(true), TensorError);
}

TEST_CASE("structural ops round-trip") {
  std::mt19937_64 rng(3);
  auto x = TensorD::uniform({4, 3}, -1.0, 1.0, rng);

  auto t = fewshot::transpose(fewshot::transpose(x));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(t.data()[i] == x.data()[i]);

  auto top = fewshot::slice_axis0(x, 0, 2);
  auto bottom = fewshot::slice_axis0(x, 2, 4);
  auto glued = fewshot::concat_axis0<double>({top, bottom});
  CHECK(glued.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(glued.data()[i] == x.data()[i]);

  CHECK_THROWS_AS(fewshot::slice_axis0(x, 2, 5), TensorError);
  CHECK_THROWS_AS(fewshot::concat_axis0<double>({x, TensorD::zeros({2, 4})}), TensorError);
  CHECK_THROWS_AS(fewshot::reshape(x, {5, 3}), TensorError);

  auto r = fewshot::reshape(x, {2, 6});
  CHECK(r.shape() == Shape{2, 6});
}

TEST_CASE("stack_cols and select_col are inverses") {
  auto c0 = TensorD::from_data({3}, {1.0, 2.0, 3.0});
  auto c1 = TensorD::from_data({3}, {4.0, 5.0, 6.0});
  auto m = fewshot::stack_cols<double>({c0, c1});
  CHECK(m.shape() == Shape{3, 2});
  CHECK(m.data()[1] == 4.0);
  auto back = fewshot::select_col(m, 1);
  CHECK(back.data()[2] == 6.0);
  CHECK_THROWS_AS(fewshot::select_col(m, 2), TensorError);
}

TEST_CASE("one_hot and argmax_rows") {
  auto oh = fewshot::one_hot<double>({2, 0}, 3);
  CHECK(oh.shape() == Shape{2, 3});
  CHECK(oh.data()[2] == 1.0);
  CHECK(oh.data()[3] == 1.0);
  CHECK_THROWS_AS(fewshot::one_hot<double>({3}, 3), TensorError);

  auto scores = TensorD::from_data({2, 3}, {0.1, 0.9, 0.9, 0.5, 0.2, 0.1});
  auto am = fewshot::argmax_rows(scores);
  CHECK(am[0] == 1);  // tie broken to the first index
  CHECK(am[1] == 0);
}

TEST_CASE("normalize_rows_by_mean handles degenerate rows") {
  auto d = TensorD::from_data({2, 2}, {2.0, 4.0, 0.0, 0.0});
  auto nd = fewshot::normalize_rows_by_mean(d);
  CHECK(nd.data()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(nd.data()[1] == doctest::Approx(4.0 / 3.0));
  CHECK(nd.data()[2] == 1.0);  // all-zero row maps to ones
  CHECK(nd.data()[3] == 1.0);
}

TEST_CASE("set_diag_const replaces the diagonal without gradient") {
  auto x = TensorD::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  x.set_requires_grad(true);
  auto y = fewshot::set_diag_const(x, -9.0);
  CHECK(y.data()[0] == -9.0);
  CHECK(y.data()[3] == -9.0);
  CHECK(y.data()[1] == 2.0);
  fewshot::sum_all(y).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("concat_features lays out prototype channels before sample channels") {
  auto protos = TensorD::from_data({2, 1, 1, 2}, {1.0, 2.0, 3.0, 4.0});
  auto samples = TensorD::from_data({1, 1, 1, 2}, {5.0, 6.0});
  auto pairs = fewshot::concat_features(protos, samples);
  CHECK(pairs.shape() == Shape{2, 2, 1, 2});
  // Row 0 = (proto 0, sample 0), row 1 = (proto 1, sample 0).
  CHECK(pairs.data()[0] == 1.0);
  CHECK(pairs.data()[2] == 5.0);
  CHECK(pairs.data()[4] == 3.0);
  CHECK(pairs.data()[6] == 5.0);
}

TEST_CASE("nll_loss picks out true-class log-probabilities") {
  auto lp = TensorD::from_data({2, 2}, {std::log(0.25), std::log(0.75), std::log(0.5), std::log(0.5)});
  auto loss = fewshot::nll_loss(lp, {1, 0});
  CHECK(loss.item() == doctest::Approx(-(std::log(0.75) + std::log(0.5)) / 2.0));
  CHECK_THROWS_AS(fewshot::nll_loss(lp, {0}), TensorError);
  CHECK_THROWS_AS(fewshot::nll_loss(lp, {0, 2}), TensorError);
}
