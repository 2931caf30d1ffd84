// SPDX-License-Identifier: Apache-2.0
//
// Tensor / tape tests. Expected values come from independent oracles
// (triple-loop matmul, scalar gelu reference, brute-force softmax) or are
// analytic.

#include "doctest.h"

#include <cmath>
#include <vector>

#include "ladder/errors.hpp"
#include "ladder/rng.hpp"
#include "ladder/tensor.hpp"

using namespace ladder;

namespace {

// Naive triple-loop matmul oracle, independent of the library path.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        c[static_cast<size_t>(i * n + j)] +=
            a[static_cast<size_t>(i * k + l)] * b[static_cast<size_t>(l * n + j)];
  return c;
}

// Scalar reference for the tanh-approximation gelu.
double gelu_oracle(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

}  // namespace

TEST_CASE("matmul identity and hand-computed cases") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(nullptr, a, eye);
  CHECK(c.vec() == std::vector<double>{1, 2, 3, 4});

  Tensor r = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(nullptr, r, col).item() == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7, "test");
  std::vector<double> av(12), bv(8);
  for (auto& v : av) v = rng.uniform(-2, 2);
  for (auto& v : bv) v = rng.uniform(-2, 2);
  Tensor a = Tensor::from({3, 4}, av);
  Tensor b = Tensor::from({4, 2}, bv);
  Tensor c = matmul(nullptr, a, b);
  auto expect = matmul_oracle(av, bv, 3, 4, 2);
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(c.vec()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(nullptr, a, b),
                       doctest::Contains("[2 x 3]"), ConfigError);
}

TEST_CASE("elementwise basics") {
  Tensor z = Tensor::from({1}, {0.0});
  CHECK(gelu(nullptr, z).item() == 0.0);

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({2}, {3, 4});
  CHECK(add(nullptr, a, b).vec() == std::vector<double>{4, 6});

  Tensor one = Tensor::from({1}, {1.0});
  CHECK(gelu(nullptr, one).item() == doctest::Approx(gelu_oracle(1.0)).epsilon(1e-15));
}

TEST_CASE("elementwise trailing broadcast") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  CHECK(add(nullptr, a, b).vec() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(mul(nullptr, a, b).vec() == std::vector<double>{10, 40, 90, 40, 100, 180});
}

TEST_CASE("log domain violation reports index") {
  Tensor x = Tensor::from({3}, {1.0, -1.0, 2.0});
  CHECK_THROWS_WITH_AS(log_t(nullptr, x), doctest::Contains("index 1"), NumericError);
}

TEST_CASE("softmax uniform, analytic, and oracle cases") {
  Tensor z = Tensor::from({3}, {0, 0, 0});
  Tensor y = softmax(nullptr, z, 1.0);
  for (double v : y.vec()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Tensor x = Tensor::from({2}, {std::log(2.0), std::log(1.0)});
  Tensor s = softmax(nullptr, x, 1.0);
  CHECK(s.vec()[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(s.vec()[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));

  // brute-force exp/sum oracle at temperature 0.3
  Rng rng(3, "softmax");
  std::vector<double> v(5);
  for (auto& e : v) e = rng.uniform(-2, 2);
  Tensor t5 = Tensor::from({5}, v);
  Tensor got = softmax(nullptr, t5, 0.3);
  double z5 = 0.0;
  for (double e : v) z5 += std::exp(e / 0.3);
  for (size_t i = 0; i < 5; ++i)
    CHECK(got.vec()[i] == doctest::Approx(std::exp(v[i] / 0.3) / z5).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(11, "softmax2");
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(7);
    for (auto& e : v) e = rng.uniform(-5, 5);
    Tensor x = Tensor::from({7}, v);
    Tensor y = softmax(nullptr, x, 0.7);
    double s = 0.0;
    for (double e : y.vec()) s += e;
    CHECK(std::abs(s - 1.0) <= 1e-12);

    double shift = rng.uniform(-3, 3);
    std::vector<double> vs = v;
    for (auto& e : vs) e += shift;
    Tensor y2 = softmax(nullptr, Tensor::from({7}, vs), 0.7);
    for (size_t i = 0; i < 7; ++i) CHECK(std::abs(y.vec()[i] - y2.vec()[i]) <= 1e-12);
  }
}

TEST_CASE("softmax rejects non-finite input and bad temperature") {
  Tensor x = Tensor::from({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(softmax(nullptr, x, 1.0), NumericError);
  Tensor ok = Tensor::from({2}, {0.0, 1.0});
  CHECK_THROWS_AS(softmax(nullptr, ok, 0.0), ConfigError);
}

TEST_CASE("backward: sum gives ones, dot gives 2x") {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, /*requires_grad=*/true);
  {
    Tape tape;
    Tensor loss = sum_all(&tape, x);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
  }
  x.zero_grad();
  {
    Tape tape;
    Tensor loss = sum_all(&tape, mul(&tape, x, x));
    tape.backward(loss);
    for (size_t i = 0; i < 3; ++i)
      CHECK(x.grad()[i] == doctest::Approx(2 * x.vec()[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward rejects non-scalar root") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = mul(&tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), ConfigError);
}

TEST_CASE("backward accumulates over shared nodes") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tape tape;
  Tensor y = mul(&tape, x, x);           // x^2
  Tensor z = add(&tape, y, x);           // x^2 + x
  Tensor loss = sum_all(&tape, z);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-15));  // 2x + 1
}

TEST_CASE("grad_check: quadratic is exact") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  std::vector<Tensor> params{x};
  double err = grad_check(
      [&](Tape* tp) { return sum_all(tp, mul(tp, x, x)); }, params, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check: composite graph of registered ops") {
  Rng rng(17, "gc");
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor g = Tensor::randn({5}, rng, 0.5, true);
  Tensor bias = Tensor::randn({5}, rng, 0.5, true);
  std::vector<Tensor> params{a, b, g, bias};
  auto f = [&](Tape* tp) {
    Tensor h = matmul(tp, a, b);
    h = layer_norm(tp, h, g, bias);
    h = gelu(tp, h);
    Tensor sm = softmax(tp, h, 0.7);
    Tensor t = tanh_t(tp, narrow_cols(tp, h, 1, 3));
    return add(tp, mean_all(tp, sm), mean_all(tp, mul(tp, t, t)));
  };
  CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("grad_check: slicing, stacking, nll, normalize") {
  Rng rng(23, "gc2");
  Tensor table = Tensor::randn({6, 4}, rng, 1.0, true);
  Tensor w = Tensor::randn({4, 4}, rng, 1.0, true);
  std::vector<Tensor> params{table, w};
  std::vector<int64_t> ids{0, 3, 5, 3};
  auto f = [&](Tape* tp) {
    Tensor e = embedding(tp, table, ids);
    Tensor h = matmul(tp, e, w);
    Tensor nrm = l2_normalize_rows(tp, h);
    Tensor scores = matmul(tp, nrm, transpose(tp, nrm));
    Tensor nll = nll_rows(tp, scale(tp, scores, 5.0), {0, 1, 2, 3});
    Tensor pooled = masked_mean_rows(tp, h, {1, 1, 0, 1});
    Tensor sliced = narrow_vec(tp, pooled, 0, 2);
    Tensor stacked = stack_rows(tp, {sliced, sliced});
    return add(tp, nll, mean_all(tp, mul(tp, stacked, stacked)));
  };
  CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("grad_check rejects out-of-range h and non-determinism") {
  Tensor x = Tensor::from({1}, {1.0}, true);
  std::vector<Tensor> params{x};
  auto f = [&](Tape* tp) { return sum_all(tp, x); };
  CHECK_THROWS_AS(grad_check(f, params, 1e-2), ConfigError);

  Rng noisy(1, "noise");
  auto g = [&](Tape* tp) {
    return sum_all(tp, scale(tp, x, noisy.uniform()));
  };
  CHECK_THROWS_AS(grad_check(g, params, 1e-5), NumericError);
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(42, "init");
  Rng b(42, "init");
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, "mask");
  Rng d(43, "init");
  CHECK(Rng(42, "init").next_u64() != c.next_u64());
  CHECK(Rng(42, "init").next_u64() != d.next_u64());

  // forked streams do not disturb the parent
  Rng parent(7, "sample");
  uint64_t before = Rng(7, "sample").next_u64();
  Rng child = parent.fork(3);
  (void)child.next_u64();
  CHECK(parent.next_u64() == before);
}

TEST_CASE("tape evaluation is bitwise deterministic under a fixed seed") {
  auto run = [] {
    Rng rng(99, "init");
    Tensor a = Tensor::randn({8, 8}, rng, 1.0);
    Tensor b = Tensor::randn({8, 8}, rng, 1.0);
    Tensor g = Tensor::full({8}, 1.0);
    Tensor bias = Tensor::zeros({8});
    Tensor h = layer_norm(nullptr, gelu(nullptr, matmul(nullptr, a, b)), g, bias);
    return softmax(nullptr, h, 0.3).vec();
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1 == r2);  // bitwise
}

TEST_CASE("dropout train/eval semantics") {
  Rng rng(5, "dropout");
  Tensor x = Tensor::full({1000}, 1.0);
  Tensor eval_out = dropout(nullptr, x, 0.5, rng, /*train=*/false);
  CHECK(eval_out.vec() == x.vec());

  Rng rng2(5, "dropout");
  Tensor train_out = dropout(nullptr, x, 0.5, rng2, /*train=*/true);
  int zeros = 0;
  for (double v : train_out.vec()) {
    CHECK((v == 0.0 || v == 2.0));
    zeros += v == 0.0;
  }
  CHECK(zeros > 350);
  CHECK(zeros < 650);
}

TEST_CASE("reshape and replace_row keep gradients flowing") {
  Rng rng(31, "gc3");
  Tensor x = Tensor::randn({3, 3}, rng, 1.0, true);
  Tensor v = Tensor::randn({3}, rng, 1.0, true);
  std::vector<Tensor> params{x, v};
  auto f = [&](Tape* tp) {
    Tensor r = replace_row(tp, x, 1, v);
    Tensor flat = reshape(tp, r, {9});
    return mean_all(tp, mul(tp, flat, flat));
  };
  CHECK(grad_check(f, params, 1e-5) < 1e-6);
}
