// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <vector>

#include "ladder/optim.hpp"

using namespace ladder;

TEST_CASE("adamw single step matches hand-stepped oracle") {
  Tensor p = Tensor::from({3}, {1.0, -0.5, 2.0}, true);
  std::vector<double> g{0.3, -0.1, 0.7};
  p.grad() = g;

  OptimConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.05;
  AdamW opt({&p}, cfg);
  opt.step(1.0);

  // hand-stepped: m = (1-b1) g, v = (1-b2) g^2, bias-corrected, decoupled decay
  std::vector<double> w0{1.0, -0.5, 2.0};
  for (size_t i = 0; i < 3; ++i) {
    double m = (1 - 0.9) * g[i];
    double v = (1 - 0.999) * g[i] * g[i];
    double mh = m / (1 - 0.9);
    double vh = v / (1 - 0.999);
    double expect = w0[i] - 1e-2 * (mh / (std::sqrt(vh) + 1e-8) + 0.05 * w0[i]);
    CHECK(std::abs(p.vec()[i] - expect) < 1e-10);
  }
}

TEST_CASE("adamw two steps accumulate moments") {
  Tensor p = Tensor::from({1}, {0.5}, true);
  OptimConfig cfg;
  cfg.lr = 1e-3;
  AdamW opt({&p}, cfg);

  double w = 0.5, m = 0.0, v = 0.0;
  for (int s = 1; s <= 2; ++s) {
    double g = 0.2 * s;
    p.grad() = {g};
    opt.step(1.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mh = m / (1 - std::pow(0.9, s));
    double vh = v / (1 - std::pow(0.999, s));
    w -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(std::abs(p.vec()[0] - w) < 1e-12);
  }
}

TEST_CASE("zero learning rate leaves params bitwise unchanged") {
  Tensor p = Tensor::from({2}, {0.123456789, -9.87654321}, true);
  auto before = p.vec();
  OptimConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.1;
  AdamW opt({&p}, cfg);
  p.grad() = {1.0, -2.0};
  opt.step(1.0);
  CHECK(p.vec() == before);
}

TEST_CASE("schedule warmup then decay") {
  // 10 steps, warmup_ratio 0.2 -> 2 warmup steps
  CHECK(schedule_factor(ScheduleKind::Linear, 0.2, 0, 10) == doctest::Approx(0.5));
  CHECK(schedule_factor(ScheduleKind::Linear, 0.2, 1, 10) == doctest::Approx(1.0));
  CHECK(schedule_factor(ScheduleKind::Linear, 0.2, 2, 10) == doctest::Approx(1.0));
  CHECK(schedule_factor(ScheduleKind::Linear, 0.2, 6, 10) == doctest::Approx(0.5));
  CHECK(schedule_factor(ScheduleKind::Linear, 0.2, 10, 10) == doctest::Approx(0.0));

  CHECK(schedule_factor(ScheduleKind::Cosine, 0.0, 0, 10) == doctest::Approx(1.0));
  CHECK(schedule_factor(ScheduleKind::Cosine, 0.0, 5, 10) ==
        doctest::Approx(0.5 * (1 + std::cos(M_PI * 0.5))));
  CHECK(schedule_factor(ScheduleKind::Constant, 0.0, 7, 10) == doctest::Approx(1.0));
}

TEST_CASE("optimizer state round trip") {
  Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
  OptimConfig cfg;
  AdamW a({&p}, cfg);
  p.grad() = {0.1, 0.2};
  a.step(1.0);
  auto st = a.state();

  Tensor q = Tensor::from({2}, p.vec(), true);
  AdamW b({&q}, cfg);
  b.restore(st);
  p.grad() = {0.3, 0.4};
  q.grad() = {0.3, 0.4};
  a.step(0.5);
  b.step(0.5);
  CHECK(p.vec() == q.vec());
}
