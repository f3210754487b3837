// tests/test_numerics.cpp

// Copyright 2026  The msce-scr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "msce/losses.hpp"
#include "msce/numerics.hpp"
#include "oracles.hpp"

namespace msce {
namespace {

TEST(LogSumExp, SingleElementIsIdentity) {
  EXPECT_EQ(log_sum_exp({0.0}), 0.0);
}

TEST(LogSumExp, TwoZeros) {
  EXPECT_NEAR(log_sum_exp({0.0, 0.0}), std::log(2.0), 1e-15);
}

TEST(LogSumExp, LargeNegativeInputsStayFinite) {
  const double a = -1000.0, b = -1001.0;
  const double expect = a + std::log1p(std::exp(b - a));
  const double got = log_sum_exp({a, b});
  EXPECT_TRUE(std::isfinite(got));
  EXPECT_NEAR(got, expect, 1e-12);
  EXPECT_NEAR(got, -999.6867, 1e-4);
}

TEST(LogSumExp, AllLogZeroGivesLogZero) {
  EXPECT_EQ(log_sum_exp({kLogZero, kLogZero}), kLogZero);
  EXPECT_EQ(log_add(kLogZero, kLogZero), kLogZero);
  EXPECT_EQ(log_add(-3.0, kLogZero), -3.0);
}

TEST(LogSumExp, EmptyThrows) {
  std::vector<double> none;
  EXPECT_THROW(log_sum_exp(std::span<const double>(none)), ContractError);
}

TEST(LogSumExp, PermutationInvariantAndMonotone) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(5);
    for (auto &x : v) x = 10.0 * rng.gaussian();
    const double base = log_sum_exp(v);
    auto w = v;
    rng.shuffle(w);
    EXPECT_NEAR(log_sum_exp(w), base, 1e-12);
    w = v;
    w[2] += 0.5;
    EXPECT_GE(log_sum_exp(w), base);
    w = v;
    *std::max_element(w.begin(), w.end()) += 0.5;
    EXPECT_GT(log_sum_exp(w), base);
  }
}

TEST(SoftmaxLog, Symmetric) {
  auto two = softmax_log(std::vector<double>{0.0, 0.0});
  EXPECT_NEAR(two[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(two[1], std::log(0.5), 1e-15);
  auto four = softmax_log(std::vector<double>{1.5, 1.5, 1.5, 1.5});
  for (double v : four) EXPECT_NEAR(v, std::log(0.25), 1e-15);
}

TEST(SoftmaxLog, NormalizesAndPreservesOrder) {
  auto out = softmax_log(std::vector<double>{1.0, 2.0, 3.0});
  double s = 0.0;
  for (double v : out) s += std::exp(v);
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_LT(out[0], out[1]);
  EXPECT_LT(out[1], out[2]);
  // direct evaluation
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(out[2], 3.0 - std::log(z), 1e-14);
}

TEST(SoftmaxLog, ShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(6), y(6);
    const double c = 50.0 * rng.gaussian();
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = 3.0 * rng.gaussian();
      y[i] = x[i] + c;
    }
    auto a = softmax_log(x), b = softmax_log(y);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(SoftmaxLog, NonFiniteInputThrows) {
  EXPECT_THROW(softmax_log(std::vector<double>{0.0, NAN}), NumericError);
  EXPECT_THROW(softmax_log(std::vector<double>{INFINITY, 0.0}), NumericError);
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto f = [](std::span<const double> x) { return x[0] * x[0]; };
  std::vector<double> point{3.0}, grad{6.0};
  EXPECT_LE(finite_diff_check(f, grad, point, 1e-5), 1e-8);
}

TEST(FiniteDiff, ConstantFunctionHasZeroError) {
  auto f = [](std::span<const double>) { return 4.0; };
  std::vector<double> point{1.0, 2.0}, grad{0.0, 0.0};
  EXPECT_EQ(finite_diff_check(f, grad, point, 1e-4), 0.0);
}

TEST(FiniteDiff, NonFiniteEvaluationThrows) {
  auto f = [](std::span<const double> x) { return std::log(x[0]); };
  std::vector<double> point{0.0}, grad{1.0};
  EXPECT_THROW(finite_diff_check(f, grad, point, 1e-3), NumericError);
}

TEST(FiniteDiff, CtcLossOnSmallTable) {
  Rng rng(11);
  Matrix logits(4, 3);
  for (double &v : logits.data()) v = rng.gaussian();
  const std::vector<int> label{0, 1};
  const auto res = ctc_loss(softmax_log_rows(logits), label);
  auto f = [&](std::span<const double> x) {
    Matrix l(4, 3, std::vector<double>(x.begin(), x.end()));
    return ctc_loss(softmax_log_rows(l), label).nll;
  };
  EXPECT_LE(finite_diff_check(f, res.grad_logits.data(), logits.data(), 1e-5), 1e-6);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42, 5), b(42, 5);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(42, 5), d(42, 5);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(c.gaussian(), d.gaussian());
}

TEST(Rng, DistinctStreamsDiffer) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng a(9, s), b(9, s + 1);
    std::vector<std::uint64_t> va, vb;
    for (int i = 0; i < 100; ++i) {
      va.push_back(a.next_u64());
      vb.push_back(b.next_u64());
    }
    EXPECT_NE(va, vb);
    Rng base(9, s);
    Rng da = base.derive(0), db = base.derive(1);
    EXPECT_NE(da.next_u64(), db.next_u64());
  }
}

TEST(Rng, UniformStaysInUnitInterval) {
  Rng u(1, 0);
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform();
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
  }
}

TEST(Rng, UniformIntCoversRangeEvenly) {
  Rng r(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(r.uniform_int(0, 6))];
  for (int c : counts) EXPECT_NEAR(c, n / 7, n / 7 * 0.05);
}

TEST(Rng, GaussianMoments) {
  Rng r(6);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian();
    s += g;
    s2 += g * g;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, SampleIsDistinctSubset) {
  Rng r(8);
  std::vector<int> pool{3, 5, 7, 9, 11};
  for (int i = 0; i < 1000; ++i) {
    auto s = r.sample(pool, 3);
    std::sort(s.begin(), s.end());
    EXPECT_TRUE(std::adjacent_find(s.begin(), s.end()) == s.end());
    for (int v : s) EXPECT_NE(std::find(pool.begin(), pool.end(), v), pool.end());
  }
  EXPECT_THROW(r.sample(pool, 6), ContractError);
}

TEST(Matrix, ShapeChecked) {
  EXPECT_THROW(Matrix(2, 3, std::vector<double>(5)), ShapeError);
  Matrix m(2, 3, 1.5);
  EXPECT_EQ(m.size(), 6u);
  m(1, 2) = 4.0;
  EXPECT_EQ(m.row(1)[2], 4.0);
  EXPECT_EQ(m.eigen()(1, 2), 4.0);
}

TEST(Hash, Fnv1aKnownValue) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

}  // namespace
}  // namespace msce
