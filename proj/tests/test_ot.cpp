// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedpia/errors.hpp"
#include "fedpia/ot.hpp"
#include "fedpia/rng.hpp"

namespace fedpia::ot {
namespace {

Matrix random_cost(Rng& rng, std::size_t n, std::size_t m) {
  Matrix c(n, m);
  for (double& x : c.values()) x = rng.uniform();
  return c;
}

double brute_force(const Matrix& cost) {
  std::vector<std::size_t> perm(cost.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) total += cost(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(cost.rows());
}

void expect_feasible(const TransportPlan& p, double tol) {
  const Vector rows = p.plan.row_sums();
  const Vector cols = p.plan.column_sums();
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(rows[i], p.row_marginal[i], tol);
  for (std::size_t j = 0; j < cols.size(); ++j) EXPECT_NEAR(cols[j], p.col_marginal[j], tol);
  for (double x : p.plan.values()) EXPECT_GE(x, 0.0);
}

TEST(Exact, TwoByTwoMatchings) {
  const Vector u = uniform_mass(2);
  const TransportPlan id = solve_exact(Matrix::from_rows({{0, 1}, {1, 0}}), u, u);
  EXPECT_EQ(id.plan, Matrix::from_rows({{0.5, 0}, {0, 0.5}}));
  EXPECT_EQ(id.cost, 0.0);
  const TransportPlan swap = solve_exact(Matrix::from_rows({{1, 0}, {0, 1}}), u, u);
  EXPECT_EQ(swap.plan, Matrix::from_rows({{0, 0.5}, {0.5, 0}}));
  EXPECT_EQ(swap.cost, 0.0);
}

TEST(Exact, NonUniformMarginals) {
  // Hand solution: fill the free diagonal first, the excess row mass pays cost 1.
  const TransportPlan p =
      solve_exact(Matrix::from_rows({{0, 1}, {1, 0}}), {0.7, 0.3}, {0.4, 0.6});
  EXPECT_NEAR(p.plan(0, 0), 0.4, 1e-12);
  EXPECT_NEAR(p.plan(0, 1), 0.3, 1e-12);
  EXPECT_NEAR(p.plan(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(p.plan(1, 1), 0.3, 1e-12);
  EXPECT_NEAR(p.cost, 0.3, 1e-12);
  expect_feasible(p, 1e-9);
}

TEST(Exact, MatchesBruteForce) {
  Rng rng(21);
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int t = 0; t < 30; ++t) {
      const Matrix c = random_cost(rng, n, n);
      const TransportPlan p = solve_exact(c, uniform_mass(n), uniform_mass(n));
      EXPECT_NEAR(p.cost, brute_force(c), 1e-9) << "n=" << n << " case " << t;
      EXPECT_NEAR(p.cost, transport_cost(p.plan, c), 1e-15);
      expect_feasible(p, 1e-9);
    }
  }
}

TEST(Exact, SelfAlignmentIsIdentity) {
  Rng rng(22);
  const Matrix x = rng_normal(rng, 7, 3, 1.0);
  const TransportPlan p = solve_exact(pairwise_euclidean(x, x), uniform_mass(7), uniform_mass(7));
  EXPECT_EQ(p.cost, 0.0);
  EXPECT_EQ(plan_to_alignment(p), Matrix::identity(7));
}

TEST(Exact, ScalingLeavesPlanUnchanged) {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    Matrix c = random_cost(rng, 5, 5);
    const TransportPlan a = solve_exact(c, uniform_mass(5), uniform_mass(5));
    for (double& x : c.values()) x *= 37.5;
    EXPECT_EQ(solve_exact(c, uniform_mass(5), uniform_mass(5)).plan, a.plan);
  }
}

TEST(Exact, TiesBreakTowardLowIndices) {
  const TransportPlan p = solve_exact(Matrix(4, 4), uniform_mass(4), uniform_mass(4));
  EXPECT_EQ(plan_to_alignment(p), Matrix::identity(4));
  const auto a = solve_assignment(Matrix(3, 3));
  EXPECT_EQ(a, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Exact, RejectsBadInputs) {
  const Vector u = uniform_mass(2);
  EXPECT_THROW(solve_exact(Matrix::from_rows({{0, 1}, {1, 0}}), u, {0.5, 0.6}), NumericError);
  EXPECT_THROW(solve_exact(Matrix::from_rows({{0, -1}, {1, 0}}), u, u), NumericError);
  Matrix nan_cost(2, 2);
  nan_cost(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(solve_exact(nan_cost, u, u), NumericError);
  EXPECT_THROW(solve_exact(Matrix(2, 3), u, u), ShapeError);
  EXPECT_THROW(uniform_mass(0), DataError);
}

TEST(Sinkhorn, SharpRegimeApproachesExact) {
  const Vector u = uniform_mass(2);
  SinkhornOptions opts;
  opts.epsilon = 0.01;
  const SinkhornResult r = solve_sinkhorn(Matrix::from_rows({{0, 1}, {1, 0}}), u, u, opts);
  EXPECT_LE(max_abs_diff(r.plan.plan, Matrix::from_rows({{0.5, 0}, {0, 0.5}})), 1e-3);
  EXPECT_TRUE(r.converged);
}

TEST(Sinkhorn, LargeEpsilonGivesProductCoupling) {
  Rng rng(24);
  const Matrix c = random_cost(rng, 3, 4);
  const Vector a = {0.2, 0.3, 0.5};
  const Vector b = {0.1, 0.4, 0.25, 0.25};
  SinkhornOptions opts;
  opts.epsilon = 1e6;
  const SinkhornResult r = solve_sinkhorn(c, a, b, opts);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.plan.plan(i, j), a[i] * b[j], 1e-6);
  }
}

TEST(Sinkhorn, CloseToExactAndFeasible) {
  Rng rng(25);
  for (int t = 0; t < 20; ++t) {
    const Matrix c = random_cost(rng, 6, 6);
    const double mean = std::accumulate(c.values().begin(), c.values().end(), 0.0) / 36.0;
    SinkhornOptions opts;
    opts.epsilon = 0.005 * mean;
    opts.max_iters = 20000;
    const SinkhornResult r = solve_sinkhorn(c, uniform_mass(6), uniform_mass(6), opts);
    const TransportPlan e = solve_exact(c, uniform_mass(6), uniform_mass(6));
    EXPECT_LE(r.plan.cost, 1.02 * e.cost) << "case " << t;
    EXPECT_LE(e.cost, r.plan.cost + 1e-9);
    expect_feasible(r.plan, 1e-9);
  }
}

TEST(Sinkhorn, DefaultsAndErrors) {
  const Matrix c = Matrix::from_rows({{1, 2}, {3, 4}});
  const SinkhornResult r = solve_sinkhorn(c, uniform_mass(2), uniform_mass(2));
  EXPECT_DOUBLE_EQ(r.epsilon, 0.01 * 2.5);
  SinkhornOptions bad;
  bad.epsilon = 0.0;
  EXPECT_THROW(solve_sinkhorn(c, uniform_mass(2), uniform_mass(2), bad), UsageError);
}

TEST(Sinkhorn, NonConvergenceIsFlaggedNotFatal) {
  Rng rng(26);
  const Matrix c = random_cost(rng, 5, 5);
  SinkhornOptions opts;
  opts.epsilon = 1e-4;
  opts.max_iters = 1;
  SinkhornResult r;
  ASSERT_NO_THROW(r = solve_sinkhorn(c, uniform_mass(5), uniform_mass(5), opts));
  EXPECT_FALSE(r.converged);
  expect_feasible(r.plan, 1e-9);
}

TEST(Alignment, IdentityAndSwap) {
  TransportPlan p;
  p.plan = Matrix::from_rows({{0.5, 0}, {0, 0.5}});
  p.row_marginal = p.col_marginal = {0.5, 0.5};
  EXPECT_EQ(plan_to_alignment(p), Matrix::identity(2));
  p.plan = Matrix::from_rows({{0, 0.5}, {0.5, 0}});
  EXPECT_EQ(plan_to_alignment(p), Matrix::from_rows({{0, 1}, {1, 0}}));
  p.col_marginal = {0.0, 1.0};
  EXPECT_THROW(plan_to_alignment(p), NumericError);
}

TEST(Alignment, AssignmentPlansArePermutations) {
  Rng rng(27);
  for (int t = 0; t < 20; ++t) {
    const TransportPlan p = solve_exact(random_cost(rng, 4, 4), uniform_mass(4), uniform_mass(4));
    const Matrix a = plan_to_alignment(p);
    for (double x : a.values()) EXPECT_TRUE(x == 0.0 || x == 1.0);
    for (double s : a.row_sums()) EXPECT_EQ(s, 1.0);
    for (double s : a.column_sums()) EXPECT_EQ(s, 1.0);
    EXPECT_EQ(incoming_adjustment(p), a.transpose());
  }
}

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

AdapterLayer random_layer(Rng& rng, std::size_t h, std::size_t b) {
  AdapterLayer l;
  l.w_down = rng_normal(rng, h, b, 1.0);
  l.b_down = random_vector(rng, b);
  l.w_up = rng_normal(rng, b, h, 1.0);
  l.b_up = random_vector(rng, h);
  return l;
}

TEST(Supports, WeightSupportIdentity) {
  Rng rng(28);
  const AdapterLayer l = random_layer(rng, 4, 3);
  const Matrix s = weight_support(l, WeightSide::kDown, Matrix::identity(4));
  ASSERT_EQ(s.rows(), 3u);
  ASSERT_EQ(s.cols(), 5u);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s(j, i), l.w_down(i, j));
    EXPECT_EQ(s(j, 4), l.b_down[j]);
  }
}

TEST(Supports, WeightSupportSwapsColumns) {
  Rng rng(29);
  const AdapterLayer l = random_layer(rng, 4, 3);
  const Matrix base = weight_support(l, WeightSide::kUp, Matrix::identity(3));
  const Matrix swap = Matrix::from_rows({{0, 1, 0}, {1, 0, 0}, {0, 0, 1}});
  const Matrix s = weight_support(l, WeightSide::kUp, swap);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    EXPECT_EQ(s(r, 0), base(r, 1));
    EXPECT_EQ(s(r, 1), base(r, 0));
    EXPECT_EQ(s(r, 2), base(r, 2));
    EXPECT_EQ(s(r, 3), base(r, 3));
  }
  EXPECT_THROW(weight_support(l, WeightSide::kUp, Matrix::identity(4)), ShapeError);
}

TEST(Supports, WeightSupportMatchesLoop) {
  Rng rng(30);
  for (int t = 0; t < 10; ++t) {
    const AdapterLayer l = random_layer(rng, 5, 4);
    const auto perm = rng.permutation(5);
    Matrix adj(5, 5);
    for (std::size_t i = 0; i < 5; ++i) adj(perm[i], i) = 0.5 + static_cast<double>(i);
    const Matrix s = weight_support(l, WeightSide::kDown, adj);
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t c = 0; c < 5; ++c) {
        double want = 0.0;
        for (std::size_t i = 0; i < 5; ++i) want += l.w_down(i, j) * adj(i, c);
        EXPECT_NEAR(s(j, c), want, 1e-12);
      }
      EXPECT_EQ(s(j, 5), l.b_down[j]);
    }
  }
}

ActivationCache cache_with(const Matrix& pre) {
  ActivationCache cache;
  cache.layers.resize(1);
  cache.layers[0].bottleneck_pre = pre;
  return cache;
}

TEST(Supports, ActivationSupportConstantBatch) {
  Matrix pre(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    pre(i, 0) = 1.5;
    pre(i, 1) = -2.0;
    pre(i, 2) = 0.25;
  }
  const Matrix mean = activation_support(cache_with(pre), 0, ActivationMode::kMean);
  EXPECT_EQ(mean, Matrix::from_rows({{1.5}, {-2.0}, {0.25}}));
}

TEST(Supports, ActivationSupportSingleSample) {
  Rng rng(31);
  const ActivationCache c = cache_with(rng_normal(rng, 1, 4, 1.0));
  EXPECT_EQ(activation_support(c, 0, ActivationMode::kPerSample),
            activation_support(c, 0, ActivationMode::kMean));
}

TEST(Supports, MeanIsAverageOfPerSample) {
  Rng rng(32);
  const ActivationCache c = cache_with(rng_normal(rng, 9, 4, 1.0));
  const Matrix per = activation_support(c, 0, ActivationMode::kPerSample);
  const Matrix mean = activation_support(c, 0, ActivationMode::kMean);
  for (std::size_t j = 0; j < 4; ++j) {
    double avg = 0.0;
    for (std::size_t s = 0; s < 9; ++s) avg += per(j, s);
    EXPECT_NEAR(mean(j, 0), avg / 9.0, 1e-12);
  }
  EXPECT_THROW(activation_support(cache_with(Matrix(0, 4)), 0, ActivationMode::kMean), DataError);
  EXPECT_THROW(activation_support(c, 1, ActivationMode::kMean), ShapeError);
}

TEST(Measure, Validation) {
  EXPECT_NO_THROW(NeuronMeasure::uniform(Matrix(3, 2)).validate());
  NeuronMeasure m{{0.5, 0.6}, Matrix(2, 1)};
  EXPECT_THROW(m.validate(), DataError);
  m.mass = {1.0};
  EXPECT_THROW(m.validate(), DataError);
  const NeuronMeasure a = NeuronMeasure::uniform(Matrix::from_rows({{0, 0}}));
  const NeuronMeasure b = NeuronMeasure::uniform(Matrix::from_rows({{3, 4}}));
  EXPECT_EQ(ground_cost(a, b), Matrix::from_rows({{5}}));
}

}  // namespace
}  // namespace fedpia::ot
