// Copyright 2026 The fedrd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fedrd/fl_harness.hpp"

namespace fedrd {
namespace {

TaskShape small_shape() {
  TaskShape s;
  s.devices = 4;
  s.dim = 16;
  s.samples_per_device = 12;
  return s;
}

// Rayleigh-quotient power iteration on H (largest) and on lambda_max I - H
// (gives lambda_max - lambda_min).
Curvature power_iteration(const MatrixXd& h) {
  auto top = [](const MatrixXd& a) {
    VectorXd v = VectorXd::Ones(a.rows()) + VectorXd::LinSpaced(a.rows(), 0.0, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 200000; ++it) {
      const VectorXd w = a * v;
      const double next = v.dot(w) / v.dot(v);
      v = w / w.norm();
      if (it > 100 && std::abs(next - lambda) <= 1e-15 * std::abs(next)) {
        lambda = next;
        break;
      }
      lambda = next;
    }
    return lambda;
  };
  const double big = top(h);
  const double gap = top(big * MatrixXd::Identity(h.rows(), h.cols()) - h);
  return {big - gap, big};
}

TEST(SmoothnessConstants, ScalarIdentityDesigns) {
  std::vector<MatrixXd> a(3, MatrixXd::Ones(1, 1));
  std::vector<VectorXd> y(3, VectorXd::Ones(1));
  const Curvature k = smoothness_constants(QuadraticTask(a, y, 0.0));
  EXPECT_DOUBLE_EQ(k.omega, 1.0);
  EXPECT_DOUBLE_EQ(k.big_omega, 1.0);
}

TEST(SmoothnessConstants, DiagonalHessian) {
  MatrixXd a = MatrixXd::Zero(2, 2);
  a.diagonal() << std::sqrt(2.0), 2.0 * std::sqrt(2.0);
  const QuadraticTask task({a}, {VectorXd::Zero(2)}, 0.0);
  const Curvature k = smoothness_constants(task);
  EXPECT_NEAR(k.omega, 1.0, 1e-14);
  EXPECT_NEAR(k.big_omega, 4.0, 1e-14);
}

TEST(SmoothnessConstants, MatchesPowerIterationOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const QuadraticTask task = make_quadratic_task(small_shape(), seed);
    const Curvature k = smoothness_constants(task);
    const Curvature ref = power_iteration(task.hessian());
    EXPECT_NEAR(k.big_omega, ref.big_omega, 1e-8 * ref.big_omega);
    EXPECT_NEAR(k.omega, ref.omega, 1e-8 * ref.big_omega);
    EXPECT_GE(k.big_omega, k.omega);
    EXPECT_GT(k.omega, 0.0);
  }
}

TEST(SmoothnessConstants, RejectsSingularHessian) {
  TaskShape s = small_shape();
  s.mu = 0.0;
  s.samples_per_device = 2;
  EXPECT_THROW(smoothness_constants(make_quadratic_task(s, 4)), DomainError);
}

TEST(QuadraticTask, OptimumResidual) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 5);
  VectorXd grad = VectorXd::Zero(task.dimension());
  for (int m = 0; m < task.device_count(); ++m) grad += task.weights()(m) * local_gradient(task.theta_star(), task, m);
  EXPECT_LT(grad.norm(), 1e-10);
  EXPECT_NEAR(task.weights().sum(), 1.0, 1e-15);
  const VectorXd theta = VectorXd::Constant(task.dimension(), 0.3);
  EXPECT_NEAR(task.loss_gap(theta), task.loss(theta) - task.loss_star(), 1e-10 * task.loss(theta));
}

TEST(LocalGradient, ZeroAtDeviceLeastSquares) {
  TaskShape s = small_shape();
  s.mu = 0.0;
  s.samples_per_device = 40;
  const QuadraticTask task = make_quadratic_task(s, 6);
  const MatrixXd& a = task.design(1);
  const VectorXd theta_m = (a.transpose() * a).ldlt().solve(a.transpose() * task.response(1));
  EXPECT_LT(local_gradient(theta_m, task, 1).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LocalGradient, FiniteDifferences) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 7);
  VectorXd theta = VectorXd::LinSpaced(task.dimension(), -1.0, 1.0);
  const VectorXd g = local_gradient(theta, task, 2);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VectorXd p = theta, q = theta;
    p(i) += h;
    q(i) -= h;
    const double fd = (task.local_loss(p, 2) - task.local_loss(q, 2)) / (2 * h);
    EXPECT_NEAR(fd, g(i), 1e-5 * std::max(1.0, std::abs(g(i))));
  }
}

TEST(LocalGradient, Linearity) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 8);
  const VectorXd theta = VectorXd::LinSpaced(task.dimension(), 0.5, -0.5);
  const MatrixXd& a = task.design(0);
  const MatrixXd hm = a.transpose() * a / static_cast<double>(a.rows()) + task.mu() * MatrixXd::Identity(theta.size(), theta.size());
  EXPECT_LT((local_gradient(2 * theta, task, 0) - local_gradient(theta, task, 0) - hm * theta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(local_gradient(theta, task, 9), DomainError);
}

TEST(MultiEpochLocalUpdate, SingleStepIsScaledGradient) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 9);
  const VectorXd theta = VectorXd::Constant(task.dimension(), 0.1);
  EXPECT_LT((multi_epoch_local_update(theta, task, 1, 1, 0.05) - 0.05 * local_gradient(theta, task, 1)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(multi_epoch_local_update(theta, task, 1, 0, 0.05), DomainError);
}

TEST(MultiEpochLocalUpdate, ScalarGeometricRecursion) {
  const double a = 1.5, y = 3.0, lr = 0.2;
  const QuadraticTask task({MatrixXd::Constant(1, 1, a)}, {VectorXd::Constant(1, y)}, 0.0);
  const double h = a * a;
  const double star = y / a;
  const double theta0 = -1.0;
  const double after = star + std::pow(1 - lr * h, 5) * (theta0 - star);
  EXPECT_NEAR(multi_epoch_local_update(VectorXd::Constant(1, theta0), task, 0, 5, lr)(0), theta0 - after, 1e-12);
}

TEST(MultiEpochLocalUpdate, ZeroGradientStart) {
  const double a = 2.0, y = 4.0;
  const QuadraticTask task({MatrixXd::Constant(1, 1, a)}, {VectorXd::Constant(1, y)}, 0.0);
  EXPECT_EQ(multi_epoch_local_update(VectorXd::Constant(1, 2.0), task, 0, 5, 0.1)(0), 0.0);
}

TEST(AggregatorSpec, Parse) {
  EXPECT_EQ(AggregatorSpec::parse("error-free").kind, AggregatorSpec::Kind::error_free);
  EXPECT_EQ(AggregatorSpec::parse("qsgd:3").level, 3);
  EXPECT_EQ(AggregatorSpec::parse("uniform:4").name(), "uniform:4");
  EXPECT_EQ(AggregatorSpec::parse("mbtc", 2.0).budget, 2.0);
  EXPECT_THROW(AggregatorSpec::parse("mbtc"), ConfigError);
  EXPECT_THROW(AggregatorSpec::parse("qsgd:x"), ConfigError);
  EXPECT_THROW(AggregatorSpec::parse("qsgd:0"), ConfigError);
  EXPECT_THROW(AggregatorSpec::parse("uniform:31"), ConfigError);
  EXPECT_THROW(AggregatorSpec::parse("topk:3"), ConfigError);
}

TEST(FlRound, ErrorFreeIsExactGradientStep) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 10);
  const VectorXd theta = VectorXd::Constant(task.dimension(), 0.2);
  const RoundOutput r = fl_round(theta, task, AggregatorSpec::parse("error-free"), 0.1, 1);
  EXPECT_EQ(r.error_energy, 0.0);
  VectorXd g = VectorXd::Zero(theta.size());
  for (int m = 0; m < task.device_count(); ++m) g += task.weights()(m) * local_gradient(theta, task, m);
  EXPECT_LT((r.theta_next - (theta - 0.1 * g)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FlRound, SingleDeviceContraction) {
  TaskShape s = small_shape();
  s.devices = 1;
  const QuadraticTask task = make_quadratic_task(s, 11);
  const Curvature k = smoothness_constants(task);
  VectorXd theta = VectorXd::Zero(task.dimension());
  for (int t = 0; t < 10; ++t) {
    const double before = task.loss_gap(theta);
    theta = fl_round(theta, task, AggregatorSpec::parse("error-free"), 1.0 / k.big_omega, 1).theta_next;
    EXPECT_LE(task.loss_gap(theta), (1 - k.omega / k.big_omega) * before + 1e-12);
  }
}

TEST(FlRound, MbtcGenerousBudgetIsNearExact) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 12);
  const VectorXd theta = VectorXd::Zero(task.dimension());
  const RoundOutput r = fl_round(theta, task, AggregatorSpec::parse("mbtc", 16.0), 0.1, 13);
  VectorXd g = VectorXd::Zero(theta.size());
  for (int m = 0; m < task.device_count(); ++m) g += task.weights()(m) * local_gradient(theta, task, m);
  EXPECT_LE(r.error_energy, 1e-6 * g.squaredNorm() / static_cast<double>(theta.size()));
  EXPECT_TRUE((r.rate_report.array() <= 16.0 + 1e-12).all());
}

TEST(RunTraining, ErrorFreeGeometricDecay) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 14);
  const TrainTrace tr = run_training(task, AggregatorSpec::parse("error-free"), 30, 1);
  ASSERT_EQ(tr.rounds.size(), 31u);
  const double c = 1 - tr.curvature.omega / tr.curvature.big_omega;
  EXPECT_LE(tr.rounds.back().loss_gap, std::pow(c, 30) * tr.rounds.front().loss_gap + 1e-9);
  EXPECT_DOUBLE_EQ(tr.eta, 1.0 / tr.curvature.big_omega);
}

TEST(RunTraining, BoundHoldsForEveryAggregator) {
  for (std::uint64_t seed : {15, 16}) {
    const QuadraticTask task = make_quadratic_task(small_shape(), seed);
    for (const auto& spec : {AggregatorSpec::parse("qsgd:1"), AggregatorSpec::parse("uniform:2"), AggregatorSpec::parse("mbtc", 1.0)}) {
      const TrainTrace tr = run_training(task, spec, 15, seed);
      for (const auto& r : tr.rounds) {
        EXPECT_GE(r.loss_gap, -1e-12);
        EXPECT_LE(r.loss_gap, r.bound_value + 1e-9) << spec.name() << " round " << r.round;
      }
    }
  }
}

TEST(RunTraining, UnrolledBoundEqualsRecursion) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 17);
  const TrainTrace tr = run_training(task, AggregatorSpec::parse("qsgd:2"), 20, 3);
  std::vector<double> errors;
  for (std::size_t t = 0; t + 1 < tr.rounds.size(); ++t) {
    errors.push_back(tr.rounds[t].error_norm2);
    const double unrolled = unrolled_bound(tr.rounds.front().bound_value, errors, tr.curvature);
    EXPECT_NEAR(unrolled, tr.rounds[t + 1].bound_value, 1e-12 * std::max(1.0, unrolled));
  }
}

TEST(RunTraining, Deterministic) {
  const QuadraticTask task = make_quadratic_task(small_shape(), 18);
  const TrainTrace a = run_training(task, AggregatorSpec::parse("mbtc", 1.0), 5, 4);
  const TrainTrace b = run_training(task, AggregatorSpec::parse("mbtc", 1.0), 5, 4);
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    EXPECT_EQ(a.rounds[t].loss_gap, b.rounds[t].loss_gap);
    EXPECT_EQ(a.rounds[t].error_norm2, b.rounds[t].error_norm2);
  }
  EXPECT_THROW(run_training(task, AggregatorSpec::parse("error-free"), 0, 4), DomainError);
}

}  // namespace
}  // namespace fedrd
