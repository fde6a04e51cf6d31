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

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "fedrd/aggregation.hpp"
#include "fedrd/errors.hpp"
#include "fedrd/seed.hpp"
#include "fedrd/transform.hpp"

namespace fedrd {

// Ridge regression split across devices:
//   L_m(theta) = ||A_m theta - y_m||^2 / (2 K_m) + mu/2 ||theta||^2,
//   L = sum_m (K_m / K) L_m.
class QuadraticTask {
 public:
  QuadraticTask(std::vector<MatrixXd> a, std::vector<VectorXd> y, double mu) : a_(std::move(a)), y_(std::move(y)), mu_(mu) {
    if (a_.empty() || a_.size() != y_.size()) throw ShapeError("one design matrix and target per device is required");
    if (!(mu_ >= 0.0) || !std::isfinite(mu_)) throw DomainError("mu must be non-negative");
    const Eigen::Index n = a_.front().cols();
    if (n < 1) throw ShapeError("parameter dimension must be positive");
    double k = 0.0;
    for (std::size_t m = 0; m < a_.size(); ++m) {
      if (a_[m].cols() != n || a_[m].rows() < 1 || y_[m].size() != a_[m].rows()) throw ShapeError("device data shapes disagree");
      k += static_cast<double>(a_[m].rows());
    }
    weights_.resize(static_cast<Eigen::Index>(a_.size()));
    hessian_ = mu_ * MatrixXd::Identity(n, n);
    VectorXd b = VectorXd::Zero(n);
    for (std::size_t m = 0; m < a_.size(); ++m) {
      weights_(static_cast<Eigen::Index>(m)) = static_cast<double>(a_[m].rows()) / k;
      hessian_.noalias() += a_[m].transpose() * a_[m] / k;
      b.noalias() += a_[m].transpose() * y_[m] / k;
    }
    hessian_ = 0.5 * (hessian_ + hessian_.transpose());
    Eigen::LDLT<MatrixXd> ldlt(hessian_);
    if (ldlt.info() != Eigen::Success) throw NumericError("global Hessian factorization failed", VectorXd());
    theta_star_ = ldlt.solve(b);
    // One step of iterative refinement.
    theta_star_ += ldlt.solve(b - hessian_ * theta_star_);
    loss_star_ = loss(theta_star_);
  }

  int device_count() const { return static_cast<int>(a_.size()); }
  Eigen::Index dimension() const { return a_.front().cols(); }
  double mu() const { return mu_; }
  const MatrixXd& design(int m) const { return a_.at(static_cast<std::size_t>(m)); }
  const VectorXd& response(int m) const { return y_.at(static_cast<std::size_t>(m)); }

  // c_m = K_m / K
  const VectorXd& weights() const { return weights_; }
  const MatrixXd& hessian() const { return hessian_; }
  const VectorXd& theta_star() const { return theta_star_; }
  double loss_star() const { return loss_star_; }

  double local_loss(const VectorXd& theta, int m) const {
    const auto& a = design(m);
    return (a * theta - response(m)).squaredNorm() / (2.0 * static_cast<double>(a.rows())) + 0.5 * mu_ * theta.squaredNorm();
  }

  double loss(const VectorXd& theta) const {
    double acc = 0.0;
    for (int m = 0; m < device_count(); ++m) acc += weights_(m) * local_loss(theta, m);
    return acc;
  }

  /// L(theta) - L*, evaluated as (theta - theta*)^T H (theta - theta*) / 2.
  double loss_gap(const VectorXd& theta) const {
    const VectorXd d = theta - theta_star_;
    return 0.5 * d.dot(hessian_ * d);
  }

 private:
  std::vector<MatrixXd> a_;
  std::vector<VectorXd> y_;
  double mu_;
  VectorXd weights_;
  MatrixXd hessian_;
  VectorXd theta_star_;
  double loss_star_ = 0.0;
};

struct TaskShape {
  int devices = 8;
  Eigen::Index dim = 64;
  Eigen::Index samples_per_device = 32;
  double mu = 0.1;
  double noise = 0.1;
};

/// Gaussian designs, a shared planted parameter and Gaussian label noise.
inline QuadraticTask make_quadratic_task(const TaskShape& shape, std::uint64_t seed) {
  if (shape.devices < 1 || shape.dim < 1 || shape.samples_per_device < 1) throw ConfigError("task sizes must be positive");
  std::mt19937_64 rng(seed_stream(seed, "task"));
  std::normal_distribution<double> normal;
  VectorXd planted(shape.dim);
  for (auto& v : planted) v = normal(rng);
  std::vector<MatrixXd> a;
  std::vector<VectorXd> y;
  for (int m = 0; m < shape.devices; ++m) {
    MatrixXd am(shape.samples_per_device, shape.dim);
    for (Eigen::Index j = 0; j < am.cols(); ++j)
      for (Eigen::Index i = 0; i < am.rows(); ++i) am(i, j) = normal(rng);
    VectorXd ym = am * planted;
    for (auto& v : ym) v += shape.noise * normal(rng);
    a.push_back(std::move(am));
    y.push_back(std::move(ym));
  }
  return QuadraticTask(std::move(a), std::move(y), shape.mu);
}

struct Curvature {
  double omega;  // strong convexity
  double big_omega;  // smoothness
};

inline Curvature smoothness_constants(const QuadraticTask& task) {
  const VectorXd ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(task.hessian(), Eigen::EigenvaluesOnly).eigenvalues();
  if (!(ev(0) > 0.0)) throw DomainError("loss is not strongly convex");
  return {ev(0), ev(ev.size() - 1)};
}

inline VectorXd local_gradient(const VectorXd& theta, const QuadraticTask& task, int m) {
  if (m < 0 || m >= task.device_count()) throw DomainError("device index out of range");
  if (theta.size() != task.dimension()) throw ShapeError("parameter length mismatch");
  const auto& a = task.design(m);
  return a.transpose() * (a * theta - task.response(m)) / static_cast<double>(a.rows()) + task.mu() * theta;
}

/// theta_before - theta_after for `steps` full-batch gradient steps on L_m.
inline VectorXd multi_epoch_local_update(const VectorXd& theta, const QuadraticTask& task, int m, int steps, double lr) {
  if (steps < 1) throw DomainError("steps must be positive");
  VectorXd t = theta;
  for (int k = 0; k < steps; ++k) t -= lr * local_gradient(t, task, m);
  return theta - t;
}

struct AggregatorSpec {
  enum class Kind { error_free, qsgd, uniform, mbtc };
  Kind kind = Kind::error_free;
  int level = 0;        // QSGD levels or uniform bits
  double budget = 0.0;  // per-device rate for MBTC

  static AggregatorSpec parse(const std::string& text, std::optional<double> budget = std::nullopt) {
    AggregatorSpec spec;
    auto level = [&](std::size_t prefix) {
      try {
        std::size_t used = 0;
        const int v = std::stoi(text.substr(prefix), &used);
        if (used != text.size() - prefix || v < 1) throw ConfigError("");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("bad aggregator level in '" + text + "'");
      }
    };
    if (text == "error-free") {
      spec.kind = Kind::error_free;
    } else if (text == "mbtc") {
      spec.kind = Kind::mbtc;
      if (!budget) throw ConfigError("the mbtc aggregator needs --budget");
      if (!(*budget > 0.0) || !std::isfinite(*budget)) throw ConfigError("budget must be positive");
      spec.budget = *budget;
    } else if (text.rfind("qsgd:", 0) == 0) {
      spec.kind = Kind::qsgd;
      spec.level = level(5);
    } else if (text.rfind("uniform:", 0) == 0) {
      spec.kind = Kind::uniform;
      spec.level = level(8);
      if (spec.level > 30) throw ConfigError("uniform bits must lie in [1, 30]");
    } else {
      throw ConfigError("unknown aggregator '" + text + "'");
    }
    return spec;
  }

  std::string name() const {
    switch (kind) {
      case Kind::error_free: return "error-free";
      case Kind::qsgd: return "qsgd:" + std::to_string(level);
      case Kind::uniform: return "uniform:" + std::to_string(level);
      case Kind::mbtc: return "mbtc";
    }
    return "";
  }
};

struct AggregateOutput {
  VectorXd estimate;
  VectorXd rate_report;
  double predicted_distortion = std::numeric_limits<double>::quiet_NaN();
};

inline AggregateOutput aggregate_updates(const AggregatorSpec& spec, std::span<const VectorXd> updates, const VectorXd& c,
                                         std::uint64_t seed) {
  const auto m = static_cast<Eigen::Index>(updates.size());
  switch (spec.kind) {
    case AggregatorSpec::Kind::error_free:
      return {weighted_sum(updates, c), VectorXd::Constant(m, 64.0)};  // raw doubles
    case AggregatorSpec::Kind::qsgd: {
      auto r = qsgd_aggregate(updates, c, spec.level, seed);
      return {std::move(r.estimate), std::move(r.rate_report)};
    }
    case AggregatorSpec::Kind::uniform: {
      auto r = rotated_uniform_aggregate(updates, c, spec.level, seed);
      return {std::move(r.estimate), std::move(r.rate_report)};
    }
    case AggregatorSpec::Kind::mbtc: {
      const DeviceUpdateBatch batch = preprocess(updates, seed_stream(seed, "rotation"));
      auto r = mbtc_aggregate(batch, c, RateBudget::uniform(static_cast<int>(m), spec.budget), OptimizerChoice::general,
                              seed_stream(seed, "noise"));
      return {std::move(r.estimate), std::move(r.rate_report), r.predicted_distortion};
    }
  }
  throw PreconditionError("unknown aggregator");
}

struct RoundOutput {
  VectorXd theta_next;
  double error_norm2 = 0.0;    // ||g_hat - g||^2
  double error_energy = 0.0;   // ||g_hat - g||^2 / N
  VectorXd rate_report;
  double predicted_distortion = std::numeric_limits<double>::quiet_NaN();
};

inline RoundOutput fl_round(const VectorXd& theta, const QuadraticTask& task, const AggregatorSpec& spec, double eta,
                            std::uint64_t seed) {
  std::vector<VectorXd> grads;
  for (int m = 0; m < task.device_count(); ++m) grads.push_back(local_gradient(theta, task, m));
  const VectorXd exact = weighted_sum(grads, task.weights());
  AggregateOutput agg = aggregate_updates(spec, grads, task.weights(), seed);
  RoundOutput out;
  out.error_norm2 = (agg.estimate - exact).squaredNorm();
  out.error_energy = out.error_norm2 / static_cast<double>(theta.size());
  out.theta_next = theta - eta * agg.estimate;
  out.rate_report = std::move(agg.rate_report);
  out.predicted_distortion = agg.predicted_distortion;
  return out;
}

struct RoundRecord {
  int round = 0;
  double loss_gap = 0.0;      // L(theta^t) - L*
  double bound_value = 0.0;   // recursion bound on loss_gap
  double error_norm2 = 0.0;   // ||e^(t)||^2 of the step leaving theta^t (0 on the last row)
  double error_energy = 0.0;  // ||e^(t)||^2 / N
  double mean_rate = 0.0;
  double predicted_distortion = std::numeric_limits<double>::quiet_NaN();
};

struct TrainTrace {
  Curvature curvature{};
  double eta = 0.0;
  std::vector<RoundRecord> rounds;  // rows 0..T
};

/// bound_{t+1} = (1 - omega/Omega) bound_t + ||e_t||^2 / (2 Omega)
inline double bound_step(double bound, double error_norm2, const Curvature& k) {
  return (1.0 - k.omega / k.big_omega) * bound + error_norm2 / (2.0 * k.big_omega);
}

/// Closed form of the recursion after T rounds from the initial gap.
inline double unrolled_bound(double initial_gap, const std::vector<double>& error_norm2, const Curvature& k) {
  const double contraction = 1.0 - k.omega / k.big_omega;
  const auto t = static_cast<int>(error_norm2.size());
  double acc = std::pow(contraction, t) * initial_gap;
  for (int s = 0; s < t; ++s) acc += std::pow(contraction, t - 1 - s) * error_norm2[static_cast<std::size_t>(s)] / (2.0 * k.big_omega);
  return acc;
}

/// T gradient-mode rounds from theta = 0 with eta = 1/Omega unless given.
inline TrainTrace run_training(const QuadraticTask& task, const AggregatorSpec& spec, int rounds, std::uint64_t seed,
                               std::optional<double> eta = std::nullopt) {
  if (rounds < 1) throw DomainError("at least one round is required");
  TrainTrace trace;
  trace.curvature = smoothness_constants(task);
  trace.eta = eta.value_or(1.0 / trace.curvature.big_omega);
  VectorXd theta = VectorXd::Zero(task.dimension());
  double bound = task.loss_gap(theta);
  for (int t = 0; t <= rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.loss_gap = task.loss_gap(theta);
    rec.bound_value = bound;
    if (t < rounds) {
      RoundOutput r = fl_round(theta, task, spec, trace.eta, seed_stream(seed, "round", t));
      rec.error_norm2 = r.error_norm2;
      rec.error_energy = r.error_energy;
      rec.mean_rate = r.rate_report.mean();
      rec.predicted_distortion = r.predicted_distortion;
      bound = bound_step(bound, r.error_norm2, trace.curvature);
      theta = std::move(r.theta_next);
    }
    trace.rounds.push_back(rec);
  }
  return trace;
}

}  // namespace fedrd
