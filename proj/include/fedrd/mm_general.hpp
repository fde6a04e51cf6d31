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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedrd/barrier.hpp"
#include "fedrd/errors.hpp"
#include "fedrd/linalg.hpp"
#include "fedrd/model.hpp"
#include "fedrd/region.hpp"

// Majorization-minimization over the MBTC parameters q for a general source
// covariance. Each round replaces the objective by a linear lower bound and
// every mutual-information constraint by a convex upper bound, both tight at
// the current point, then solves the convex problem with the barrier method.

namespace fedrd {

/// 2 a^T b - b^T B b, a lower bound on a^T B^{-1} a for positive definite B
/// that is tight at b = B^{-1} a.
inline double inverse_quadratic_minorant(const VectorXd& a, const VectorXd& b, const MatrixXd& big_b) {
  if (a.size() != b.size() || big_b.rows() != a.size() || big_b.cols() != a.size()) throw ShapeError("inverse_quadratic_minorant dimensions");
  if (!linalg::is_positive_definite(big_b)) throw DomainError("B must be positive definite");
  return 2.0 * a.dot(b) - b.dot(big_b * b);
}

// Regression pair of u_S on u_{S^c}: E is |S| x |S^c|, F is |S| x |S|.
// For S = [M], E has no columns and F = Sigma_X + Sigma_V (the matrix G).
struct ExpansionPair {
  MatrixXd e;
  MatrixXd f;
};

inline ExpansionPair expansion_matrices(const GaussianSourceModel& model, const MbtcParams& q_hat, DeviceSubset s) {
  const int m = model.device_count();
  if (q_hat.size() != m) throw ShapeError("MBTC parameter count does not match the model");
  if (!q_hat.all_finite()) throw DomainError("expansion point must be finite");
  if (s.empty()) throw DomainError("subset must be nonempty");
  const auto in = s.members();
  const auto out = s.complement(m).members();
  const MatrixXd& sx = model.covariance();
  MatrixXd f = linalg::principal(sx, in);
  for (std::size_t i = 0; i < in.size(); ++i) f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += q_hat[in[i]];
  if (out.empty()) return {MatrixXd(static_cast<Eigen::Index>(in.size()), 0), f};
  MatrixXd rest = linalg::principal(sx, out);
  for (std::size_t i = 0; i < out.size(); ++i) rest(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += q_hat[out[i]];
  const MatrixXd cross = linalg::select(sx, in, out);
  // E = Sigma_{S,S^c} (Sigma_{S^c} + V_{S^c})^{-1}; rest is symmetric.
  const MatrixXd e = rest.llt().solve(cross.transpose()).transpose();
  f.noalias() -= e * cross.transpose();
  f = 0.5 * (f + f.transpose());
  return {e, f};
}

/// chi_S(E, F, Sigma_V) + xi_S(E, F): an upper bound on I(x_S; u_S | u_{S^c})
/// (or on I(x; u) for S = [M]) valid for any E and positive definite F.
inline double chi_xi(const GaussianSourceModel& model, const MatrixXd& e, const MatrixXd& f, const MbtcParams& q,
                     DeviceSubset s) {
  const int m = model.device_count();
  const auto in = s.members();
  const auto out = s.complement(m).members();
  if (f.rows() != static_cast<Eigen::Index>(in.size()) || f.cols() != f.rows() ||
      e.rows() != f.rows() || e.cols() != static_cast<Eigen::Index>(out.size()))
    throw ShapeError("E/F dimensions do not match the subset");
  const auto log_det_f = linalg::try_log2_det_spd(f);
  if (!log_det_f) throw DomainError("F must be positive definite");
  const MatrixXd f_inv = linalg::inverse_spd(f);
  const MatrixXd& sx = model.covariance();
  const VectorXd qv = q.values();

  double trace_noise = 0.0;
  double log_noise = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    trace_noise += f_inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) * qv(in[i]);
    log_noise += std::log2(qv(in[i]));
  }
  MatrixXd inner = linalg::principal(sx, in);
  if (!out.empty()) {
    const MatrixXd efe = e.transpose() * f_inv * e;
    for (std::size_t i = 0; i < out.size(); ++i) trace_noise += efe(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) * qv(out[i]);
    const MatrixXd cross = linalg::select(sx, in, out);
    inner += e * linalg::principal(sx, out) * e.transpose() - e * cross.transpose() - cross * e.transpose();
  }
  const double chi = 0.5 * kLog2e * trace_noise - 0.5 * log_noise;
  const double xi = 0.5 * *log_det_f + 0.5 * kLog2e * (f_inv * inner).trace() - 0.5 * kLog2e * static_cast<double>(in.size());
  return chi + xi;
}

// One surrogate rate constraint:
//   linear_weights^T q - 1/2 sum_{m in S} log2 q_m + constant <= budget.
struct SurrogateConstraint {
  DeviceSubset subset;
  VectorXd linear_weights;
  std::vector<int> log_indices;
  double constant = 0.0;
  double budget = 0.0;

  double lhs(const VectorXd& q) const {
    double acc = linear_weights.dot(q) + constant;
    for (int m : log_indices) {
      if (!(q(m) > 0.0)) return std::numeric_limits<double>::infinity();
      acc -= 0.5 * std::log2(q(m));
    }
    return acc;
  }
};

struct SurrogateProblem {
  // Minimizing objective_weights^T q maximizes the surrogate objective
  // objective_offset - objective_weights^T q.
  VectorXd objective_weights;
  double objective_offset = 0.0;
  std::vector<SurrogateConstraint> constraints;
  MbtcParams expansion_point;

  double surrogate_objective(const VectorXd& q) const { return objective_offset - objective_weights.dot(q); }
};

/// Builds the convex surrogate tight at q_hat. q_hat must be feasible.
inline SurrogateProblem build_surrogate(const GaussianSourceModel& model, const RateBudget& budget, const MbtcParams& q_hat) {
  const int m = model.device_count();
  if (m > kMaxEnumeratedDevices) throw SizeError("constraint enumeration is capped at 25 devices");
  if (budget.size() != m) throw ShapeError("budget length does not match the model");
  if (!is_feasible(model, q_hat, budget).feasible) throw PreconditionError("expansion point is infeasible");

  const MatrixXd& sx = model.covariance();
  MatrixXd g = sx;
  g.diagonal() += q_hat.values();
  const VectorXd b = g.llt().solve(sx * model.target());

  SurrogateProblem out{b.cwiseAbs2(), 2.0 * model.target().dot(sx * b) - b.dot(sx * b), {}, q_hat};
  const std::uint32_t full = DeviceSubset::full(m).mask();
  out.constraints.reserve(full);
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    const DeviceSubset s(mask);
    const auto in = s.members();
    const auto rest = s.complement(m).members();
    const ExpansionPair pair = expansion_matrices(model, q_hat, s);
    const MatrixXd f_inv = linalg::inverse_spd(pair.f);

    SurrogateConstraint c;
    c.subset = s;
    c.linear_weights = VectorXd::Zero(m);
    for (std::size_t i = 0; i < in.size(); ++i)
      c.linear_weights(in[i]) = 0.5 * kLog2e * f_inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    if (!rest.empty()) {
      const MatrixXd efe = pair.e.transpose() * f_inv * pair.e;
      for (std::size_t i = 0; i < rest.size(); ++i)
        c.linear_weights(rest[i]) = 0.5 * kLog2e * efe(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    }
    c.log_indices = in;
    // The constant is xi_S: chi_xi with the noise terms of chi removed.
    c.constant = chi_xi(model, pair.e, pair.f, q_hat, s) - c.linear_weights.dot(q_hat.values());
    for (int i : in) c.constant += 0.5 * std::log2(q_hat[i]);
    c.budget = budget.total(s);
    out.constraints.push_back(std::move(c));
  }
  return out;
}

namespace detail {

// Adapter exposing a SurrogateProblem to the barrier solver.
class SurrogateBarrier {
 public:
  SurrogateBarrier(const SurrogateProblem& problem, VectorXd objective)
      : problem_(problem), objective_(std::move(objective)) {}

  Eigen::Index dimension() const { return objective_.size(); }
  std::size_t constraint_count() const { return problem_.constraints.size(); }
  const VectorXd& objective() const { return objective_; }

  double constraint_value(std::size_t i, const VectorXd& q) const {
    const auto& c = problem_.constraints[i];
    return c.lhs(q) - c.budget;
  }

  void constraint_derivatives(std::size_t i, const VectorXd& q, VectorXd& grad, MatrixXd& hess, double weight) const {
    const auto& c = problem_.constraints[i];
    grad = c.linear_weights;
    for (int m : c.log_indices) {
      grad(m) -= 0.5 * kLog2e / q(m);
      hess(m, m) += weight * 0.5 * kLog2e / (q(m) * q(m));
    }
  }

 private:
  const SurrogateProblem& problem_;
  VectorXd objective_;
};

// Pushes a feasible point slightly outward until it is strictly feasible.
// Uniformly inflating q lowers every exact mutual information, and the
// surrogate shares their gradients at the expansion point.
template <BarrierProblem P>
VectorXd strictly_feasible_start(const P& p, const VectorXd& x) {
  if (strictly_feasible(p, x)) return x;
  for (double delta = 1e-12; delta < 1.0; delta *= 4.0) {
    VectorXd trial = x * (1.0 + delta);
    if (strictly_feasible(p, trial)) return trial;
  }
  throw PreconditionError("surrogate problem has no strictly feasible point near its expansion point");
}

}  // namespace detail

/// Minimizes sum b_m^2 q_m over the surrogate region with the log-barrier
/// method, stopping once (#constraints)/t < tol/10.
inline MbtcParams solve_surrogate(const SurrogateProblem& problem, double tol = 1e-8) {
  // Scale-free objective: value 1 at the start point.
  const VectorXd& start = problem.expansion_point.values();
  VectorXd w = problem.objective_weights;
  detail::SurrogateBarrier probe(problem, w);
  const VectorXd x0 = detail::strictly_feasible_start(probe, start);
  const double scale = w.dot(x0);
  if (scale > 0.0) w /= scale;
  detail::SurrogateBarrier barrier(problem, w);
  BarrierOptions opt;
  opt.lower_bound = kQMin;
  opt.gap_tolerance = 0.1 * tol;
  VectorXd x = minimize_with_working_set(barrier, x0, opt).x;
  return MbtcParams(x.cwiseMax(kQMin));
}

/// Uniform q = alpha * 1, doubling alpha from trace(Sigma_X)/M until every
/// rate constraint holds.
inline MbtcParams find_feasible_init(const GaussianSourceModel& model, const RateBudget& budget) {
  const int m = model.device_count();
  double alpha = model.covariance().trace() / m;
  if (!(alpha > 0.0)) alpha = 1.0;
  alpha = std::max(alpha, kQMin);
  for (int k = 0; k < 4096; ++k, alpha *= 2.0) {
    MbtcParams q = MbtcParams::uniform(m, alpha);
    if (is_feasible(model, q, budget).feasible) return q;
  }
  throw NumericError("no feasible uniform start found", VectorXd::Constant(m, alpha));
}

struct MmIteration {
  int iteration = 0;
  double objective = 0.0;   // c^T Sigma_X (Sigma_X + Sigma_V)^{-1} Sigma_X c
  double distortion = 0.0;  // c^T Sigma_X c - objective
  double worst_slack = 0.0;
  // Surrogate-vs-exact mismatch when this point served as expansion point
  // (NaN when it never did).
  double objective_gap = std::numeric_limits<double>::quiet_NaN();
  double constraint_gap = std::numeric_limits<double>::quiet_NaN();
  VectorXd q;
};

struct MmResult {
  MbtcParams q_star;
  double d_star = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<MmIteration> trace;
};

struct MmOptions {
  double eps = 1e-6;  // fractional objective increase that stops the loop
  int max_iter = 200;
  double solver_tolerance = 1e-8;
};

/// Surrogate-vs-exact mismatch at the expansion point.
struct TightnessReport {
  double objective_gap = 0.0;
  double constraint_gap = 0.0;
};

inline TightnessReport surrogate_tightness(const GaussianSourceModel& model, const SurrogateProblem& problem) {
  const VectorXd& q = problem.expansion_point.values();
  TightnessReport out;
  out.objective_gap = std::abs(problem.surrogate_objective(q) - explained_energy(model, problem.expansion_point));
  const auto req = subset_requirements(model, problem.expansion_point);
  for (const auto& c : problem.constraints)
    out.constraint_gap = std::max(out.constraint_gap, std::abs(c.lhs(q) - req[c.subset.mask()]));
  return out;
}

/// General MM from the doubling initializer until the fractional
/// objective increase falls below eps or max_iter rounds have run.
inline MmResult optimize(const GaussianSourceModel& model, const RateBudget& budget, const MmOptions& opt = {}) {
  const int m = model.device_count();
  if (m > kMaxEnumeratedDevices) throw SizeError("constraint enumeration is capped at 25 devices");
  if (budget.size() != m) throw ShapeError("budget length does not match the model");

  MbtcParams q = find_feasible_init(model, budget);
  auto record = [&](int it, const MbtcParams& p) {
    MmIteration r;
    r.iteration = it;
    r.objective = explained_energy(model, p);
    r.distortion = distortion(model, p);
    r.worst_slack = is_feasible(model, p, budget).worst_slack;
    r.q = p.values();
    return r;
  };
  MmResult result{q, 0.0, 0, false, {record(0, q)}};
  if (model.target_energy() == 0.0) {
    result.converged = true;
    return result;
  }

  for (int it = 1; it <= opt.max_iter; ++it) {
    const SurrogateProblem surrogate = build_surrogate(model, budget, q);
    const TightnessReport tight = surrogate_tightness(model, surrogate);
    result.trace.back().objective_gap = tight.objective_gap;
    result.trace.back().constraint_gap = tight.constraint_gap;

    const MbtcParams next = solve_surrogate(surrogate, opt.solver_tolerance);
    MmIteration rec = record(it, next);
    const double previous = result.trace.back().objective;
    // Rounding can leave the solver a hair short of the expansion point;
    // such a step is not an improvement and ends the loop.
    if (rec.worst_slack < -1e-9 || rec.objective < previous) {
      result.converged = true;
      break;
    }
    q = next;
    result.iterations = it;
    result.trace.push_back(std::move(rec));
    if ((result.trace.back().objective - previous) / previous < opt.eps) {
      result.converged = true;
      break;
    }
  }
  result.q_star = q;
  result.d_star = distortion(model, q);
  return result;
}

}  // namespace fedrd
