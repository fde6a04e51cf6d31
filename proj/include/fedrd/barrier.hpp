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
#include <concepts>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedrd/errors.hpp"
#include "fedrd/linalg.hpp"

// Primal log-barrier interior-point method for
//
//   minimize  w^T x   subject to  g_i(x) <= 0,  x >= lower_bound,
//
// with smooth convex g_i and a small dense x. Each centering step is a damped
// Newton iteration with backtracking line search.

namespace fedrd {

// g_i(x) must return +inf (or NaN) outside its domain.
template <class P>
concept BarrierProblem = requires(const P& p, const VectorXd& x, std::size_t i, VectorXd& grad, MatrixXd& hess) {
  { p.dimension() } -> std::convertible_to<Eigen::Index>;
  { p.constraint_count() } -> std::convertible_to<std::size_t>;
  { p.objective() } -> std::convertible_to<const VectorXd&>;
  { p.constraint_value(i, x) } -> std::convertible_to<double>;
  // Writes the gradient and *adds* the Hessian of g_i scaled by `weight` into hess.
  p.constraint_derivatives(i, x, grad, hess, 1.0);
};

struct BarrierOptions {
  double lower_bound = 1e-12;
  double gap_tolerance = 1e-9;  // stop once (#constraints)/t drops below this
  double t0 = 1.0;
  double mu = 10.0;
  double alpha = 0.25;
  double beta = 0.5;
  double newton_tolerance = 1e-10;  // lambda^2 / 2
  // Below this decrement a rejected full Newton step means rounding noise,
  // and the point is taken as centered.
  double stall_tolerance = 1e-6;
  int max_newton_steps = 500;  // per centering stage
  std::size_t working_set_batch = 64;
};

struct BarrierResult {
  VectorXd x;
  int newton_steps = 0;
  double t = 0.0;
  double duality_gap = 0.0;
};

namespace detail {

template <BarrierProblem P>
bool constraint_values(const P& p, const VectorXd& x, double lb, VectorXd& g) {
  g.resize(static_cast<Eigen::Index>(p.constraint_count()));
  for (Eigen::Index k = 0; k < x.size(); ++k)
    if (!(x(k) - lb > 0.0)) return false;
  for (std::size_t i = 0; i < p.constraint_count(); ++i) {
    const double v = p.constraint_value(i, x);
    if (!(v < 0.0)) return false;
    g(static_cast<Eigen::Index>(i)) = v;
  }
  return true;
}

// phi_t(trial) - phi_t(x), evaluated through ratios so that it stays accurate
// when t * w^T x dwarfs the difference. +inf when trial is infeasible.
template <BarrierProblem P>
double barrier_change(const P& p, const VectorXd& x, const VectorXd& gx, const VectorXd& trial, double t, double lb,
                      VectorXd& gtrial) {
  if (!constraint_values(p, trial, lb, gtrial)) return std::numeric_limits<double>::infinity();
  double acc = t * p.objective().dot(trial - x);
  for (Eigen::Index k = 0; k < x.size(); ++k) acc -= std::log((trial(k) - lb) / (x(k) - lb));
  for (Eigen::Index i = 0; i < gx.size(); ++i) acc -= std::log(gtrial(i) / gx(i));
  return acc;
}

}  // namespace detail

/// True iff every g_i(x) < 0 and x > lower bound.
template <BarrierProblem P>
bool strictly_feasible(const P& p, const VectorXd& x, double lower_bound = BarrierOptions{}.lower_bound) {
  VectorXd g;
  return detail::constraint_values(p, x, lower_bound, g);
}

template <BarrierProblem P>
BarrierResult minimize_with_barrier(const P& p, VectorXd x, const BarrierOptions& opt = {}) {
  const Eigen::Index n = p.dimension();
  if (x.size() != n) throw ShapeError("start point has the wrong dimension");
  if (!strictly_feasible(p, x, opt.lower_bound)) throw PreconditionError("barrier start point is not strictly feasible");

  const double m = static_cast<double>(p.constraint_count() + static_cast<std::size_t>(n));
  const VectorXd& w = p.objective();
  VectorXd grad(n), cgrad(n), step(n), gx, gtrial, trial(n);
  MatrixXd hess(n, n);
  double t = opt.t0;
  int steps = 0;

  for (;;) {
    // Centering.
    for (int stage_steps = 0;;) {
      detail::constraint_values(p, x, opt.lower_bound, gx);
      grad = t * w;
      hess.setZero();
      for (Eigen::Index k = 0; k < n; ++k) {
        const double d = x(k) - opt.lower_bound;
        grad(k) -= 1.0 / d;
        hess(k, k) += 1.0 / (d * d);
      }
      for (Eigen::Index i = 0; i < gx.size(); ++i) {
        const double inv = -1.0 / gx(i);  // > 0
        p.constraint_derivatives(static_cast<std::size_t>(i), x, cgrad, hess, inv);
        grad.noalias() += inv * cgrad;
        hess.noalias() += (inv * inv) * cgrad * cgrad.transpose();
      }
      Eigen::LDLT<MatrixXd> ldlt(hess);
      step = -ldlt.solve(grad);
      if (ldlt.info() != Eigen::Success || !step.allFinite()) throw NumericError("singular Newton system", x);
      const double slope = grad.dot(step);
      if (-slope / 2.0 <= opt.newton_tolerance) break;
      ++steps;
      if (++stage_steps > opt.max_newton_steps)
        throw NumericError("barrier method exceeded " + std::to_string(opt.max_newton_steps) + " Newton steps", x);

      double s = 1.0;
      bool moved = false;
      while (s > 1e-14) {
        trial = x + s * step;
        const double change = detail::barrier_change(p, x, gx, trial, t, opt.lower_bound, gtrial);
        if (change <= opt.alpha * s * slope) {
          x = trial;
          moved = true;
          break;
        }
        s *= opt.beta;
      }
      // No measurable progress at this t: rounding has taken over.
      if (!moved || (s < 1.0 && -slope / 2.0 <= opt.stall_tolerance)) break;
    }
    if (m / t < opt.gap_tolerance) break;
    t *= opt.mu;
  }
  return {std::move(x), steps, t, m / t};
}

namespace detail {

// Restriction of a problem to a subset of its constraints.
template <BarrierProblem P>
class WorkingSet {
 public:
  WorkingSet(const P& p, const std::vector<std::size_t>& rows) : p_(p), rows_(rows) {}
  Eigen::Index dimension() const { return p_.dimension(); }
  std::size_t constraint_count() const { return rows_.size(); }
  const VectorXd& objective() const { return p_.objective(); }
  double constraint_value(std::size_t i, const VectorXd& x) const { return p_.constraint_value(rows_[i], x); }
  void constraint_derivatives(std::size_t i, const VectorXd& x, VectorXd& grad, MatrixXd& hess, double weight) const {
    p_.constraint_derivatives(rows_[i], x, grad, hess, weight);
  }

 private:
  const P& p_;
  const std::vector<std::size_t>& rows_;
};

// Indices outside `member` with the largest g_i(x), at most `count` of them,
// keeping only g_i(x) >= floor.
template <BarrierProblem P>
std::vector<std::size_t> most_binding(const P& p, const VectorXd& x, const std::vector<char>& member, std::size_t count,
                                      double floor) {
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < p.constraint_count(); ++i) {
    if (member[i]) continue;
    double v = p.constraint_value(i, x);
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
    if (v >= floor) cand.emplace_back(v, i);
  }
  const std::size_t keep = std::min(count, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < keep; ++k) out.push_back(cand[k].second);
  return out;
}

}  // namespace detail

/// Same problem as minimize_with_barrier, solved on a growing subset of the
/// constraints: start from the most binding ones at x, add any that the
/// subset optimum violates, and repeat until none is violated.
template <BarrierProblem P>
BarrierResult minimize_with_working_set(const P& p, const VectorXd& x, const BarrierOptions& opt = {}) {
  const std::size_t n = p.constraint_count();
  const std::size_t batch = std::max<std::size_t>(opt.working_set_batch, 1);
  if (n <= batch) return minimize_with_barrier(p, x, opt);
  if (x.size() != p.dimension()) throw ShapeError("start point has the wrong dimension");
  if (!strictly_feasible(p, x, opt.lower_bound)) throw PreconditionError("barrier start point is not strictly feasible");

  std::vector<char> member(n, 0);
  std::vector<std::size_t> rows;
  auto add = [&](const std::vector<std::size_t>& extra) {
    for (std::size_t i : extra) {
      member[i] = 1;
      rows.push_back(i);
    }
  };
  add(detail::most_binding(p, x, member, batch, -std::numeric_limits<double>::infinity()));
  int steps = 0;
  for (;;) {
    std::sort(rows.begin(), rows.end());
    const detail::WorkingSet<P> sub(p, rows);
    BarrierResult r = minimize_with_barrier(sub, x, opt);
    steps += r.newton_steps;
    const auto violated = detail::most_binding(p, r.x, member, batch, 0.0);
    if (violated.empty()) {
      r.newton_steps = steps;
      return r;
    }
    add(violated);
  }
}

}  // namespace fedrd
