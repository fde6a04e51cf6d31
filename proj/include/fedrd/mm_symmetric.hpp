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
#include <vector>

#include "fedrd/barrier.hpp"
#include "fedrd/errors.hpp"
#include "fedrd/linalg.hpp"
#include "fedrd/mm_general.hpp"
#include "fedrd/model.hpp"
#include "fedrd/region.hpp"

// Grouped reformulation for exchangeable sources: devices in a group share a
// rate and an MBTC parameter, so constraints depend only on how many devices
// of each group a subset contains.

namespace fedrd {

using SelectionVector = std::vector<int>;

inline constexpr std::uint64_t kMaxSelections = 1000000;

/// Every selection vector with 0 <= s_j <= M_j and sum s_j >= 1, in
/// lexicographic order (first group most significant).
inline std::vector<SelectionVector> enumerate_selections(const std::vector<SymmetricSourceModel::Group>& groups) {
  if (groups.empty()) throw DomainError("at least one group is required");
  std::uint64_t count = 1;
  for (const auto& g : groups) {
    if (g.size < 1) throw DomainError("group sizes must be positive");
    count *= static_cast<std::uint64_t>(g.size) + 1;
    if (count > kMaxSelections + 1) throw SizeError("more than 1e6 selection vectors");
  }
  std::vector<SelectionVector> out;
  out.reserve(count - 1);
  SelectionVector s(groups.size(), 0);
  for (std::uint64_t k = 1; k < count; ++k) {
    for (std::size_t j = groups.size(); j-- > 0;) {
      if (s[j] < groups[j].size) {
        ++s[j];
        break;
      }
      s[j] = 0;
    }
    out.push_back(s);
  }
  return out;
}

namespace detail {

struct GroupTerms {
  double a;       // (1 - rho) sigma2
  double common;  // rho sigma2
};

inline GroupTerms group_terms(const SymmetricSourceModel& model) { return {model.private_variance(), model.rho() * model.sigma2()}; }

inline void check_groups(const SymmetricSourceModel& model, const VectorXd& q) {
  if (q.size() != model.group_count()) throw ShapeError("one MBTC parameter per group is required");
  for (Eigen::Index j = 0; j < q.size(); ++j)
    if (!(q(j) > 0.0) || !std::isfinite(q(j))) throw DomainError("group parameters must be positive and finite");
}

inline void check_selection(const SymmetricSourceModel& model, const SelectionVector& s) {
  if (static_cast<int>(s.size()) != model.group_count()) throw ShapeError("selection vector length must equal J");
  int total = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s[j] < 0 || s[j] > model.groups()[j].size) throw DomainError("selection count outside [0, M_j]");
    total += s[j];
  }
  if (total < 1) throw DomainError("selection vector must select at least one device");
}

// 1/2 log2(1 + sum_j n_j common / (a + q_j))
inline double log_term(const SymmetricSourceModel& model, const VectorXd& q, const std::vector<int>& n) {
  const auto [a, common] = group_terms(model);
  double h = 0.0;
  for (Eigen::Index j = 0; j < q.size(); ++j) h += n[static_cast<std::size_t>(j)] * common / (a + q(j));
  return 0.5 * std::log2(1.0 + h);
}

inline std::vector<int> group_sizes(const SymmetricSourceModel& model) {
  std::vector<int> out;
  for (const auto& g : model.groups()) out.push_back(g.size);
  return out;
}

inline std::vector<int> unselected(const SymmetricSourceModel& model, const SelectionVector& s) {
  std::vector<int> out(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) out[j] = model.groups()[j].size - s[j];
  return out;
}

}  // namespace detail

/// Mutual-information requirement of any subset with per-group counts s.
inline double theta(const SymmetricSourceModel& model, const VectorXd& q_groups, const SelectionVector& s) {
  detail::check_groups(model, q_groups);
  detail::check_selection(model, s);
  const double a = model.private_variance();
  double own = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) own += s[j] * std::log2(1.0 + a / q_groups(static_cast<Eigen::Index>(j)));
  return 0.5 * own + detail::log_term(model, q_groups, detail::group_sizes(model)) -
         detail::log_term(model, q_groups, detail::unselected(model, s));
}

/// theta with its last (concave) term replaced by the tangent at q_hat.
inline double theta_up(const SymmetricSourceModel& model, const VectorXd& q_groups, const SelectionVector& s,
                       const VectorXd& q_hat) {
  detail::check_groups(model, q_groups);
  detail::check_groups(model, q_hat);
  detail::check_selection(model, s);
  const auto [a, common] = detail::group_terms(model);
  const auto rest = detail::unselected(model, s);
  double own = 0.0;
  double h_hat = 0.0;
  double slope = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    own += s[j] * std::log2(1.0 + a / q_groups(jj));
    h_hat += rest[j] * common / (a + q_hat(jj));
    slope += rest[j] * common / ((a + q_hat(jj)) * (a + q_hat(jj))) * (q_groups(jj) - q_hat(jj));
  }
  return 0.5 * own + detail::log_term(model, q_groups, detail::group_sizes(model)) - 0.5 * std::log2(1.0 + h_hat) +
         0.5 * kLog2e * slope / (1.0 + h_hat);
}

/// T = sum_j M_j / (q_j + (1 - rho) sigma2); larger is better.
inline double symmetric_objective(const SymmetricSourceModel& model, const VectorXd& q_groups) {
  detail::check_groups(model, q_groups);
  const double a = model.private_variance();
  double t = 0.0;
  for (int j = 0; j < model.group_count(); ++j) t += model.groups()[static_cast<std::size_t>(j)].size / (q_groups(j) + a);
  return t;
}

/// Distortion of the target lambda * sum_m x_m given T.
inline double symmetric_distortion(const SymmetricSourceModel& model, double lambda, double objective) {
  const double m = model.device_count();
  const double rho = model.rho();
  const double sigma2 = model.sigma2();
  const double energy = lambda * lambda * sigma2 * m * ((m - 1.0) * rho + 1.0);
  if (energy == 0.0) return 0.0;
  const double beta = ((m - 1.0) * rho + 1.0) * lambda * sigma2;
  return std::clamp(energy - beta * beta / (1.0 / objective + rho * sigma2), 0.0, energy);
}

inline bool symmetric_feasible(const SymmetricSourceModel& model, const VectorXd& q_groups,
                               const std::vector<SelectionVector>& selections, double* worst_slack = nullptr) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& s : selections) {
    double budget = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) budget += s[j] * model.groups()[j].rate;
    worst = std::min(worst, budget - theta(model, q_groups, s));
  }
  if (worst_slack) *worst_slack = worst;
  return worst >= -1e-9;
}

namespace detail {

class SymmetricSurrogate {
 public:
  SymmetricSurrogate(const SymmetricSourceModel& model, const std::vector<SelectionVector>& selections, VectorXd q_hat,
                     VectorXd objective)
      : model_(model), selections_(selections), q_hat_(std::move(q_hat)), objective_(std::move(objective)) {
    const auto [a, common] = group_terms(model);
    sizes_ = group_sizes(model);
    const int jn = model.group_count();
    tangent_.resize(selections.size());
    offset_.resize(selections.size());
    budget_.resize(selections.size());
    for (std::size_t k = 0; k < selections.size(); ++k) {
      const auto rest = unselected(model, selections[k]);
      double h_hat = 0.0;
      VectorXd g(jn);
      for (int j = 0; j < jn; ++j) {
        const double d = a + q_hat_(j);
        h_hat += rest[static_cast<std::size_t>(j)] * common / d;
        g(j) = rest[static_cast<std::size_t>(j)] * common / (d * d);
      }
      tangent_[k] = 0.5 * kLog2e * g / (1.0 + h_hat);
      offset_[k] = -0.5 * std::log2(1.0 + h_hat) - tangent_[k].dot(q_hat_);
      double budget = 0.0;
      for (int j = 0; j < jn; ++j) budget += selections[k][static_cast<std::size_t>(j)] * model.groups()[static_cast<std::size_t>(j)].rate;
      budget_[k] = budget;
    }
  }

  Eigen::Index dimension() const { return objective_.size(); }
  std::size_t constraint_count() const { return selections_.size(); }
  const VectorXd& objective() const { return objective_; }

  double value(std::size_t k, const VectorXd& q) const {
    for (Eigen::Index j = 0; j < q.size(); ++j)
      if (!(q(j) > 0.0)) return std::numeric_limits<double>::infinity();
    const double a = model_.private_variance();
    double own = 0.0;
    for (Eigen::Index j = 0; j < q.size(); ++j) own += selections_[k][static_cast<std::size_t>(j)] * std::log2(1.0 + a / q(j));
    return 0.5 * own + log_term(model_, q, sizes_) + tangent_[k].dot(q) + offset_[k];
  }

  double constraint_value(std::size_t k, const VectorXd& q) const { return value(k, q) - budget_[k]; }

  void constraint_derivatives(std::size_t k, const VectorXd& q, VectorXd& grad, MatrixXd& hess, double weight) const {
    const auto [a, common] = group_terms(model_);
    const Eigen::Index jn = q.size();
    grad = tangent_[k];
    double h = 0.0;
    VectorXd dh(jn);
    for (Eigen::Index j = 0; j < jn; ++j) {
      const double s = selections_[k][static_cast<std::size_t>(j)];
      const double x = q(j);
      grad(j) += 0.5 * kLog2e * s * (1.0 / (x + a) - 1.0 / x);
      hess(j, j) += weight * 0.5 * kLog2e * s * (1.0 / (x * x) - 1.0 / ((x + a) * (x + a)));
      const double y = 1.0 / (a + x);
      h += sizes_[static_cast<std::size_t>(j)] * common * y;
      dh(j) = -sizes_[static_cast<std::size_t>(j)] * common * y * y;
    }
    const double scale = 0.5 * kLog2e / (1.0 + h);
    grad += scale * dh;
    for (Eigen::Index j = 0; j < jn; ++j) {
      const double y = 1.0 / (a + q(j));
      hess(j, j) += weight * scale * 2.0 * sizes_[static_cast<std::size_t>(j)] * common * y * y * y;
    }
    hess.noalias() -= weight * scale / (1.0 + h) * dh * dh.transpose();
  }

 private:
  const SymmetricSourceModel& model_;
  const std::vector<SelectionVector>& selections_;
  VectorXd q_hat_;
  VectorXd objective_;
  std::vector<int> sizes_;
  std::vector<VectorXd> tangent_;
  std::vector<double> offset_;
  std::vector<double> budget_;
};

}  // namespace detail

struct SymmetricResult {
  VectorXd q_groups;
  MbtcParams q_star;  // per device, group by group
  double d_star = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t constraint_count = 0;
  // objective holds T; q holds the group parameters.
  std::vector<MmIteration> trace;
};

/// Symmetric MM on the J group parameters.
inline SymmetricResult optimize_symmetric(const SymmetricSourceModel& model, double lambda, const MmOptions& opt = {}) {
  if (lambda == 0.0 || !std::isfinite(lambda)) throw DomainError("lambda must be nonzero and finite");
  const auto selections = enumerate_selections(model.groups());
  const int jn = model.group_count();

  double alpha = std::max(model.sigma2(), kQMin);
  VectorXd q = VectorXd::Constant(jn, alpha);
  for (int k = 0; !symmetric_feasible(model, q, selections); ++k) {
    if (k > 4096) throw NumericError("no feasible uniform start found", q);
    alpha *= 2.0;
    q.setConstant(alpha);
  }

  auto record = [&](int it, const VectorXd& p) {
    MmIteration r;
    r.iteration = it;
    r.objective = symmetric_objective(model, p);
    r.distortion = symmetric_distortion(model, lambda, r.objective);
    symmetric_feasible(model, p, selections, &r.worst_slack);
    r.q = p;
    return r;
  };

  SymmetricResult result{q, MbtcParams(model.expand_groups([&](int j) { return q(j); })), 0.0, 0, false, selections.size(), {record(0, q)}};
  const double a = model.private_variance();
  for (int it = 1; it <= opt.max_iter; ++it) {
    VectorXd w(jn);
    for (int j = 0; j < jn; ++j) w(j) = model.groups()[static_cast<std::size_t>(j)].size / ((q(j) + a) * (q(j) + a));

    detail::SymmetricSurrogate probe(model, selections, q, w);
    auto& last = result.trace.back();
    last.objective_gap = std::abs(last.objective - (symmetric_objective(model, q)));
    double gap = 0.0;
    for (std::size_t k = 0; k < selections.size(); ++k) gap = std::max(gap, std::abs(probe.value(k, q) - theta(model, q, selections[k])));
    last.constraint_gap = gap;

    const VectorXd x0 = detail::strictly_feasible_start(probe, q);
    detail::SymmetricSurrogate barrier(model, selections, q, w / w.dot(x0));
    BarrierOptions bo;
    bo.lower_bound = kQMin;
    bo.gap_tolerance = 0.1 * opt.solver_tolerance;
    const VectorXd next = minimize_with_working_set(barrier, x0, bo).x.cwiseMax(kQMin);

    MmIteration rec = record(it, next);
    const double previous = last.objective;
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
  result.q_groups = q;
  result.q_star = MbtcParams(model.expand_groups([&](int j) { return q(j); }));
  result.d_star = symmetric_distortion(model, lambda, symmetric_objective(model, q));
  return result;
}

}  // namespace fedrd
