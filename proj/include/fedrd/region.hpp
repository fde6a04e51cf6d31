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
#include <map>
#include <vector>

#include "fedrd/errors.hpp"
#include "fedrd/linalg.hpp"
#include "fedrd/model.hpp"

// Closed-form quantities of the Gaussian inner region: per-subset mutual
// informations, the MMSE combiner and the aggregation distortion v(q).

namespace fedrd {

// Exhaustive enumeration of 2^M - 1 rate constraints stops here.
inline constexpr int kMaxEnumeratedDevices = 25;

namespace detail {

inline void require_finite_params(const GaussianSourceModel& model, const MbtcParams& q) {
  if (q.size() != model.device_count()) throw ShapeError("MBTC parameter count does not match the model");
  if (!q.all_finite()) throw DomainError("mutual information needs finite MBTC parameters");
}

inline MatrixXd observation_covariance(const GaussianSourceModel& model, const MbtcParams& q) {
  MatrixXd u = model.covariance();
  u.diagonal() += q.values();
  return u;
}

inline double sum_log2(const VectorXd& q, const std::vector<int>& idx) {
  double acc = 0.0;
  for (int m : idx) acc += std::log2(q(m));
  return acc;
}

}  // namespace detail

/// I(x_S; u_S | u_{S^c}) in bits per symbol for a nonempty proper subset S.
inline double cond_mutual_info(const GaussianSourceModel& model, const MbtcParams& q, DeviceSubset s) {
  detail::require_finite_params(model, q);
  const int m = model.device_count();
  if (s.empty() || s.is_full(m)) throw DomainError("subset must be nonempty and proper; use sum_mutual_info for [M]");
  if ((s.mask() & ~DeviceSubset::full(m).mask()) != 0) throw DomainError("subset names devices outside [M]");
  const MatrixXd u = detail::observation_covariance(model, q);
  const auto rest = s.complement(m).members();
  const double value = 0.5 * (linalg::log2_det_spd(u) - linalg::log2_det_spd(linalg::principal(u, rest)) -
                               detail::sum_log2(q.values(), s.members()));
  return std::max(0.0, value);
}

/// I(x; u) in bits per symbol.
inline double sum_mutual_info(const GaussianSourceModel& model, const MbtcParams& q) {
  detail::require_finite_params(model, q);
  const MatrixXd u = detail::observation_covariance(model, q);
  double log_noise = 0.0;
  for (Eigen::Index i = 0; i < q.values().size(); ++i) log_noise += std::log2(q[static_cast<int>(i)]);
  return std::max(0.0, 0.5 * (linalg::log2_det_spd(u) - log_noise));
}

/// Weights w with E[Y | u] = w^T u. Devices with q = +inf are dropped (their
/// weight is zero). A zero-energy target yields the zero combiner.
inline VectorXd mmse_combiner(const GaussianSourceModel& model, const MbtcParams& q) {
  if (q.size() != model.device_count()) throw ShapeError("MBTC parameter count does not match the model");
  VectorXd w = VectorXd::Zero(model.device_count());
  if (model.target_energy() == 0.0) return w;
  std::vector<int> active;
  for (int m = 0; m < q.size(); ++m)
    if (std::isfinite(q[m])) active.push_back(m);
  if (active.empty()) return w;
  const MatrixXd& sx = model.covariance();
  const VectorXd cross = sx * model.target();  // Sigma_X c
  MatrixXd u = linalg::principal(sx, active);
  for (std::size_t i = 0; i < active.size(); ++i) u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += q[active[i]];
  const VectorXd wa = u.llt().solve(linalg::gather(cross, active));
  for (std::size_t i = 0; i < active.size(); ++i) w(active[i]) = wa(static_cast<Eigen::Index>(i));
  return w;
}

/// v(q) = c^T Sigma_X c - c^T Sigma_X (Sigma_X + Sigma_V)^{-1} Sigma_X c, clamped at 0.
inline double distortion(const GaussianSourceModel& model, const MbtcParams& q) {
  const double energy = model.target_energy();
  if (energy == 0.0) return 0.0;
  const VectorXd w = mmse_combiner(model, q);
  const VectorXd cross = model.covariance() * model.target();
  return std::clamp(energy - w.dot(cross), 0.0, energy);
}

// The maximized objective c^T Sigma_X (Sigma_X + Sigma_V)^{-1} Sigma_X c.
inline double explained_energy(const GaussianSourceModel& model, const MbtcParams& q) {
  if (model.target_energy() == 0.0) return 0.0;
  return mmse_combiner(model, q).dot(model.covariance() * model.target());
}

struct ConstraintRow {
  DeviceSubset subset;
  double required_bits = 0.0;
  double budget_bits = 0.0;
  double slack = 0.0;
};

struct FeasibilityReport {
  bool feasible = false;
  double worst_slack = std::numeric_limits<double>::infinity();
  DeviceSubset binding;
  std::vector<ConstraintRow> rows;  // subsets in increasing mask order
};

/// Required rate (bits/symbol) for every nonempty subset, indexed by mask.
/// Index 0 is unused; the full mask holds I(x; u).
inline std::vector<double> subset_requirements(const GaussianSourceModel& model, const MbtcParams& q) {
  detail::require_finite_params(model, q);
  const int m = model.device_count();
  if (m > kMaxEnumeratedDevices) throw SizeError("constraint enumeration is capped at 25 devices");
  const MatrixXd u = detail::observation_covariance(model, q);
  const double log_det_u = linalg::log2_det_spd(u);
  VectorXd log_q(m);
  for (int i = 0; i < m; ++i) log_q(i) = std::log2(q[i]);
  const std::uint32_t full = DeviceSubset::full(m).mask();
  std::vector<double> req(static_cast<std::size_t>(full) + 1, 0.0);
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    const DeviceSubset s(mask);
    double log_noise = 0.0;
    for (int i : s.members()) log_noise += log_q(i);
    const double log_det_rest = linalg::log2_det_spd(linalg::principal(u, s.complement(m).members()));
    req[mask] = std::max(0.0, 0.5 * (log_det_u - log_det_rest - log_noise));
  }
  return req;
}

/// Checks every subset constraint sum_{m in S} r_m >= I(x_S; u_S | u_{S^c}).
inline FeasibilityReport is_feasible(const GaussianSourceModel& model, const MbtcParams& q, const RateBudget& budget) {
  if (budget.size() != model.device_count()) throw ShapeError("budget length does not match the model");
  const auto req = subset_requirements(model, q);
  FeasibilityReport report;
  report.rows.reserve(req.size() - 1);
  for (std::uint32_t mask = 1; mask < req.size(); ++mask) {
    const DeviceSubset s(mask);
    ConstraintRow row{s, req[mask], budget.total(s), 0.0};
    row.slack = row.budget_bits - row.required_bits;
    if (row.slack < report.worst_slack) {
      report.worst_slack = row.slack;
      report.binding = s;
    }
    report.rows.push_back(row);
  }
  report.feasible = report.worst_slack >= -1e-9;
  return report;
}

/// Per-device rates actually charged at q: starting from the budget, each
/// device in turn gives back as much rate as every subset constraint allows.
/// The result lies in the rate region, never exceeds the budget, and sums to
/// I(x; u) when q is feasible.
inline VectorXd charged_rates(const GaussianSourceModel& model, const MbtcParams& q, const RateBudget& budget) {
  const auto req = subset_requirements(model, q);
  const int m = model.device_count();
  VectorXd rates = budget.rates().cwiseMin(std::numeric_limits<double>::max());
  std::vector<double> used(req.size(), 0.0);
  auto refresh = [&] {
    for (std::uint32_t mask = 1; mask < req.size(); ++mask) {
      double acc = 0.0;
      for (int i : DeviceSubset(mask).members()) acc += rates(i);
      used[mask] = acc;
    }
  };
  refresh();
  for (int dev = 0; dev < m; ++dev) {
    double give = rates(dev);
    for (std::uint32_t mask = 1; mask < req.size(); ++mask)
      if (DeviceSubset(mask).contains(dev)) give = std::min(give, used[mask] - req[mask]);
    if (give > 0.0) {
      rates(dev) -= give;
      refresh();
    }
  }
  return rates;
}

struct RegionEvaluation {
  double sum_rate = 0.0;
  std::map<std::uint32_t, double> conditional_rates;  // keyed by subset mask, proper subsets only
  double distortion = 0.0;
  VectorXd combiner;
};

inline RegionEvaluation evaluate_region(const GaussianSourceModel& model, const MbtcParams& q) {
  const auto req = subset_requirements(model, q);
  RegionEvaluation out;
  out.sum_rate = req.back();
  for (std::uint32_t mask = 1; mask + 1 < req.size(); ++mask) out.conditional_rates.emplace(mask, req[mask]);
  out.distortion = distortion(model, q);
  out.combiner = mmse_combiner(model, q);
  return out;
}

struct SingleSourcePoint {
  double q_star = 0.0;
  double d_star = 0.0;
};

/// One Gaussian source at rate R: q* = sigma2/(2^{2R}-1), D* = sigma2 2^{-2R}.
inline SingleSourcePoint single_source_rd(double sigma2, double rate_bits) {
  if (!(rate_bits > 0.0)) throw DomainError("rate must be positive");
  if (!(sigma2 > 0.0)) throw DomainError("variance must be positive");
  return {sigma2 / std::expm1(2.0 * rate_bits * std::log(2.0)), sigma2 * std::exp2(-2.0 * rate_bits)};
}

}  // namespace fedrd
