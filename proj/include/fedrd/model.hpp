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
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "fedrd/errors.hpp"
#include "fedrd/linalg.hpp"

namespace fedrd {

// Smallest admissible auxiliary-noise variance.
inline constexpr double kQMin = 1e-12;

/// Returns rho*sigma2*11^T + (1-rho)*sigma2*I. Rejects rho outside [0,1) and
/// sigma2 <= 0; rho = 1 makes every mutual-information constraint degenerate.
inline MatrixXd symmetric_covariance(double rho, double sigma2, int device_count) {
  if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("rho must lie in [0, 1)");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw DomainError("sigma2 must be positive and finite");
  if (device_count < 1) throw DomainError("device count must be positive");
  MatrixXd out = MatrixXd::Constant(device_count, device_count, rho * sigma2);
  out.diagonal().setConstant(sigma2);
  return out;
}

/// Per-symbol cross energies of mean-removed updates: entry (i,j) = <g_i, g_j>/N.
inline MatrixXd empirical_covariance(std::span<const VectorXd> updates) {
  if (updates.empty()) throw ShapeError("no update vectors");
  const Eigen::Index n = updates.front().size();
  if (n < 1) throw ShapeError("update vectors must be non-empty");
  for (const auto& u : updates)
    if (u.size() != n) throw ShapeError("update vectors differ in length");
  const auto m = static_cast<Eigen::Index>(updates.size());
  MatrixXd out(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j) {
      const double v = updates[static_cast<std::size_t>(i)].dot(updates[static_cast<std::size_t>(j)]) / static_cast<double>(n);
      out(i, j) = v;
      out(j, i) = v;
    }
  return out;
}

/// Checks that a symmetric matrix is PSD up to -1e-10*trace/M. Slightly
/// negative spectra get a 1e-12*trace/M diagonal jitter; anything below the
/// tolerance throws NotPsdError.
inline MatrixXd validate_psd(MatrixXd a) {
  if (a.rows() != a.cols() || a.rows() == 0) throw ShapeError("covariance must be square and non-empty");
  if (!a.allFinite()) throw DomainError("covariance has non-finite entries");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw DomainError("covariance is not symmetric");
  a = 0.5 * (a + a.transpose());
  const double m = static_cast<double>(a.rows());
  const double mean_diag = a.trace() / m;
  const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(a, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (min_eig < -1e-10 * std::abs(mean_diag) || (min_eig < 0.0 && mean_diag <= 0.0))
    throw NotPsdError("covariance has eigenvalue " + std::to_string(min_eig) + " below the PSD tolerance");
  if (min_eig < 0.0) a.diagonal().array() += 1e-12 * mean_diag;
  return a;
}

// Covariance of the rotated local updates plus the aggregation weights c.
class GaussianSourceModel {
 public:
  GaussianSourceModel(MatrixXd sigma_x, VectorXd c) : sigma_x_(validate_psd(std::move(sigma_x))), c_(std::move(c)) {
    if (c_.size() != sigma_x_.rows()) throw ShapeError("target coefficients must have length M");
    if (!c_.allFinite()) throw DomainError("target coefficients must be finite");
  }

  int device_count() const { return static_cast<int>(sigma_x_.rows()); }
  const MatrixXd& covariance() const { return sigma_x_; }
  const VectorXd& target() const { return c_; }

  // c^T Sigma_X c, the distortion with no information at all.
  double target_energy() const { return std::max(0.0, c_.dot(sigma_x_ * c_)); }

 private:
  MatrixXd sigma_x_;
  VectorXd c_;
};

// Per-device source-coding rate limits, bits per symbol.
class RateBudget {
 public:
  explicit RateBudget(VectorXd rates) : r_(std::move(rates)) {
    if (r_.size() == 0) throw ShapeError("rate budget is empty");
    for (Eigen::Index i = 0; i < r_.size(); ++i)
      if (!(r_(i) > 0.0) || !std::isfinite(r_(i))) throw DomainError("rate budgets must be positive and finite");
  }

  static RateBudget uniform(int device_count, double rate) { return RateBudget(VectorXd::Constant(device_count, rate)); }

  int size() const { return static_cast<int>(r_.size()); }
  const VectorXd& rates() const { return r_; }
  double operator[](int m) const { return r_(m); }

  double total(DeviceSubset s) const {
    double acc = 0.0;
    for (int m : s.members()) acc += r_(m);
    return acc;
  }

 private:
  VectorXd r_;
};

// Auxiliary-noise variances q_m of the test channels U_m = X_m + V_m.
// +infinity is allowed and marks a silent device.
class MbtcParams {
 public:
  explicit MbtcParams(VectorXd q) : q_(std::move(q)) {
    if (q_.size() == 0) throw ShapeError("MBTC parameters are empty");
    for (Eigen::Index i = 0; i < q_.size(); ++i)
      if (!(q_(i) >= kQMin)) throw DomainError("MBTC parameters must be >= q_min");
  }

  static MbtcParams uniform(int device_count, double value) { return MbtcParams(VectorXd::Constant(device_count, value)); }

  int size() const { return static_cast<int>(q_.size()); }
  const VectorXd& values() const { return q_; }
  double operator[](int m) const { return q_(m); }
  bool all_finite() const { return q_.allFinite(); }

 private:
  VectorXd q_;
};

struct RdTuple {
  VectorXd rates;
  double distortion = 0.0;
};

// Equicorrelated sources with devices partitioned into equal-budget groups.
class SymmetricSourceModel {
 public:
  struct Group {
    int size = 0;
    double rate = 0.0;
  };

  SymmetricSourceModel(double rho, double sigma2, std::vector<Group> groups)
      : rho_(rho), sigma2_(sigma2), groups_(std::move(groups)) {
    if (!(rho_ >= 0.0 && rho_ < 1.0)) throw DomainError("rho must lie in [0, 1)");
    if (!(sigma2_ > 0.0) || !std::isfinite(sigma2_)) throw DomainError("sigma2 must be positive and finite");
    if (groups_.empty()) throw DomainError("at least one group is required");
    for (const auto& g : groups_) {
      if (g.size < 1) throw DomainError("group sizes must be positive");
      if (!(g.rate > 0.0) || !std::isfinite(g.rate)) throw DomainError("group rates must be positive and finite");
      device_count_ += g.size;
    }
    if (device_count_ > 4096) throw SizeError("too many devices");
  }

  double rho() const { return rho_; }
  double sigma2() const { return sigma2_; }
  const std::vector<Group>& groups() const { return groups_; }
  int group_count() const { return static_cast<int>(groups_.size()); }
  int device_count() const { return device_count_; }

  // (1 - rho) * sigma2, the idiosyncratic variance of each source.
  double private_variance() const { return (1.0 - rho_) * sigma2_; }

  MatrixXd covariance() const { return symmetric_covariance(rho_, sigma2_, device_count_); }

  GaussianSourceModel expand(double lambda) const {
    return GaussianSourceModel(covariance(), VectorXd::Constant(device_count_, lambda));
  }

  RateBudget budget() const { return RateBudget(expand_groups([&](int j) { return groups_[static_cast<std::size_t>(j)].rate; })); }

  // Per-device vector whose entries are f(group index); devices are laid out
  // group by group.
  template <class F>
  VectorXd expand_groups(F&& per_group) const {
    VectorXd out(device_count_);
    Eigen::Index k = 0;
    for (int j = 0; j < group_count(); ++j)
      for (int i = 0; i < groups_[static_cast<std::size_t>(j)].size; ++i) out(k++) = per_group(j);
    return out;
  }

 private:
  double rho_;
  double sigma2_;
  std::vector<Group> groups_;
  int device_count_ = 0;
};

}  // namespace fedrd
