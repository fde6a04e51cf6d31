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

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fedrd/errors.hpp"

namespace fedrd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kLog2e = 1.4426950408889634074;

// A set of device indices, stored as a bitmask (bit m <=> device m).
class DeviceSubset {
 public:
  static constexpr int kMaxDevices = 31;

  constexpr DeviceSubset() = default;
  constexpr explicit DeviceSubset(std::uint32_t mask) : mask_(mask) {}

  static constexpr DeviceSubset full(int device_count) {
    return DeviceSubset(device_count >= 32 ? ~0u : ((1u << device_count) - 1u));
  }

  static DeviceSubset of(std::initializer_list<int> devices) {
    std::uint32_t mask = 0;
    for (int m : devices) mask |= 1u << m;
    return DeviceSubset(mask);
  }

  constexpr std::uint32_t mask() const { return mask_; }
  constexpr bool empty() const { return mask_ == 0; }
  constexpr bool contains(int m) const { return (mask_ >> m) & 1u; }
  constexpr int size() const { return std::popcount(mask_); }
  constexpr bool is_full(int device_count) const { return mask_ == full(device_count).mask_; }

  constexpr DeviceSubset complement(int device_count) const {
    return DeviceSubset(~mask_ & full(device_count).mask_);
  }

  std::vector<int> members() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(size()));
    for (std::uint32_t m = mask_; m != 0; m &= m - 1) out.push_back(std::countr_zero(m));
    return out;
  }

  friend constexpr bool operator==(DeviceSubset, DeviceSubset) = default;

 private:
  std::uint32_t mask_ = 0;
};

namespace linalg {

inline MatrixXd select(const MatrixXd& a, const std::vector<int>& rows, const std::vector<int>& cols) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(rows[i], cols[j]);
  return out;
}

inline MatrixXd principal(const MatrixXd& a, const std::vector<int>& idx) { return select(a, idx, idx); }

inline VectorXd gather(const VectorXd& v, const std::vector<int>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

// log2 det(A) for symmetric positive definite A; empty matrix -> 0.
inline std::optional<double> try_log2_det_spd(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  double acc = 0.0;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!(l(i, i) > 0.0)) return std::nullopt;
    acc += std::log2(l(i, i));
  }
  return 2.0 * acc;
}

inline double log2_det_spd(const MatrixXd& a) {
  auto v = try_log2_det_spd(a);
  if (!v) throw DomainError("matrix is not positive definite");
  return *v;
}

inline bool is_positive_definite(const MatrixXd& a) { return try_log2_det_spd(a).has_value(); }

inline MatrixXd inverse_spd(const MatrixXd& a) {
  if (a.size() == 0) return a;
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw DomainError("matrix is not positive definite");
  return llt.solve(MatrixXd::Identity(a.rows(), a.cols()));
}

}  // namespace linalg
}  // namespace fedrd
