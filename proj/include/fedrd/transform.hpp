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
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fedrd/errors.hpp"
#include "fedrd/linalg.hpp"
#include "fedrd/model.hpp"
#include "fedrd/seed.hpp"

namespace fedrd {

inline constexpr int kDefaultSegmentLength = 1024;

struct MeanRemoved {
  VectorXd centered;
  double mean = 0.0;
};

inline MeanRemoved mean_remove(const VectorXd& g) {
  if (g.size() == 0) throw ShapeError("cannot mean-remove an empty vector");
  const double mean = g.mean();
  return {g.array() - mean, mean};
}

/// Haar-distributed orthogonal matrix in factored form,
/// Q = H_0 H_1 ... H_{n-2} diag(d). Reflector k acts on coordinates k..n-1.
/// The draw matches Householder QR of an i.i.d. Gaussian matrix followed by
/// the sign(diag R) correction, without forming the matrix.
class HaarRotation {
 public:
  HaarRotation(int dim, std::uint64_t seed) : n_(dim) {
    if (dim < 1) throw DomainError("rotation dimension must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    offsets_.reserve(static_cast<std::size_t>(dim));
    reflectors_.reserve(static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim + 1) / 2);
    signs_.resize(dim);
    for (int k = 0; k + 1 < dim; ++k) {
      offsets_.push_back(reflectors_.size());
      const std::size_t start = reflectors_.size();
      double norm2 = 0.0;
      for (int i = k; i < dim; ++i) {
        const double x = normal(rng);
        reflectors_.push_back(x);
        norm2 += x * x;
      }
      const double s = reflectors_[start] >= 0.0 ? 1.0 : -1.0;
      reflectors_[start] += s * std::sqrt(norm2);
      double v2 = 0.0;
      for (std::size_t i = start; i < reflectors_.size(); ++i) v2 += reflectors_[i] * reflectors_[i];
      // Store v scaled so that H = I - v v^T.
      const double scale = v2 > 0.0 ? std::sqrt(2.0 / v2) : 0.0;
      for (std::size_t i = start; i < reflectors_.size(); ++i) reflectors_[i] *= scale;
      signs_(k) = -s;
    }
    signs_(dim - 1) = normal(rng) >= 0.0 ? 1.0 : -1.0;
  }

  int dimension() const { return n_; }

  /// Y <- Q Y, column by column.
  void apply(Eigen::Ref<MatrixXd> y) const {
    y = signs_.asDiagonal() * y;
    for (int k = n_ - 2; k >= 0; --k) reflect(k, y);
  }

  /// Y <- Q^T Y
  void apply_transpose(Eigen::Ref<MatrixXd> y) const {
    for (int k = 0; k + 1 < n_; ++k) reflect(k, y);
    y = signs_.asDiagonal() * y;
  }

  MatrixXd matrix() const {
    MatrixXd q = MatrixXd::Identity(n_, n_);
    apply(q);
    return q;
  }

 private:
  void reflect(int k, Eigen::Ref<MatrixXd> y) const {
    const int len = n_ - k;
    const Eigen::Map<const VectorXd> v(reflectors_.data() + offsets_[static_cast<std::size_t>(k)], len);
    auto tail = y.bottomRows(len);
    const Eigen::RowVectorXd dot = v.transpose() * tail;
    tail.noalias() -= v * dot;
  }

  int n_;
  std::vector<std::size_t> offsets_;
  std::vector<double> reflectors_;
  VectorXd signs_;
};

/// Dense Haar sample: QR of an i.i.d. standard Gaussian matrix with
/// Q <- Q sign(diag R).
template <class Rng>
MatrixXd haar_matrix_qr(int dim, Rng& rng) {
  std::normal_distribution<double> normal;
  MatrixXd a(dim, dim);
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < dim; ++i) a(i, j) = normal(rng);
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ();
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline std::uint64_t segment_seed(std::uint64_t seed, std::int64_t segment, std::int64_t dim) {
  return seed_stream(seed, "haar", segment, dim);
}

namespace detail {

inline void check_segment_length(int segment_len) {
  if (segment_len < 1) throw DomainError("segment length must be positive");
}

// Applies the per-segment rotations (or their transposes) to every vector.
inline void rotate_segments(std::span<VectorXd> vectors, std::uint64_t seed, int segment_len, bool transpose) {
  check_segment_length(segment_len);
  if (vectors.empty()) return;
  const Eigen::Index n = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != n) throw ShapeError("vectors differ in length");
  std::int64_t index = 0;
  for (Eigen::Index start = 0; start < n; start += segment_len, ++index) {
    const int len = static_cast<int>(std::min<Eigen::Index>(segment_len, n - start));
    const HaarRotation q(len, segment_seed(seed, index, len));
    MatrixXd block(len, static_cast<Eigen::Index>(vectors.size()));
    for (std::size_t m = 0; m < vectors.size(); ++m) block.col(static_cast<Eigen::Index>(m)) = vectors[m].segment(start, len);
    if (transpose)
      q.apply_transpose(block);
    else
      q.apply(block);
    for (std::size_t m = 0; m < vectors.size(); ++m) vectors[m].segment(start, len) = block.col(static_cast<Eigen::Index>(m));
  }
}

}  // namespace detail

/// x = A g_tilde with A block-diagonal, one Haar block per segment.
inline VectorXd haar_rotate(const VectorXd& g_tilde, std::uint64_t seed, int segment_len = kDefaultSegmentLength) {
  VectorXd out = g_tilde;
  detail::rotate_segments(std::span<VectorXd>(&out, 1), seed, segment_len, false);
  return out;
}

inline VectorXd haar_rotate_transpose(const VectorXd& x, std::uint64_t seed, int segment_len = kDefaultSegmentLength) {
  VectorXd out = x;
  detail::rotate_segments(std::span<VectorXd>(&out, 1), seed, segment_len, true);
  return out;
}

// Rotated, mean-removed updates of M devices sharing one rotation.
struct DeviceUpdateBatch {
  std::vector<VectorXd> updates;
  VectorXd means;
  std::uint64_t rotation_seed = 0;
  int segment_len = kDefaultSegmentLength;

  int device_count() const { return static_cast<int>(updates.size()); }
  Eigen::Index length() const { return updates.empty() ? 0 : updates.front().size(); }
};

inline DeviceUpdateBatch preprocess(std::span<const VectorXd> raw, std::uint64_t seed,
                                    int segment_len = kDefaultSegmentLength) {
  if (raw.empty()) throw ShapeError("no device updates");
  DeviceUpdateBatch batch;
  batch.rotation_seed = seed;
  batch.segment_len = segment_len;
  batch.means.resize(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t m = 0; m < raw.size(); ++m) {
    if (raw[m].size() != raw.front().size()) throw ShapeError("device updates differ in length");
    auto [centered, mean] = mean_remove(raw[m]);
    batch.updates.push_back(std::move(centered));
    batch.means(static_cast<Eigen::Index>(m)) = mean;
  }
  detail::rotate_segments(batch.updates, seed, segment_len, false);
  return batch;
}

/// g_hat = A^T x_hat + (sum_m c_m mean_m) 1.
inline VectorXd inverse_transform(const VectorXd& x_hat, const VectorXd& means, const VectorXd& c, std::uint64_t seed,
                                  int segment_len, std::optional<Eigen::Index> expected_length = std::nullopt) {
  if (means.size() != c.size()) throw ShapeError("means and coefficients differ in length");
  if (expected_length && x_hat.size() != *expected_length) throw ShapeError("estimate length does not match the forward pass");
  VectorXd out = haar_rotate_transpose(x_hat, seed, segment_len);
  out.array() += c.dot(means);
  return out;
}

/// inverse_transform applied in place to several estimates of one batch.
inline void inverse_transform_many(std::span<VectorXd> x_hats, const DeviceUpdateBatch& batch, const VectorXd& c) {
  if (batch.means.size() != c.size()) throw ShapeError("means and coefficients differ in length");
  for (const auto& x : x_hats)
    if (x.size() != batch.length()) throw ShapeError("estimate length does not match the forward pass");
  detail::rotate_segments(x_hats, batch.rotation_seed, batch.segment_len, true);
  const double offset = c.dot(batch.means);
  for (auto& x : x_hats) x.array() += offset;
}

inline VectorXd inverse_transform(const VectorXd& x_hat, const DeviceUpdateBatch& batch, const VectorXd& c) {
  return inverse_transform(x_hat, batch.means, c, batch.rotation_seed, batch.segment_len, batch.length());
}

// g_m = sum_k e_{m,k} p_k with independent p_k of per-element energy tau_k^2.
struct FactorSourceSpec {
  MatrixXd coefficients;  // M x K
  VectorXd taus;          // K
  // p_1 = tau_1 (fixed sparse spike pattern + Gaussian) / sqrt(2).
  bool anisotropic_first = false;
  // p_k with i.i.d. unit-variance Laplace elements instead of Gaussian.
  bool heavy_tailed = false;

  void validate() const {
    if (coefficients.rows() < 1 || coefficients.cols() < 1) throw DomainError("coefficients must be M x K with K >= 1");
    if (taus.size() != coefficients.cols()) throw ShapeError("one tau per component is required");
    for (Eigen::Index k = 0; k < taus.size(); ++k)
      if (!(taus(k) > 0.0) || !std::isfinite(taus(k))) throw DomainError("taus must be positive");
    if (!coefficients.allFinite()) throw DomainError("coefficients must be finite");
  }
};

/// e = [sqrt(rho) | sqrt(1 - rho) I], tau = 1: pairwise correlation rho, unit variance.
inline FactorSourceSpec symmetric_spec(int device_count, double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("rho must lie in [0, 1)");
  FactorSourceSpec spec;
  spec.coefficients = MatrixXd::Zero(device_count, device_count + 1);
  spec.coefficients.col(0).setConstant(std::sqrt(rho));
  spec.coefficients.rightCols(device_count).diagonal().setConstant(std::sqrt(1.0 - rho));
  spec.taus = VectorXd::Ones(device_count + 1);
  return spec;
}

/// E diag(tau^2) E^T
inline MatrixXd factor_covariance(const FactorSourceSpec& spec) {
  spec.validate();
  return spec.coefficients * spec.taus.cwiseAbs2().asDiagonal() * spec.coefficients.transpose();
}

/// sum_k e_{m,k} p_k before mean removal.
inline std::vector<VectorXd> factor_sources_raw(const FactorSourceSpec& spec, Eigen::Index n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw DomainError("vector length must be positive");
  const Eigen::Index m = spec.coefficients.rows();
  const Eigen::Index k = spec.coefficients.cols();
  std::vector<VectorXd> out(static_cast<std::size_t>(m), VectorXd::Zero(n));
  VectorXd p(n);
  for (Eigen::Index j = 0; j < k; ++j) {
    std::mt19937_64 rng(seed_stream(seed, "factor", j));
    std::normal_distribution<double> normal;
    std::exponential_distribution<double> expo(std::sqrt(2.0));
    for (Eigen::Index i = 0; i < n; ++i) {
      if (spec.heavy_tailed) {
        const double e = expo(rng);
        p(i) = (rng() & 1u) ? e : -e;
      } else {
        p(i) = normal(rng);
      }
    }
    if (j == 0 && spec.anisotropic_first) {
      for (Eigen::Index i = 0; i < n; ++i) p(i) = (p(i) + (i % 16 == 0 ? 4.0 : 0.0)) / std::sqrt(2.0);
    }
    if (spec.taus(j) != 1.0) p *= spec.taus(j);
    for (Eigen::Index d = 0; d < m; ++d)
      if (spec.coefficients(d, j) != 0.0) out[static_cast<std::size_t>(d)] += spec.coefficients(d, j) * p;
  }
  return out;
}

inline std::vector<VectorXd> factor_sources(const FactorSourceSpec& spec, Eigen::Index n, std::uint64_t seed) {
  auto out = factor_sources_raw(spec, n, seed);
  for (auto& v : out) v = mean_remove(v).centered;
  return out;
}

inline double excess_kurtosis(const VectorXd& v) {
  if (v.size() < 2) throw ShapeError("kurtosis needs at least two samples");
  const VectorXd d = v.array() - v.mean();
  const double m2 = d.squaredNorm() / static_cast<double>(d.size());
  if (m2 == 0.0) return 0.0;
  const double m4 = d.array().square().square().sum() / static_cast<double>(d.size());
  return m4 / (m2 * m2) - 3.0;
}

struct GaussianizationReport {
  double covariance_error = 0.0;  // rotated vs pre-rotation empirical covariance
  std::optional<double> model_covariance_error;
  std::vector<double> excess_kurtosis;
};

inline GaussianizationReport gaussianization_check(std::span<const VectorXd> pre_rotation, std::span<const VectorXd> rotated,
                                                   const std::optional<MatrixXd>& model_covariance = std::nullopt) {
  if (rotated.empty() || rotated.size() != pre_rotation.size()) throw ShapeError("pre/post rotation sets differ in size");
  GaussianizationReport out;
  const MatrixXd post = empirical_covariance(rotated);
  out.covariance_error = (post - empirical_covariance(pre_rotation)).cwiseAbs().maxCoeff();
  if (model_covariance) {
    if (model_covariance->rows() != post.rows() || model_covariance->cols() != post.cols()) throw ShapeError("model covariance size");
    out.model_covariance_error = (post - *model_covariance).cwiseAbs().maxCoeff();
  }
  for (const auto& v : rotated) out.excess_kurtosis.push_back(excess_kurtosis(v));
  return out;
}

}  // namespace fedrd
