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
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedrd/errors.hpp"
#include "fedrd/mm_general.hpp"
#include "fedrd/mm_symmetric.hpp"
#include "fedrd/model.hpp"
#include "fedrd/region.hpp"
#include "fedrd/seed.hpp"
#include "fedrd/transform.hpp"

namespace fedrd {

inline double measure_distortion(const VectorXd& target, const VectorXd& estimate) {
  if (target.size() != estimate.size() || target.size() == 0) throw ShapeError("target and estimate differ in length");
  return (target - estimate).squaredNorm() / static_cast<double>(target.size());
}

/// y_m = sqrt(rho) s + sqrt(1 - rho) w_m with i.i.d. standard Gaussian s, w_m.
inline std::vector<VectorXd> synthetic_sources(double rho, int device_count, Eigen::Index n, std::uint64_t seed) {
  if (device_count < 1 || n < 1) throw DomainError("M and N must be positive");
  return factor_sources_raw(symmetric_spec(device_count, rho), n, seed);
}

inline VectorXd weighted_sum(std::span<const VectorXd> vectors, const VectorXd& c) {
  if (vectors.empty() || static_cast<Eigen::Index>(vectors.size()) != c.size()) throw ShapeError("one weight per vector is required");
  VectorXd out = VectorXd::Zero(vectors.front().size());
  for (std::size_t m = 0; m < vectors.size(); ++m) {
    if (vectors[m].size() != out.size()) throw ShapeError("vectors differ in length");
    out += c(static_cast<Eigen::Index>(m)) * vectors[m];
  }
  return out;
}

/// Elementwise w^T (x + v) with v_m ~ N(0, q_m I) and w the MMSE combiner.
inline VectorXd mbtc_noise_surrogate(std::span<const VectorXd> x, const GaussianSourceModel& model, const MbtcParams& q,
                                     std::uint64_t seed) {
  if (static_cast<int>(x.size()) != model.device_count() || q.size() != model.device_count())
    throw ShapeError("device count does not match the model");
  const VectorXd w = mmse_combiner(model, q);
  VectorXd out = VectorXd::Zero(x.front().size());
  for (int m = 0; m < model.device_count(); ++m) {
    const VectorXd& xm = x[static_cast<std::size_t>(m)];
    if (xm.size() != out.size()) throw ShapeError("vectors differ in length");
    if (w(m) == 0.0) continue;
    std::mt19937_64 rng(seed_stream(seed, "mbtc-noise", m));
    std::normal_distribution<double> normal(0.0, std::sqrt(q[m]));
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += w(m) * (xm(i) + normal(rng));
  }
  return out;
}

struct AggregationResult {
  VectorXd estimate;
  VectorXd target;
  double empirical_distortion = 0.0;
  VectorXd rate_report;  // bits/symbol charged per device
  double predicted_distortion = std::numeric_limits<double>::quiet_NaN();
  VectorXd q_star;
};

enum class OptimizerChoice { general, symmetric };

namespace detail {

// Symmetric fit of an empirical covariance: devices with equal budgets form a
// group; rho and sigma2 are averages of the empirical entries.
inline MbtcParams symmetric_fit(const GaussianSourceModel& model, const RateBudget& budget) {
  const int m = model.device_count();
  const VectorXd& c = model.target();
  for (int i = 1; i < m; ++i)
    if (c(i) != c(0)) throw PreconditionError("the symmetric optimizer needs equal target coefficients");
  const MatrixXd& s = model.covariance();
  const double sigma2 = s.trace() / m;
  double rho = 0.0;
  if (m > 1) rho = (s.sum() - s.trace()) / (static_cast<double>(m) * (m - 1)) / sigma2;
  rho = std::clamp(rho, 0.0, 1.0 - 1e-9);

  std::vector<double> rates;
  std::vector<int> group_of(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    auto it = std::find(rates.begin(), rates.end(), budget[i]);
    group_of[static_cast<std::size_t>(i)] = static_cast<int>(it - rates.begin());
    if (it == rates.end()) rates.push_back(budget[i]);
  }
  std::vector<SymmetricSourceModel::Group> groups;
  for (double r : rates) groups.push_back({0, r});
  for (int g : group_of) ++groups[static_cast<std::size_t>(g)].size;
  const SymmetricSourceModel sym(rho, sigma2, groups);
  const VectorXd qg = optimize_symmetric(sym, c(0) == 0.0 ? 1.0 : c(0)).q_groups;
  VectorXd q(m);
  for (int i = 0; i < m; ++i) q(i) = qg(group_of[static_cast<std::size_t>(i)]);
  // The fit is only approximate; inflate q until the empirical model agrees.
  if (m <= kMaxEnumeratedDevices)
    for (int k = 0; k < 10000 && !is_feasible(model, MbtcParams(q), budget).feasible; ++k) q *= 1.001;
  return MbtcParams(q);
}

}  // namespace detail

// MBTC estimate in the rotated domain, before the inverse transform.
struct RotatedEstimate {
  VectorXd x_hat;
  VectorXd rate_report;
  double predicted_distortion = 0.0;
  VectorXd q_star;
};

inline RotatedEstimate mbtc_estimate_rotated(const DeviceUpdateBatch& batch, const VectorXd& c, const RateBudget& budget,
                                             OptimizerChoice choice, std::uint64_t seed) {
  const int m = batch.device_count();
  if (m < 1 || c.size() != m || budget.size() != m) throw ShapeError("batch, weights and budget disagree on M");
  const MatrixXd cov = empirical_covariance(batch.updates);
  const double scale = cov.trace() / m;
  if (!(scale > 0.0))
    return {VectorXd::Zero(batch.length()), VectorXd::Zero(m), 0.0,
            VectorXd::Constant(m, std::numeric_limits<double>::infinity())};
  // Rates are invariant under a common rescaling of Sigma_X and q.
  const GaussianSourceModel normalized(cov / scale, c);
  const MbtcParams qn = choice == OptimizerChoice::general ? optimize(normalized, budget).q_star
                                                           : detail::symmetric_fit(normalized, budget);
  const GaussianSourceModel model(cov, c);
  const MbtcParams q(qn.values() * scale);
  RotatedEstimate out;
  out.x_hat = mbtc_noise_surrogate(batch.updates, model, q, seed);
  out.predicted_distortion = distortion(model, q);
  out.rate_report = m <= kMaxEnumeratedDevices ? charged_rates(model, q, budget) : budget.rates();
  out.q_star = q.values();
  return out;
}

/// MBTC pipeline on a preprocessed batch: empirical Sigma_X, optimizer,
/// noise surrogate, inverse transform. Rates are charged analytically.
inline AggregationResult mbtc_aggregate(const DeviceUpdateBatch& batch, const VectorXd& c, const RateBudget& budget,
                                        OptimizerChoice choice, std::uint64_t seed) {
  RotatedEstimate r = mbtc_estimate_rotated(batch, c, budget, choice, seed);
  std::vector<VectorXd> pair{weighted_sum(batch.updates, c), std::move(r.x_hat)};
  inverse_transform_many(pair, batch, c);
  AggregationResult out;
  out.target = std::move(pair[0]);
  out.estimate = std::move(pair[1]);
  out.empirical_distortion = measure_distortion(out.target, out.estimate);
  out.rate_report = std::move(r.rate_report);
  out.predicted_distortion = r.predicted_distortion;
  out.q_star = std::move(r.q_star);
  return out;
}

struct QuantizedVector {
  VectorXd values;
  double bits_per_symbol = 0.0;
};

/// Unbiased stochastic quantization to s levels of |v_i| / ||v||, fixed-width
/// sign + level code plus one 64-bit norm.
inline QuantizedVector qsgd_quantize(const VectorXd& v, int s, std::uint64_t seed) {
  if (s < 1) throw DomainError("QSGD needs at least one level");
  if (v.size() == 0) throw ShapeError("empty vector");
  const double n = static_cast<double>(v.size());
  const double norm = v.norm();
  if (norm == 0.0) return {v, 64.0 / n};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double scaled = std::abs(v(i)) / norm * s;
    double level = std::floor(scaled);
    if (uniform(rng) < scaled - level) level += 1.0;
    out(i) = v(i) == 0.0 ? 0.0 : std::copysign(norm * level / s, v(i));
  }
  const double width = 1.0 + std::ceil(std::log2(static_cast<double>(s) + 1.0));
  return {out, width + 64.0 / n};
}

namespace detail {

// Midpoint uniform quantizer on [-4 sigma, 4 sigma] with 2^bits cells;
// sigma is the RMS of the vector.
inline VectorXd uniform_quantize_rms(const VectorXd& x, int bits) {
  const double sigma = x.norm() / std::sqrt(static_cast<double>(x.size()));
  if (sigma == 0.0) return x;
  const double cells = std::ldexp(1.0, bits);
  const double step = 8.0 * sigma / cells;
  VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double k = std::clamp(std::floor((x(i) + 4.0 * sigma) / step), 0.0, cells - 1.0);
    out(i) = -4.0 * sigma + (k + 0.5) * step;
  }
  return out;
}

inline void check_uniform_bits(int bits) {
  if (bits < 1 || bits > 30) throw DomainError("uniform quantizer bits must lie in [1, 30]");
}

}  // namespace detail

inline QuantizedVector rotated_uniform_quantize(const VectorXd& v, int bits, std::uint64_t seed,
                                                int segment_len = kDefaultSegmentLength) {
  detail::check_uniform_bits(bits);
  if (v.size() == 0) throw ShapeError("empty vector");
  const VectorXd x = haar_rotate(v, seed, segment_len);
  return {haar_rotate_transpose(detail::uniform_quantize_rms(x, bits), seed, segment_len),
          bits + 64.0 / static_cast<double>(v.size())};
}

inline VectorXd baseline_aggregate(std::span<const VectorXd> quantized, const VectorXd& c) { return weighted_sum(quantized, c); }

struct BaselineResult {
  VectorXd estimate;
  VectorXd rate_report;
};

/// QSGD on every device, then the weighted sum.
inline BaselineResult qsgd_aggregate(std::span<const VectorXd> updates, const VectorXd& c, int s, std::uint64_t seed) {
  std::vector<VectorXd> q;
  VectorXd rates(static_cast<Eigen::Index>(updates.size()));
  for (std::size_t m = 0; m < updates.size(); ++m) {
    auto r = qsgd_quantize(updates[m], s, seed_stream(seed, "qsgd", m));
    rates(static_cast<Eigen::Index>(m)) = r.bits_per_symbol;
    q.push_back(std::move(r.values));
  }
  return {baseline_aggregate(q, c), rates};
}

/// Rotated uniform quantization on every device with one shared rotation;
/// the weighted sum is formed before the (linear) inverse rotation, which
/// equals summing the per-device reconstructions.
inline BaselineResult rotated_uniform_aggregate(std::span<const VectorXd> updates, const VectorXd& c, int bits,
                                                std::uint64_t seed, int segment_len = kDefaultSegmentLength) {
  detail::check_uniform_bits(bits);
  if (updates.empty() || static_cast<Eigen::Index>(updates.size()) != c.size()) throw ShapeError("one weight per vector is required");
  std::vector<VectorXd> rotated(updates.begin(), updates.end());
  detail::rotate_segments(rotated, seed, segment_len, false);
  VectorXd rates(c.size());
  for (std::size_t m = 0; m < rotated.size(); ++m) {
    rotated[m] = detail::uniform_quantize_rms(rotated[m], bits);
    rates(static_cast<Eigen::Index>(m)) = bits + 64.0 / static_cast<double>(rotated[m].size());
  }
  return {haar_rotate_transpose(weighted_sum(rotated, c), seed, segment_len), rates};
}

// Finest QSGD level count / uniform width whose charged rate stays within
// R + 64/N; the coarsest setting when none does.
inline int qsgd_levels_for_rate(double rate_bits) {
  int s = 1;
  while (1.0 + std::ceil(std::log2(2.0 * s + 2.0)) <= rate_bits) s = 2 * s + 1;
  return s;
}

inline int uniform_bits_for_rate(double rate_bits) { return std::clamp(static_cast<int>(std::floor(rate_bits)), 1, 30); }

struct SweepConfig {
  std::vector<double> rhos;
  std::vector<double> rates;
  int devices = 10;
  Eigen::Index length = Eigen::Index{1} << 17;
  std::uint64_t seed = 0;
  std::vector<std::string> schemes{"mbtc", "qsgd", "uniform"};
  int segment_len = kDefaultSegmentLength;
};

struct SweepRow {
  std::string scheme;
  double rho = 0.0;
  double rate_bits = 0.0;          // nominal per-device rate
  double charged_rate_bits = 0.0;  // mean per-device rate actually charged
  double distortion = 0.0;
  double predicted_distortion = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
};

/// Distortion of each scheme on synthetic sources with target (1/M) sum y_m.
/// Rows are ordered by (rho, rate, scheme) grid index.
inline std::vector<SweepRow> distortion_sweep(const SweepConfig& cfg) {
  for (const auto& s : cfg.schemes)
    if (s != "mbtc" && s != "qsgd" && s != "uniform") throw ConfigError("unknown scheme '" + s + "'");
  for (double r : cfg.rates)
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("rates must be positive");
  if (cfg.devices < 1 || cfg.length < 1) throw ConfigError("M and N must be positive");
  const auto uses = [&](const char* name) { return std::find(cfg.schemes.begin(), cfg.schemes.end(), name) != cfg.schemes.end(); };
  const int m = cfg.devices;
  const VectorXd c = VectorXd::Constant(m, 1.0 / m);
  const std::size_t nr = cfg.rates.size();
  std::vector<SweepRow> rows;
  for (std::size_t ri = 0; ri < cfg.rhos.size(); ++ri) {
    const double rho = cfg.rhos[ri];
    const std::uint64_t point_seed = seed_stream(cfg.seed, "rho", ri);
    const auto sources = synthetic_sources(rho, m, cfg.length, seed_stream(point_seed, "sources"));
    const VectorXd target = weighted_sum(sources, c);
    auto run_seed = [&](const char* scheme, std::size_t k) { return seed_stream(point_seed, scheme, k); };

    // One forward and one (batched) inverse rotation per scheme and rho.
    std::map<std::string, std::vector<SweepRow>> by_scheme;
    if (uses("mbtc")) {
      const DeviceUpdateBatch batch = preprocess(sources, seed_stream(point_seed, "rotation"), cfg.segment_len);
      std::vector<VectorXd> estimates;
      for (std::size_t k = 0; k < nr; ++k) {
        auto r = mbtc_estimate_rotated(batch, c, RateBudget::uniform(m, cfg.rates[k]), OptimizerChoice::general, run_seed("mbtc", k));
        by_scheme["mbtc"].push_back({"mbtc", rho, cfg.rates[k], r.rate_report.mean(), 0.0, r.predicted_distortion, cfg.seed});
        estimates.push_back(std::move(r.x_hat));
      }
      inverse_transform_many(estimates, batch, c);
      for (std::size_t k = 0; k < nr; ++k) by_scheme["mbtc"][k].distortion = measure_distortion(target, estimates[k]);
    }
    if (uses("qsgd")) {
      for (std::size_t k = 0; k < nr; ++k) {
        const auto r = qsgd_aggregate(sources, c, qsgd_levels_for_rate(cfg.rates[k]), run_seed("qsgd", k));
        by_scheme["qsgd"].push_back({"qsgd", rho, cfg.rates[k], r.rate_report.mean(), measure_distortion(target, r.estimate),
                                     std::numeric_limits<double>::quiet_NaN(), cfg.seed});
      }
    }
    if (uses("uniform")) {
      const std::uint64_t rot = seed_stream(point_seed, "uniform-rotation");
      std::vector<VectorXd> rotated(sources.begin(), sources.end());
      detail::rotate_segments(rotated, rot, cfg.segment_len, false);
      std::vector<VectorXd> estimates;
      for (std::size_t k = 0; k < nr; ++k) {
        const int bits = uniform_bits_for_rate(cfg.rates[k]);
        std::vector<VectorXd> quantized;
        for (const auto& x : rotated) quantized.push_back(detail::uniform_quantize_rms(x, bits));
        estimates.push_back(baseline_aggregate(quantized, c));
        by_scheme["uniform"].push_back({"uniform", rho, cfg.rates[k], bits + 64.0 / static_cast<double>(cfg.length), 0.0,
                                        std::numeric_limits<double>::quiet_NaN(), cfg.seed});
      }
      detail::rotate_segments(estimates, rot, cfg.segment_len, true);
      for (std::size_t k = 0; k < nr; ++k) by_scheme["uniform"][k].distortion = measure_distortion(target, estimates[k]);
    }
    for (std::size_t k = 0; k < nr; ++k)
      for (const auto& scheme : cfg.schemes) rows.push_back(by_scheme[scheme][k]);
  }
  return rows;
}

}  // namespace fedrd
