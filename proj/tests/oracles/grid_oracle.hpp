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

// Brute-force reference for small problems. Shares no code with the library:
// determinants by cofactor expansion, constraints re-derived from scratch.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline double det(const Mat& a) {
  const std::size_t n = a.size();
  if (n == 0) return 1.0;
  if (n == 1) return a[0][0];
  if (n == 2) return a[0][0] * a[1][1] - a[0][1] * a[1][0];
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    Mat minor;
    for (std::size_t r = 1; r < n; ++r) {
      std::vector<double> row;
      for (std::size_t c = 0; c < n; ++c)
        if (c != j) row.push_back(a[r][c]);
      minor.push_back(row);
    }
    acc += ((j % 2) ? -1.0 : 1.0) * a[0][j] * det(minor);
  }
  return acc;
}

inline Mat sub(const Mat& a, std::uint32_t mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < a.size(); ++i)
    if ((mask >> i) & 1u) idx.push_back(i);
  Mat out(idx.size(), std::vector<double>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out[i][j] = a[idx[i]][idx[j]];
  return out;
}

// I(x_S; u_S | u_{S^c}) for any nonempty S (the full mask gives I(x; u)).
inline double mutual_info(const Mat& sigma, const std::vector<double>& q, std::uint32_t mask) {
  const std::size_t m = sigma.size();
  Mat u = sigma;
  for (std::size_t i = 0; i < m; ++i) u[i][i] += q[i];
  const std::uint32_t full = (1u << m) - 1u;
  double noise = 1.0;
  for (std::size_t i = 0; i < m; ++i)
    if ((mask >> i) & 1u) noise *= q[i];
  return 0.5 * std::log2(det(u) / (det(sub(u, full & ~mask)) * noise));
}

// Inverse by the adjugate, for the distortion only.
inline Mat inverse(const Mat& a) {
  const std::size_t n = a.size();
  const double d = det(a);
  Mat out(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Mat minor;
      for (std::size_t r = 0; r < n; ++r) {
        if (r == j) continue;
        std::vector<double> row;
        for (std::size_t c = 0; c < n; ++c)
          if (c != i) row.push_back(a[r][c]);
        minor.push_back(row);
      }
      out[i][j] = (((i + j) % 2) ? -1.0 : 1.0) * det(minor) / d;
    }
  return out;
}

inline double distortion(const Mat& sigma, const std::vector<double>& c, const std::vector<double>& q) {
  const std::size_t m = sigma.size();
  std::vector<double> sc(m, 0.0);
  double energy = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) sc[i] += sigma[i][j] * c[j];
  for (std::size_t i = 0; i < m; ++i) energy += c[i] * sc[i];
  Mat u = sigma;
  for (std::size_t i = 0; i < m; ++i) u[i][i] += q[i];
  const Mat inv = inverse(u);
  double explained = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) explained += sc[i] * inv[i][j] * sc[j];
  return energy - explained;
}

inline bool feasible(const Mat& sigma, const std::vector<double>& q, const std::vector<double>& r, double tol = 1e-9) {
  const std::size_t m = sigma.size();
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    double budget = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if ((mask >> i) & 1u) budget += r[i];
    if (mutual_info(sigma, q, mask) > budget + tol) return false;
  }
  return true;
}

struct GridResult {
  double distortion = std::numeric_limits<double>::infinity();
  std::vector<double> q;
  long evaluated = 0;
};

// Smallest q_last meeting every constraint that contains the last device
// (those requirements fall as q_last grows); the remaining constraints only
// tighten with q_last, so they are checked at that point.
inline double last_axis(const Mat& sigma, std::vector<double> q, const std::vector<double>& r) {
  const std::size_t m = sigma.size();
  const std::uint32_t bit = 1u << (m - 1);
  auto ok = [&](double v) {
    q[m - 1] = v;
    for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
      if (!(mask & bit)) continue;
      double budget = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        if ((mask >> i) & 1u) budget += r[i];
      if (mutual_info(sigma, q, mask) > budget) return false;
    }
    return true;
  };
  double lo = 1e-12, hi = 1.0;
  while (!ok(hi)) {
    hi *= 2.0;
    if (hi > 1e12) return std::numeric_limits<double>::infinity();
  }
  if (ok(lo)) return lo;
  for (int it = 0; it < 200 && hi / lo > 1.0 + 1e-15; ++it) {
    const double mid = std::sqrt(lo * hi);
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

/// Log-spaced grid (points per axis) on the first M-1 parameters, exact
/// boundary search on the last, then `zooms` refinements of the grid around
/// the incumbent. M in {1, 2, 3}.
inline GridResult grid_search(const Mat& sigma, const std::vector<double>& c, const std::vector<double>& r, int points = 200,
                              int zooms = 3, double lo = 1e-4, double hi = 1e2) {
  const std::size_t m = sigma.size();
  const std::size_t free_axes = m - 1;
  std::vector<double> lows(free_axes, std::log(lo)), highs(free_axes, std::log(hi));
  GridResult best;
  for (int level = 0; level <= zooms; ++level) {
    std::vector<int> idx(free_axes, 0);
    const long total = free_axes == 0 ? 1 : static_cast<long>(std::pow(points, static_cast<double>(free_axes)));
    for (long k = 0; k < total; ++k) {
      long rem = k;
      std::vector<double> q(m, 0.0);
      for (std::size_t a = 0; a < free_axes; ++a) {
        const int i = static_cast<int>(rem % points);
        rem /= points;
        q[a] = std::exp(lows[a] + (highs[a] - lows[a]) * i / (points - 1));
      }
      q[m - 1] = last_axis(sigma, q, r);
      ++best.evaluated;
      if (!std::isfinite(q[m - 1])) continue;
      if (!feasible(sigma, q, r)) continue;
      const double d = distortion(sigma, c, q);
      if (d < best.distortion) {
        best.distortion = d;
        best.q = q;
      }
    }
    if (best.q.empty()) break;
    for (std::size_t a = 0; a < free_axes; ++a) {
      const double step = (highs[a] - lows[a]) / (points - 1);
      const double centre = std::log(best.q[a]);
      lows[a] = centre - 2.0 * step;
      highs[a] = centre + 2.0 * step;
    }
  }
  return best;
}

}  // namespace oracle
