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
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "fedrd/errors.hpp"
#include "fedrd/transform.hpp"

// Binary batch container, all fields little-endian:
//   u64 M, u64 N, u64 segment_len, u64 seed,
//   M x N f64 rotated updates (device-major), M f64 means.

namespace fedrd::io {

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ShapeError("batch container is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void write_batch(std::ostream& os, const DeviceUpdateBatch& batch) {
  const auto m = static_cast<std::uint64_t>(batch.device_count());
  const auto n = static_cast<std::uint64_t>(batch.length());
  if (batch.means.size() != static_cast<Eigen::Index>(m)) throw ShapeError("one mean per device is required");
  detail::put_u64(os, m);
  detail::put_u64(os, n);
  detail::put_u64(os, static_cast<std::uint64_t>(batch.segment_len));
  detail::put_u64(os, batch.rotation_seed);
  for (const auto& v : batch.updates) {
    if (static_cast<std::uint64_t>(v.size()) != n) throw ShapeError("updates differ in length");
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f64(os, v(i));
  }
  for (Eigen::Index i = 0; i < batch.means.size(); ++i) detail::put_f64(os, batch.means(i));
  if (!os) throw ShapeError("failed to write batch container");
}

inline DeviceUpdateBatch read_batch(std::istream& is) {
  const std::uint64_t m = detail::get_u64(is);
  const std::uint64_t n = detail::get_u64(is);
  const std::uint64_t seg = detail::get_u64(is);
  DeviceUpdateBatch batch;
  batch.rotation_seed = detail::get_u64(is);
  if (m == 0 || n == 0 || seg == 0 || m > (1u << 20) || seg > (1u << 30)) throw ShapeError("batch header is invalid");
  batch.segment_len = static_cast<int>(seg);
  for (std::uint64_t d = 0; d < m; ++d) {
    VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = detail::get_f64(is);
    batch.updates.push_back(std::move(v));
  }
  batch.means.resize(static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < batch.means.size(); ++i) batch.means(i) = detail::get_f64(is);
  return batch;
}

}  // namespace fedrd::io
