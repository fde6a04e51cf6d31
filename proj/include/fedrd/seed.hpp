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

#include <cstdint>
#include <string_view>
#include <type_traits>

namespace fedrd {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t absorb(std::uint64_t state, std::uint64_t word) {
  return splitmix64(state ^ splitmix64(word + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t absorb_label(std::uint64_t state, std::string_view s) {
  // FNV-1a over the bytes, then length-tagged so "ab","c" != "a","bc".
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return absorb(absorb(state, h), s.size() | (1ULL << 63));
}

template <class T>
constexpr std::uint64_t absorb_any(std::uint64_t state, const T& label) {
  if constexpr (std::is_convertible_v<const T&, std::string_view>) {
    return absorb_label(state, std::string_view(label));
  } else {
    static_assert(std::is_integral_v<T>, "seed labels are strings or integers");
    return absorb(state, static_cast<std::uint64_t>(label));
  }
}

}  // namespace detail

// Derives a child seed from a global seed and a label path. Deterministic;
// distinct label paths give (with overwhelming probability) distinct seeds.
template <class... Labels>
constexpr std::uint64_t seed_stream(std::uint64_t global_seed, const Labels&... labels) {
  std::uint64_t state = detail::splitmix64(global_seed);
  ((state = detail::absorb_any(state, labels)), ...);
  return detail::splitmix64(state ^ sizeof...(Labels));
}

}  // namespace fedrd
