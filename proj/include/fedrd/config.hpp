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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedrd/errors.hpp"
#include "fedrd/model.hpp"

namespace fedrd {

inline constexpr const char* kCodeVersion = "0.1.0";

using Json = nlohmann::json;

/// Parameters of one CLI run. The textual form is JSON.
struct ExperimentConfig {
  std::string command;
  Json params = Json::object();
  std::optional<std::uint64_t> seed;
  std::string output_dir;

  Json to_json() const {
    Json j;
    j["command"] = command;
    j["params"] = params;
    j["seed"] = seed ? Json(*seed) : Json(nullptr);
    j["output_dir"] = output_dir;
    return j;
  }

  static ExperimentConfig from_json(const Json& j) {
    try {
      ExperimentConfig c;
      c.command = j.at("command").get<std::string>();
      c.params = j.at("params");
      if (!c.params.is_object()) throw ConfigError("config params must be an object");
      if (!j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
      c.output_dir = j.at("output_dir").get<std::string>();
      return c;
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }
  }

  std::string text() const { return to_json().dump(2); }

  static ExperimentConfig parse(const std::string& text) {
    try {
      return from_json(Json::parse(text));
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }

  /// FNV-1a of the canonical JSON, output location excluded.
  std::string hash() const {
    Json j = to_json();
    j.erase("output_dir");
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : j.dump()) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.command == b.command && a.params == b.params && a.seed == b.seed && a.output_dir == b.output_dir;
  }
};

// Source model read from JSON. Exactly one of the two forms is present:
//   {"sigma_x": [[...], ...], "c": [...]}   (or a flat row-major "sigma_x" with "M")
//   {"rho": r, "sigma2": s, "groups": [{"size": n, "rate": r}, ...], "lambda": l}
struct ModelDocument {
  std::optional<GaussianSourceModel> general;
  std::optional<SymmetricSourceModel> symmetric;
  double lambda = 0.0;

  GaussianSourceModel expanded() const { return general ? *general : symmetric->expand(lambda); }
};

namespace detail {

inline double number_at(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing \"" + key + "\"");
  if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

inline std::vector<double> number_array(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + "[" + std::to_string(i) + "]: expected a number");
    out.push_back(j[i].get<double>());
  }
  return out;
}

}  // namespace detail

inline ModelDocument model_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("model: expected a JSON object");
  ModelDocument doc;
  try {
    if (j.contains("groups")) {
      const Json& g = j.at("groups");
      if (!g.is_array() || g.empty()) throw ConfigError("model.groups: expected a non-empty array");
      std::vector<SymmetricSourceModel::Group> groups;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::string where = "model.groups[" + std::to_string(i) + "]";
        const double size = detail::number_at(g[i], "size", where);
        if (size != std::floor(size) || size < 1 || size > 4096) throw ConfigError(where + ".size: expected a positive integer");
        groups.push_back({static_cast<int>(size), detail::number_at(g[i], "rate", where)});
      }
      doc.symmetric.emplace(detail::number_at(j, "rho", "model"), detail::number_at(j, "sigma2", "model"), std::move(groups));
      doc.lambda = j.contains("lambda") ? detail::number_at(j, "lambda", "model") : 1.0 / doc.symmetric->device_count();
      return doc;
    }
    if (!j.contains("sigma_x")) throw ConfigError("model: expected \"sigma_x\" or \"groups\"");
    const Json& s = j.at("sigma_x");
    MatrixXd sigma;
    if (s.is_array() && !s.empty() && s[0].is_array()) {
      const auto m = static_cast<Eigen::Index>(s.size());
      sigma.resize(m, m);
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto row = detail::number_array(s[static_cast<std::size_t>(r)], "model.sigma_x[" + std::to_string(r) + "]");
        if (static_cast<Eigen::Index>(row.size()) != m) throw ConfigError("model.sigma_x: matrix is not square");
        for (Eigen::Index c = 0; c < m; ++c) sigma(r, c) = row[static_cast<std::size_t>(c)];
      }
    } else {
      const auto flat = detail::number_array(s, "model.sigma_x");
      const double md = detail::number_at(j, "M", "model");
      if (md != std::floor(md) || md < 1) throw ConfigError("model.M: expected a positive integer");
      const auto m = static_cast<Eigen::Index>(md);
      if (static_cast<Eigen::Index>(flat.size()) != m * m) throw ConfigError("model.sigma_x: expected M*M entries");
      sigma.resize(m, m);
      for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < m; ++c) sigma(r, c) = flat[static_cast<std::size_t>(r * m + c)];
    }
    if (!j.contains("c")) throw ConfigError("model: missing \"c\"");
    const auto c = detail::number_array(j.at("c"), "model.c");
    doc.general.emplace(sigma, Eigen::Map<const VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())));
    return doc;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

inline ModelDocument parse_model_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("model is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

/// "1,2.5,3" -> {1, 2.5, 3}
inline std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t next = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, next - pos);
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw ConfigError("");
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse '" + item + "' as a number");
    }
    pos = next + 1;
  }
  return out;
}

}  // namespace fedrd
