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
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedrd/aggregation.hpp"
#include "fedrd/config.hpp"
#include "fedrd/csv.hpp"
#include "fedrd/errors.hpp"
#include "fedrd/fl_harness.hpp"
#include "fedrd/mm_general.hpp"
#include "fedrd/mm_symmetric.hpp"
#include "fedrd/region.hpp"
#include "fedrd/transform.hpp"

namespace fedrd::cli {

enum ExitCode : int { kOk = 0, kFailed = 1, kUsage = 2, kConfig = 3, kNumeric = 4 };

inline constexpr const char* kOutDirEnv = "FEDRD_OUT_DIR";

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path output_dir(const std::string& flag) {
  std::filesystem::path dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  return os;
}

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vector_json(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v(i)));
  return a;
}

inline void write_meta(const std::filesystem::path& p, const ExperimentConfig& cfg, const Json& summary) {
  Json meta;
  meta["config"] = cfg.to_json();
  meta["config_hash"] = cfg.hash();
  meta["seed"] = cfg.seed ? Json(*cfg.seed) : Json(nullptr);
  meta["code_version"] = kCodeVersion;
  meta["summary"] = summary;
  auto os = open_out(p);
  os << meta.dump(2) << '\n';
}

inline std::string subset_label(DeviceSubset s) {
  std::string out;
  for (int m : s.members()) {
    if (!out.empty()) out += ' ';
    out += std::to_string(m);
  }
  return out;
}

}  // namespace detail

struct OptimizeArgs {
  std::string model;
  std::vector<double> budget;
  bool symmetric = false;
  std::optional<double> lambda;
  double eps = 1e-6;
  int max_iter = 200;
  std::string out;
};

inline int run_optimize(const OptimizeArgs& a, std::ostream& out) {
  const std::string text = detail::read_file(a.model);
  ModelDocument doc = parse_model_json(text);
  if (a.lambda) {
    if (!doc.symmetric) throw ConfigError("--lambda applies to symmetric models only");
    doc.lambda = *a.lambda;
  }
  if (a.symmetric && !doc.symmetric) throw ConfigError("--symmetric needs a model with \"groups\"");
  if (a.eps <= 0.0 || a.max_iter < 1) throw ConfigError("--eps must be positive and --max-iter at least 1");
  const MmOptions opt{a.eps, a.max_iter, 1e-8};

  ExperimentConfig cfg;
  cfg.command = "optimize";
  cfg.params = {{"model", Json::parse(text)},
                {"budget", a.budget},
                {"symmetric", a.symmetric},
                {"lambda", doc.symmetric ? Json(doc.lambda) : Json(nullptr)},
                {"eps", a.eps},
                {"max_iter", a.max_iter}};
  const auto dir = detail::output_dir(a.out);
  cfg.output_dir = dir.string();

  Json result;
  std::vector<MmIteration> trace;
  if (a.symmetric) {
    if (!a.budget.empty()) throw ConfigError("--budget is taken from the model groups with --symmetric");
    const SymmetricResult r = optimize_symmetric(*doc.symmetric, doc.lambda, opt);
    result["algorithm"] = "symmetric";
    result["q_groups"] = detail::vector_json(r.q_groups);
    result["q_star"] = detail::vector_json(r.q_star.values());
    result["D_star"] = r.d_star;
    result["iterations"] = r.iterations;
    result["converged"] = r.converged;
    result["constraint_count"] = r.constraint_count;
    trace = r.trace;
  } else {
    const GaussianSourceModel model = doc.expanded();
    VectorXd rates;
    if (!a.budget.empty()) {
      rates = Eigen::Map<const VectorXd>(a.budget.data(), static_cast<Eigen::Index>(a.budget.size()));
    } else if (doc.symmetric) {
      rates = doc.symmetric->budget().rates();
    } else {
      throw ConfigError("--budget is required for a general model");
    }
    if (rates.size() == 1 && model.device_count() > 1) rates = VectorXd::Constant(model.device_count(), rates(0));
    if (rates.size() != model.device_count()) throw ConfigError("--budget needs one rate per device (or a single rate)");
    RateBudget budget = [&] {
      try {
        return RateBudget(rates);
      } catch (const Error& e) {
        throw ConfigError(std::string("--budget: ") + e.what());
      }
    }();
    if (model.device_count() > kMaxEnumeratedDevices) throw ConfigError("general optimization supports at most 25 devices");
    const MmResult r = optimize(model, budget, opt);
    result["algorithm"] = "general";
    result["q_star"] = detail::vector_json(r.q_star.values());
    result["D_star"] = r.d_star;
    result["iterations"] = r.iterations;
    result["converged"] = r.converged;
    result["constraint_count"] = (1u << model.device_count()) - 1u;
    result["charged_rates"] = detail::vector_json(charged_rates(model, r.q_star, budget));
    trace = r.trace;
  }
  Json jt = Json::array();
  for (const auto& it : trace)
    jt.push_back({{"iteration", it.iteration},
                  {"objective", it.objective},
                  {"distortion", it.distortion},
                  {"worst_slack", detail::finite_or_null(it.worst_slack)},
                  {"objective_gap", detail::finite_or_null(it.objective_gap)},
                  {"constraint_gap", detail::finite_or_null(it.constraint_gap)}});
  result["trace"] = jt;

  {
    auto os = detail::open_out(dir / "optimize_result.json");
    os << result.dump(2) << '\n';
  }
  {
    auto os = detail::open_out(dir / "optimize_trace.csv");
    io::CsvWriter w(os);
    w.row({"iteration", "objective", "distortion_sq_err_per_symbol", "worst_slack_bits_per_symbol", "objective_gap",
           "constraint_gap_bits_per_symbol"});
    for (const auto& it : trace) {
      w.field(it.iteration).field(it.objective).field(it.distortion).field(it.worst_slack).field(it.objective_gap).field(it.constraint_gap);
      w.end_row();
    }
  }
  detail::write_meta(dir / "optimize.meta.json", cfg, {{"D_star", result["D_star"]}, {"iterations", result["iterations"]}});
  out << "D_star=" << io::format_double(result["D_star"].get<double>()) << " iterations=" << result["iterations"].get<int>()
      << " out=" << dir.string() << '\n';
  return kOk;
}

struct SweepArgs {
  std::vector<double> rhos;
  std::vector<double> rates;
  int devices = 10;
  std::int64_t length = std::int64_t{1} << 17;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> schemes{"mbtc", "qsgd", "uniform"};
  int segment_len = kDefaultSegmentLength;
  std::string out;
};

inline int run_sweep(const SweepArgs& a, std::ostream& out) {
  if (!a.seed) throw ConfigError("--seed is required");
  if (a.rhos.empty() || a.rates.empty()) throw ConfigError("--rho and --rates need at least one value");
  for (double r : a.rhos)
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("--rho values must lie in [0, 1)");
  if (a.devices < 1 || a.devices > kMaxEnumeratedDevices || a.length < 1 || a.segment_len < 1)
    throw ConfigError("--M must lie in [1, 25]; --N and --segment-len must be positive");
  SweepConfig sc;
  sc.rhos = a.rhos;
  sc.rates = a.rates;
  sc.devices = a.devices;
  sc.length = a.length;
  sc.seed = *a.seed;
  sc.schemes = a.schemes;
  sc.segment_len = a.segment_len;

  ExperimentConfig cfg;
  cfg.command = "sweep-distortion";
  cfg.params = {{"rho", a.rhos},  {"rates", a.rates},       {"M", a.devices},
                {"N", a.length},  {"schemes", a.schemes},   {"segment_len", a.segment_len}};
  cfg.seed = a.seed;
  const auto dir = detail::output_dir(a.out);
  cfg.output_dir = dir.string();

  const auto rows = distortion_sweep(sc);
  {
    auto os = detail::open_out(dir / "sweep_distortion.csv");
    io::CsvWriter w(os);
    w.row({"scheme", "rho", "rate_bits_per_symbol", "charged_rate_bits_per_symbol", "distortion_sq_err_per_symbol",
           "predicted_distortion_sq_err_per_symbol", "rate_accounting", "seed"});
    for (const auto& r : rows) {
      w.field(r.scheme).field(r.rho).field(r.rate_bits).field(r.charged_rate_bits).field(r.distortion).field(r.predicted_distortion);
      w.field(r.scheme == "mbtc" ? "surrogate-analytic" : "fixed-width").field(r.seed);
      w.end_row();
    }
  }
  detail::write_meta(dir / "sweep_distortion.meta.json", cfg, {{"rows", rows.size()}});
  out << "rows=" << rows.size() << " out=" << dir.string() << '\n';
  return kOk;
}

struct TrainArgs {
  int devices = 8;
  std::int64_t dim = 64;
  std::int64_t samples = 32;
  int rounds = 50;
  std::string aggregator = "error-free";
  std::optional<double> budget;
  std::optional<std::uint64_t> seed;
  double mu = 0.1;
  std::string out;
};

inline int run_train(const TrainArgs& a, std::ostream& out) {
  if (!a.seed) throw ConfigError("--seed is required");
  if (a.rounds < 1) throw ConfigError("--rounds must be positive");
  if (a.devices < 1 || a.devices > kMaxEnumeratedDevices) throw ConfigError("--devices must lie in [1, 25]");
  if (!(a.mu > 0.0)) throw ConfigError("--mu must be positive");
  const AggregatorSpec spec = AggregatorSpec::parse(a.aggregator, a.budget);
  TaskShape shape;
  shape.devices = a.devices;
  shape.dim = a.dim;
  shape.samples_per_device = a.samples;
  shape.mu = a.mu;

  ExperimentConfig cfg;
  cfg.command = "fl-train";
  cfg.params = {{"devices", a.devices}, {"dim", a.dim}, {"samples_per_device", a.samples}, {"rounds", a.rounds},
                {"aggregator", spec.name()}, {"budget", a.budget ? Json(*a.budget) : Json(nullptr)}, {"mu", a.mu}};
  cfg.seed = a.seed;
  const auto dir = detail::output_dir(a.out);
  cfg.output_dir = dir.string();

  const QuadraticTask task = make_quadratic_task(shape, *a.seed);
  const TrainTrace trace = run_training(task, spec, a.rounds, seed_stream(*a.seed, "training"));
  bool all_hold = true;
  {
    auto os = detail::open_out(dir / "fl_train.csv");
    io::CsvWriter w(os);
    w.row({"round", "loss_gap", "bound_value", "error_norm2", "error_energy_sq_err_per_symbol", "mean_rate_bits_per_symbol",
           "predicted_distortion_sq_err_per_symbol", "bound_holds"});
    for (const auto& r : trace.rounds) {
      const bool holds = r.loss_gap <= r.bound_value + 1e-9;
      all_hold = all_hold && holds;
      w.field(r.round).field(r.loss_gap).field(r.bound_value).field(r.error_norm2).field(r.error_energy).field(r.mean_rate);
      w.field(r.predicted_distortion).field(holds ? "true" : "false");
      w.end_row();
    }
  }
  detail::write_meta(dir / "fl_train.meta.json", cfg,
                     {{"omega", trace.curvature.omega}, {"Omega", trace.curvature.big_omega}, {"eta", trace.eta}, {"bound_holds", all_hold}});
  out << "final_loss_gap=" << io::format_double(trace.rounds.back().loss_gap) << " bound_holds=" << (all_hold ? "true" : "false")
      << " out=" << dir.string() << '\n';
  return kOk;
}

struct RegionArgs {
  std::string model;
  std::vector<double> budget;
  std::vector<double> q;
  std::string out;
};

inline int run_verify_region(const RegionArgs& a, std::ostream& out) {
  const ModelDocument doc = parse_model_json(detail::read_file(a.model));
  const GaussianSourceModel model = doc.expanded();
  const int m = model.device_count();
  if (m > kMaxEnumeratedDevices) throw ConfigError("region listing supports at most 25 devices");
  auto expand = [m](const std::vector<double>& v, const char* flag) {
    if (v.size() == 1) return VectorXd::Constant(m, v[0]).eval();
    if (static_cast<int>(v.size()) != m) throw ConfigError(std::string(flag) + " needs one value per device (or a single value)");
    return Eigen::Map<const VectorXd>(v.data(), m).eval();
  };
  VectorXd rates = !a.budget.empty() ? expand(a.budget, "--budget")
                   : doc.symmetric  ? doc.symmetric->budget().rates()
                                    : throw ConfigError("--budget is required for a general model");
  if (a.q.empty()) throw ConfigError("--q is required");
  std::optional<MbtcParams> q;
  std::optional<RateBudget> budget;
  try {
    q.emplace(expand(a.q, "--q"));
    budget.emplace(rates);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!q->all_finite()) throw ConfigError("--q must be finite");
  const FeasibilityReport report = is_feasible(model, *q, *budget);

  std::ofstream file;
  std::ostream* os = &out;
  if (!a.out.empty()) {
    file = detail::open_out(a.out);
    os = &file;
  }
  io::CsvWriter w(*os);
  w.row({"subset_mask", "subset_devices", "required_bits_per_symbol", "budget_bits_per_symbol", "slack_bits_per_symbol"});
  for (const auto& row : report.rows) {
    w.field(static_cast<std::uint64_t>(row.subset.mask())).field(detail::subset_label(row.subset));
    w.field(row.required_bits).field(row.budget_bits).field(row.slack);
    w.end_row();
  }
  return kOk;
}

/// Analytic single-source checks; one PASS/FAIL line each.
inline int run_verify_builtin(std::ostream& out) {
  bool all = true;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << ' ' << detail << '\n';
    all = all && ok;
  };
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };

  for (double r : {0.5, 1.0, 2.0}) {
    const double exact = std::exp2(-2.0 * r);
    const GaussianSourceModel model(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 1.0));
    const MmResult g = optimize(model, RateBudget::uniform(1, r));
    check("general_rd_R" + io::format_double(r), rel(g.d_star, exact) < 1e-4,
          "D=" + io::format_double(g.d_star) + " expected=" + io::format_double(exact));
    const SymmetricResult s = optimize_symmetric(SymmetricSourceModel(0.0, 1.0, {{1, r}}), 1.0);
    check("symmetric_rd_R" + io::format_double(r), rel(s.d_star, exact) < 1e-4,
          "D=" + io::format_double(s.d_star) + " expected=" + io::format_double(exact));
    const double qx = single_source_rd(1.0, r).q_star;
    check("binding_sum_rate_R" + io::format_double(r),
          std::abs(sum_mutual_info(model, MbtcParams::uniform(1, qx)) - r) < 1e-9, "q=" + io::format_double(qx));
  }
  {
    const GaussianSourceModel model(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 1.0));
    const MbtcParams q_hat = MbtcParams::uniform(1, 1.0);
    const auto pair = expansion_matrices(model, q_hat, DeviceSubset::full(1));
    const double v = chi_xi(model, pair.e, pair.f, q_hat, DeviceSubset::full(1));
    check("surrogate_tight_at_expansion", std::abs(v - 0.5) < 1e-12, "value=" + io::format_double(v));
    const SurrogateProblem p = build_surrogate(model, RateBudget::uniform(1, 1.0), q_hat);
    check("surrogate_weight", std::abs(p.objective_weights(0) - 0.25) < 1e-15, "b2=" + io::format_double(p.objective_weights(0)));
    const MbtcParams fixed = MbtcParams::uniform(1, 1.0 / 3.0);
    const MbtcParams q = solve_surrogate(build_surrogate(model, RateBudget::uniform(1, 1.0), fixed));
    check("surrogate_fixed_point", std::abs(q[0] - 1.0 / 3.0) < 1e-6, "q=" + io::format_double(q[0]));
  }
  {
    const VectorXd a = VectorXd::Constant(1, 1.0);
    const double v = inverse_quadratic_minorant(a, VectorXd::Constant(1, 0.5), MatrixXd::Constant(1, 1, 2.0));
    check("inverse_quadratic_minorant_tight", std::abs(v - 0.5) < 1e-15, "value=" + io::format_double(v));
  }
  {
    std::vector<VectorXd> one{VectorXd::LinSpaced(3000, -1.0, 2.0)};
    const DeviceUpdateBatch b = preprocess(one, 11);
    const VectorXd centered = mean_remove(one[0]).centered;
    const double err = std::abs(b.updates[0].norm() - centered.norm()) / centered.norm();
    check("rotation_norm", err < 1e-9, "rel_err=" + io::format_double(err));
    const VectorXd back = inverse_transform(b.updates[0], b, VectorXd::Constant(1, 1.0));
    const double rt = (back - one[0]).norm() / one[0].norm();
    check("rotation_round_trip", rt < 1e-9, "rel_err=" + io::format_double(rt));
  }
  {
    const std::vector<VectorXd> x = synthetic_sources(0.0, 1, Eigen::Index{1} << 17, 5);
    const GaussianSourceModel model(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 1.0));
    const VectorXd est = mbtc_noise_surrogate(x, model, MbtcParams::uniform(1, 1.0), 6);
    const double mse = measure_distortion(x[0], est);
    check("noise_surrogate_scalar", rel(mse, 0.5) < 0.01, "mse=" + io::format_double(mse));
  }
  return all ? kOk : kFailed;
}

namespace detail {

inline int report(std::ostream& err, int code, const char* kind, const std::string& message) {
  Json e{{"error", {{"exit_code", code}, {"kind", kind}, {"message", message}}}};
  err << e.dump() << '\n';
  return code;
}

}  // namespace detail

/// Entry point shared by the executable and the tests. args excludes argv[0].
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rate-distortion tools for MBTC federated aggregation", "fedrd"};
  app.require_subcommand(1);

  OptimizeArgs oa;
  auto* opt = app.add_subcommand("optimize", "Optimize MBTC parameters for a source model");
  opt->add_option("--model", oa.model, "Model JSON file")->required();
  opt->add_option("--budget", oa.budget, "Per-device rates, bits/symbol")->delimiter(',');
  opt->add_flag("--symmetric", oa.symmetric, "Use the grouped symmetric optimizer");
  opt->add_option("--lambda", oa.lambda, "Target coefficient for symmetric models");
  opt->add_option("--eps", oa.eps, "Fractional objective increase that stops the iteration");
  opt->add_option("--max-iter", oa.max_iter, "Iteration cap");
  opt->add_option("--out", oa.out, "Output directory");

  SweepArgs sa;
  std::vector<std::uint64_t> sweep_seed;
  auto* sweep = app.add_subcommand("sweep-distortion", "Distortion versus rate on synthetic sources");
  sweep->add_option("--rho", sa.rhos, "Correlation coefficient (repeatable)")->delimiter(',')->required();
  sweep->add_option("--rates", sa.rates, "Per-device rates, bits/symbol")->delimiter(',')->required();
  sweep->add_option("--M", sa.devices, "Number of devices");
  sweep->add_option("--N", sa.length, "Vector length");
  sweep->add_option("--seed", sweep_seed, "Global seed")->required()->expected(1);
  sweep->add_option("--schemes", sa.schemes, "Schemes among mbtc, qsgd, uniform")->delimiter(',');
  sweep->add_option("--segment-len", sa.segment_len, "Rotation segment length");
  sweep->add_option("--out", sa.out, "Output directory");

  TrainArgs ta;
  std::vector<std::uint64_t> train_seed;
  std::vector<double> train_budget;
  auto* train = app.add_subcommand("fl-train", "Federated training on a quadratic task");
  train->add_option("--devices", ta.devices, "Number of devices");
  train->add_option("--dim", ta.dim, "Model dimension");
  train->add_option("--samples-per-device", ta.samples, "Samples per device");
  train->add_option("--rounds", ta.rounds, "Communication rounds");
  train->add_option("--aggregator", ta.aggregator, "mbtc, qsgd:<s>, uniform:<bits> or error-free");
  train->add_option("--budget", train_budget, "Per-device rate for mbtc, bits/symbol")->expected(1);
  train->add_option("--mu", ta.mu, "Ridge regularizer");
  train->add_option("--seed", train_seed, "Global seed")->required()->expected(1);
  train->add_option("--out", ta.out, "Output directory");

  RegionArgs ra;
  auto* verify = app.add_subcommand("verify", "Built-in analytic checks, or a rate-region listing");
  auto* region = verify->add_subcommand("region", "List every subset constraint at q");
  region->add_option("--model", ra.model, "Model JSON file")->required();
  region->add_option("--budget", ra.budget, "Per-device rates, bits/symbol")->delimiter(',');
  region->add_option("--q", ra.q, "MBTC parameters")->delimiter(',')->required();
  region->add_option("--out", ra.out, "Output CSV file (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return detail::report(err, kUsage, "usage", e.what());
  }

  try {
    if (opt->parsed()) return run_optimize(oa, out);
    if (sweep->parsed()) {
      sa.seed = sweep_seed.front();
      return run_sweep(sa, out);
    }
    if (train->parsed()) {
      ta.seed = train_seed.front();
      if (!train_budget.empty()) ta.budget = train_budget.front();
      return run_train(ta, out);
    }
    if (region->parsed()) return run_verify_region(ra, out);
    if (verify->parsed()) return run_verify_builtin(out);
    return detail::report(err, kUsage, "usage", "no subcommand");
  } catch (const ConfigError& e) {
    return detail::report(err, kConfig, "config", e.what());
  } catch (const SizeError& e) {
    return detail::report(err, kConfig, "config", e.what());
  } catch (const NumericError& e) {
    return detail::report(err, kNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return detail::report(err, kNumeric, "numeric", e.what());
  }
}

}  // namespace fedrd::cli
