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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes. Tolerances are fixed here and never relaxed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedrd/fedrd.hpp"
#include "fedrd/cli.hpp"
#include "oracles/grid_oracle.hpp"
#include "test_support.hpp"

namespace {

using namespace fedrd;
using testing_support::random_instance;
using testing_support::to_mat;
using testing_support::to_vec;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Tracks the worst value of a metric against a limit.
struct Worst {
  double value = 0.0;
  void add(double v) { value = std::max(value, std::isnan(v) ? std::numeric_limits<double>::infinity() : v); }
  bool within(double limit) const { return value <= limit; }
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

Outcome rd_recovery() {
  Worst general, symmetric;
  for (double r : {0.5, 1.0, 2.0}) {
    const double exact = std::exp2(-2.0 * r);
    const GaussianSourceModel model(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 1.0));
    general.add(rel(optimize(model, RateBudget::uniform(1, r)).d_star, exact));
    symmetric.add(rel(optimize_symmetric(SymmetricSourceModel(0.0, 1.0, {{1, r}}), 1.0).d_star, exact));
  }
  return {general.within(1e-4) && symmetric.within(1e-4),
          "max_rel_err general=" + fmt(general.value) + " symmetric=" + fmt(symmetric.value) + " (limit 1e-4)"};
}

Outcome grid_equivalence() {
  Worst err;
  int count = 0;
  std::mt19937_64 rng(101);
  for (int rep = 0; rep < 10; ++rep, ++count) {
    const auto inst = random_instance(2, rng);
    const VectorXd rates = VectorXd::Constant(2, 0.25 + 0.25 * rep);
    const MmResult res = optimize(GaussianSourceModel(inst.sigma, inst.c), RateBudget(rates));
    err.add(rel(res.d_star, oracle::grid_search(to_mat(inst.sigma), to_vec(inst.c), to_vec(rates), 200, 3).distortion));
  }
  for (int rep = 0; rep < 5; ++rep, ++count) {
    const auto inst = random_instance(3, rng);
    const VectorXd rates = VectorXd::LinSpaced(3, 0.5 + 0.25 * rep, 1.0 + 0.25 * rep);
    const MmResult res = optimize(GaussianSourceModel(inst.sigma, inst.c), RateBudget(rates));
    err.add(rel(res.d_star, oracle::grid_search(to_mat(inst.sigma), to_vec(inst.c), to_vec(rates), 200, 1).distortion));
  }
  return {err.within(1e-3), std::to_string(count) + " instances max_rel_err=" + fmt(err.value) + " (limit 1e-3)"};
}

Outcome cross_agreement() {
  MmOptions tight;
  tight.eps = 1e-10;
  tight.max_iter = 2000;
  struct Case {
    double rho;
    std::vector<SymmetricSourceModel::Group> groups;
  };
  const std::vector<Case> cases{{0.5, {{3, 1.0}}},           {0.9, {{10, 1.0}}},          {0.99, {{6, 0.5}}},
                                {0.5, {{2, 1.0}, {3, 0.5}}}, {0.9, {{4, 2.0}, {6, 0.5}}}, {0.0, {{5, 1.0}, {5, 3.0}}}};
  Worst err;
  bool counts = true;
  for (const auto& cs : cases) {
    const SymmetricSourceModel model(cs.rho, 1.0, cs.groups);
    const double lambda = 1.0 / model.device_count();
    const SymmetricResult sym = optimize_symmetric(model, lambda, tight);
    const MmResult gen = optimize(model.expand(lambda), model.budget(), tight);
    err.add(rel(sym.d_star, gen.d_star));
    std::size_t expected = 1;
    for (const auto& g : cs.groups) expected *= static_cast<std::size_t>(g.size + 1);
    counts = counts && sym.constraint_count == expected - 1;
  }
  return {err.within(1e-4) && counts, std::to_string(cases.size()) + " instances max_rel_err=" + fmt(err.value) +
                                          " (limit 1e-4) constraint_counts=" + (counts ? "ok" : "mismatch")};
}

Outcome tightness_and_monotonicity() {
  Worst obj_gap, con_gap, decrease;
  std::mt19937_64 rng(303);
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = random_instance(2 + rep % 3, rng);
    const GaussianSourceModel model(inst.sigma, inst.c);
    const RateBudget budget(VectorXd::Constant(model.device_count(), 0.5 + 0.1 * rep));
    const MmResult res = optimize(model, budget);
    for (std::size_t k = 0; k < res.trace.size(); ++k) {
      const TightnessReport t = surrogate_tightness(model, build_surrogate(model, budget, MbtcParams(res.trace[k].q)));
      obj_gap.add(t.objective_gap);
      con_gap.add(t.constraint_gap);
      if (k > 0) decrease.add(res.trace[k - 1].objective - res.trace[k].objective);
    }
  }
  for (int rep = 0; rep < 20; ++rep) {
    const SymmetricSourceModel model(0.05 * rep, 1.0 + 0.1 * rep, {{1 + rep % 4, 0.5 + 0.1 * rep}, {2 + rep % 3, 1.5}});
    const SymmetricResult res = optimize_symmetric(model, 1.0 / model.device_count());
    const auto selections = enumerate_selections(model.groups());
    for (std::size_t k = 0; k < res.trace.size(); ++k) {
      const VectorXd& q_hat = res.trace[k].q;
      // The linear minorant of the objective equals it at the expansion point.
      const double minorant = symmetric_objective(model, q_hat);
      obj_gap.add(std::abs(minorant - res.trace[k].objective));
      for (const auto& s : selections) con_gap.add(std::abs(theta_up(model, q_hat, s, q_hat) - theta(model, q_hat, s)));
      if (k > 0) decrease.add(res.trace[k - 1].objective - res.trace[k].objective);
    }
  }
  return {obj_gap.within(1e-9) && con_gap.within(1e-9) && decrease.within(1e-10),
          "40 instances objective_gap=" + fmt(obj_gap.value) + " constraint_gap=" + fmt(con_gap.value) + " (limit 1e-9) max_decrease=" +
              fmt(decrease.value) + " (limit 1e-10)"};
}

Outcome theta_identity() {
  Worst err;
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<SymmetricSourceModel::Group> groups{{1 + rep % 3, 1.0}, {1 + (rep / 3) % 3, 0.5}};
    if (rep % 2) groups.push_back({2, 0.75});
    const SymmetricSourceModel model(0.95 * unit(rng), 0.5 + unit(rng), groups);
    VectorXd q(model.group_count());
    for (Eigen::Index j = 0; j < q.size(); ++j) q(j) = std::exp(4.0 * unit(rng) - 2.0);
    const VectorXd q_dev = model.expand_groups([&](int j) { return q(j); });
    const GaussianSourceModel expanded = model.expand(1.0);
    const auto sigma = to_mat(model.covariance());
    for (const auto& s : enumerate_selections(model.groups())) {
      std::uint32_t mask = 0;
      int offset = 0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        for (int i = 0; i < s[j]; ++i) mask |= 1u << (offset + i);
        offset += model.groups()[j].size;
      }
      const double t = theta(model, q, s);
      const bool full = mask == (1u << model.device_count()) - 1u;
      const MbtcParams qp(q_dev);
      err.add(std::abs(t - (full ? sum_mutual_info(expanded, qp) : cond_mutual_info(expanded, qp, DeviceSubset(mask)))));
      err.add(std::abs(t - oracle::mutual_info(sigma, to_vec(q_dev), mask)));
    }
  }
  return {err.within(1e-10), "10 instances max_abs_err=" + fmt(err.value) + " (limit 1e-10)"};
}

Outcome simulator_fidelity() {
  SweepConfig cfg;
  cfg.rhos = {0.0, 0.5, 0.9, 0.99};
  cfg.rates = {1.0, 2.0, 3.0};
  cfg.devices = 10;
  cfg.length = Eigen::Index{1} << 17;
  cfg.seed = 606;
  const auto rows = distortion_sweep(cfg);
  Worst err;
  bool ordered = true;
  for (std::size_t i = 0; i + 2 < rows.size(); i += 3) {
    err.add(rel(rows[i].distortion, rows[i].predicted_distortion));
    if (rows[i].rho == 0.9) {
      ordered = ordered && rows[i].distortion < rows[i + 1].distortion && rows[i].distortion < rows[i + 2].distortion &&
                rows[i].charged_rate_bits <= rows[i + 1].charged_rate_bits + 1e-12 &&
                rows[i].charged_rate_bits <= rows[i + 2].charged_rate_bits + 1e-12;
    }
  }
  return {err.within(0.01) && ordered,
          "max_rel_err=" + fmt(err.value) + " (limit 0.01) rho0.9_ordering=" + (ordered ? "strict" : "violated")};
}

Outcome transform_invariants() {
  Worst norm_err, trip_err;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Eigen::Index n = 300 + static_cast<Eigen::Index>(seed) * 53;  // spans sub-1024 and trailing-segment lengths
    std::mt19937_64 rng(seed_stream(707, "input", seed));
    std::student_t_distribution<double> heavy(3.0);
    std::vector<VectorXd> raw(3, VectorXd(n));
    for (auto& v : raw)
      for (Eigen::Index i = 0; i < n; ++i) v(i) = 0.3 + heavy(rng);
    const DeviceUpdateBatch batch = preprocess(raw, seed);
    for (std::size_t d = 0; d < raw.size(); ++d) {
      const VectorXd centered = mean_remove(raw[d]).centered;
      norm_err.add(std::abs(batch.updates[d].norm() - centered.norm()) / centered.norm());
      VectorXd unit = VectorXd::Zero(3);
      unit(static_cast<Eigen::Index>(d)) = 1.0;
      trip_err.add((inverse_transform(batch.updates[d], batch, unit) - raw[d]).norm() / raw[d].norm());
    }
  }
  const Eigen::Index n = Eigen::Index{1} << 17;
  const auto gauss = factor_sources(symmetric_spec(3, 0.9), n, 708);
  const DeviceUpdateBatch gb = preprocess(gauss, 709);
  const auto g_rep = gaussianization_check(gauss, gb.updates, symmetric_covariance(0.9, 1.0, 3));
  FactorSourceSpec spec = symmetric_spec(3, 0.9);
  spec.heavy_tailed = true;
  const auto heavy = factor_sources(spec, n, 710);
  const DeviceUpdateBatch hb = preprocess(heavy, 711);
  const auto h_rep = gaussianization_check(heavy, hb.updates);
  Worst g_kurt, h_kurt;
  for (double k : g_rep.excess_kurtosis) g_kurt.add(std::abs(k));
  for (double k : h_rep.excess_kurtosis) h_kurt.add(std::abs(k));
  const double cov = std::max({g_rep.covariance_error, h_rep.covariance_error, g_rep.model_covariance_error.value_or(1.0)});
  const bool ok = norm_err.within(1e-9) && trip_err.within(1e-9) && g_kurt.within(0.1) && h_kurt.within(0.15) && cov <= 0.02;
  return {ok, "norm_err=" + fmt(norm_err.value) + " round_trip_err=" + fmt(trip_err.value) + " (limit 1e-9) kurtosis gaussian=" +
                  fmt(g_kurt.value) + " (limit 0.1) heavy=" + fmt(h_kurt.value) + " (limit 0.15) cov_err=" + fmt(cov) + " (limit 0.02)"};
}

Outcome convergence_bound() {
  Worst violation, unroll;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const QuadraticTask task = make_quadratic_task(TaskShape{}, seed_stream(808, "task", seed));
    for (const auto& spec : {AggregatorSpec::parse("error-free"), AggregatorSpec::parse("qsgd:2"), AggregatorSpec::parse("mbtc", 1.0)}) {
      const TrainTrace tr = run_training(task, spec, 50, seed_stream(808, "train", seed));
      std::vector<double> errors;
      for (std::size_t t = 0; t < tr.rounds.size(); ++t) {
        violation.add(tr.rounds[t].loss_gap - tr.rounds[t].bound_value);
        // errors holds rounds 0..t-1 here.
        const double u = unrolled_bound(tr.rounds.front().bound_value, errors, tr.curvature);
        unroll.add(std::abs(u - tr.rounds[t].bound_value) / std::max(1.0, std::abs(u)));
        errors.push_back(tr.rounds[t].error_norm2);
      }
    }
  }
  return {violation.within(1e-9) && unroll.within(1e-12),
          "60 runs max(gap-bound)=" + fmt(violation.value) + " (limit 1e-9) unrolled_err=" + fmt(unroll.value) + " (limit 1e-12)"};
}

Outcome cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "fedrd_acceptance_cli";
  fs::remove_all(root);
  const fs::path model = root / "model.json";
  fs::create_directories(root);
  std::ofstream(model) << R"({"M": 3, "sigma_x": [1, 0.6, 0.3, 0.6, 1, 0.6, 0.3, 0.6, 1], "c": [0.2, 0.5, 0.3]})";
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  struct Job {
    std::vector<std::string> args;
    std::string file;  // empty: compare stdout
  };
  const std::vector<Job> jobs{
      {{"optimize", "--model", model.string(), "--budget", "1,0.5,2"}, "optimize_trace.csv"},
      {{"sweep-distortion", "--rho", "0.5,0.9", "--rates", "1,2", "--M", "4", "--N", "8192", "--seed", "9"}, "sweep_distortion.csv"},
      {{"fl-train", "--aggregator", "mbtc", "--budget", "1", "--rounds", "10", "--seed", "9"}, "fl_train.csv"},
      {{"fl-train", "--aggregator", "qsgd:2", "--rounds", "10", "--seed", "9"}, "fl_train.csv"},
      {{"verify"}, ""},
      {{"verify", "region", "--model", model.string(), "--budget", "1", "--q", "0.3,0.2,0.4"}, ""},
  };
  int identical = 0;
  std::string failed;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    std::string results[2];
    for (int rep = 0; rep < 2; ++rep) {
      std::vector<std::string> args = jobs[j].args;
      const fs::path dir = root / ("job" + std::to_string(j) + "_" + std::to_string(rep));
      if (!jobs[j].file.empty()) {
        args.push_back("--out");
        args.push_back(dir.string());
      }
      std::ostringstream out, err;
      const int code = cli::run(args, out, err);
      results[rep] = std::to_string(code) + "\n" + (jobs[j].file.empty() ? out.str() : slurp(dir / jobs[j].file));
      if (code != 0) results[rep] += "exit" + std::to_string(rep);  // force a mismatch on failure
    }
    if (results[0] == results[1] && results[0].size() > 2) {
      ++identical;
    } else {
      failed += " " + jobs[j].args[0];
    }
  }
  fs::remove_all(root);
  return {identical == static_cast<int>(jobs.size()),
          std::to_string(identical) + "/" + std::to_string(jobs.size()) + " byte-identical" + (failed.empty() ? "" : " failed:" + failed)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gaussian_rd_recovery", rd_recovery},
      {"grid_oracle_equivalence", grid_equivalence},
      {"cross_algorithm_agreement", cross_agreement},
      {"surrogate_tightness_mm_monotonicity", tightness_and_monotonicity},
      {"theta_reduction_identity", theta_identity},
      {"simulator_fidelity", simulator_fidelity},
      {"transform_invariants", transform_invariants},
      {"convergence_bound", convergence_bound},
      {"cli_determinism", cli_determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += o.ok ? 0 : 1;
    std::cout << (o.ok ? "PASS " : "FAIL ") << i + 1 << ' ' << criteria[i].first << ' ' << o.detail << " time=" << fmt(secs) << "s"
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
