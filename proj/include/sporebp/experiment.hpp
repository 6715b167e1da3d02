/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sporebp/analytic.hpp"
#include "sporebp/config.hpp"
#include "sporebp/errors.hpp"
#include "sporebp/model.hpp"
#include "sporebp/random.hpp"
#include "sporebp/simulator.hpp"
#include "sporebp/stats.hpp"

namespace sporebp {

inline constexpr const char* kToolName = "sporebp";
inline constexpr const char* kToolVersion = "1.0.0";

// Exit codes of the command line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitBudget = 4 };

namespace csv {

inline std::string number(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

inline std::string curves(std::span<const SurvivalCurve> curves) {
  std::string out = "k,t,q,err,source\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out += std::to_string(c.k) + "," + number(p.t) + "," + number(p.q) + "," + number(p.err) + "," +
             to_string(c.source) + "\n";
  return out;
}

inline std::string samples(std::span<const double> values) {
  std::string out = "replicate,T\n";
  for (std::size_t i = 0; i < values.size(); ++i) out += std::to_string(i) + "," + number(values[i]) + "\n";
  return out;
}

}  // namespace csv

inline void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << body;
  f.close();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

// Writes a survival-curve CSV: columns k, t, q, err, source; 17 significant
// digits; LF line endings.
inline void emit_csv(std::span<const SurvivalCurve> curves, const std::filesystem::path& path) {
  write_file(path, csv::curves(curves));
}

// Writes extinction-time samples: columns replicate, T.
inline void emit_csv(std::span<const double> samples, const std::filesystem::path& path) {
  write_file(path, csv::samples(samples));
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << x;
  return s.str();
}

// Reproducibility block embedded in every JSON artifact.
inline json metadata(const ExperimentConfig& cfg) {
  json meta = {{"tool", kToolName},
               {"tool_version", kToolVersion},
               {"config_schema_version", kConfigSchemaVersion},
               {"config_hash", "fnv1a64:" + hex64(fnv1a64(cfg.resolved.dump()))},
               {"rng", {{"algorithm", RandomStream::kAlgorithm}, {"version", RandomStream::kVersion}}},
               {"master_seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
               {"ephemeral_seed", cfg.ephemeral_seed},
               {"config", cfg.resolved}};
  return meta;
}

struct RunOptions {
  std::filesystem::path out_dir;  // empty: use the config's output.dir
  unsigned threads = 1;
};

struct RunResult {
  int exit_code = kExitOk;
  std::vector<std::filesystem::path> artifacts;
  std::string summary;
};

namespace detail {

// Tracks written files so a failed run leaves nothing behind.
class ArtifactSet {
 public:
  explicit ArtifactSet(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& body) {
    const auto path = dir_ / name;
    written_.push_back(path);
    write_file(path, body);
  }

  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void rollback() noexcept {
    for (const auto& p : written_) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
    written_.clear();
  }

  const std::vector<std::filesystem::path>& written() const { return written_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

inline std::vector<double> uniform_grid(double t_lo, double t_hi, double dt) {
  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::floor((t_hi - t_lo) / dt + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) grid.push_back(t_lo + static_cast<double>(i) * dt);
  return grid;
}

inline json constant_json(const ConstantEstimate& est) {
  json j = {{"C_hat", est.C_hat},
            {"t_star", est.t_star},
            {"K", est.K},
            {"lambda", est.lambda},
            {"last_rel_change", est.last_rel_change},
            {"max_h_increase", est.max_h_increase},
            {"k_doubling_ok", est.k_doubling_ok}};
  j["k_doubling_change"] = est.k_doubling_change ? json(*est.k_doubling_change) : json(nullptr);
  return j;
}

inline void run_survival(const ExperimentConfig& cfg, const SurvivalExperiment& e, const RunOptions& opts,
                         ArtifactSet& out, RunResult& result) {
  const auto& m = cfg.model;
  std::vector<SurvivalCurve> curves;
  json info = {{"metadata", metadata(cfg)}, {"lambda", m.lambda()}};
  if (e.method != "mc") {
    const TruncatedSystem sys(m, e.K);
    const auto sol = solve_survival(sys, {e.t_max, e.tol, e.dt});
    for (auto k : e.k) curves.push_back(sol.curve(k));
    info["ode"] = {{"K", e.K}, {"step", sol.step}, {"max_error", sol.max_error}, {"clamped", sol.clamped}};
  }
  if (e.method != "ode") {
    const auto grid = uniform_grid(0.0, e.t_max, e.dt);
    for (auto k : e.k)
      curves.push_back(estimate_curve(k, grid, m, derive_seed(*cfg.seed, k), e.replicates,
                                      {opts.threads, cfg.max_events}));
    info["monte_carlo"] = {{"replicates", e.replicates}, {"seed_derivation", "splitmix64(seed, k)"}};
  }
  out.write("survival.csv", csv::curves(curves));
  out.write_json("survival.json", info);
  result.summary = "wrote " + std::to_string(curves.size()) + " survival curves";
}

inline void run_constant(const ExperimentConfig& cfg, const ConstantExperiment& e, ArtifactSet& out,
                         RunResult& result) {
  const auto& m = cfg.model;
  const TruncatedSystem sys(m, e.K);
  const DecayWindow window{e.a, e.epsilon};
  ConstantOptions copts;
  copts.tol = e.tol;
  copts.dt = e.dt;
  copts.t_max = e.t_max;
  const auto est = estimate_constant(sys, window, copts);
  const auto lb = truncation_lower_bound_check(sys, e.epsilon);
  json j = {{"metadata", metadata(cfg)}, {"estimate", constant_json(est)}, {"a", e.a}, {"epsilon", e.epsilon}};
  j["lower_bound"] = {{"k0", lb.k0},         {"c1", lb.c1},         {"min_g", lb.min_g},
                      {"t_at_min", lb.t_at_min}, {"stabilized", lb.stabilized}};
  if (auto lf = linear_fractional_case(m)) j["closed_form_C"] = linear_fractional_constant(lf->first, lf->second);
  out.write_json("constant.json", j);
  std::string h = "t,h\n";
  for (const auto& [t, v] : est.h) h += csv::number(t) + "," + csv::number(v) + "\n";
  out.write("constant_h.csv", h);
  result.summary = "C_hat = " + csv::number(est.C_hat);
}

inline void run_gumbel(const ExperimentConfig& cfg, const GumbelExperiment& e, const RunOptions& opts,
                       ArtifactSet& out, RunResult& result) {
  const auto& m = cfg.model;
  double C = 0.0;
  std::string C_source;
  if (e.C) {
    C = *e.C;
    C_source = "config";
  } else if (auto lf = linear_fractional_case(m)) {
    C = linear_fractional_constant(lf->first, lf->second);
    C_source = "closed_form";
  } else {
    C = estimate_constant(TruncatedSystem(m, e.K), DecayWindow::make(m, e.a)).C_hat;
    C_source = "estimate_constant";
  }
  const auto growth = check_growth_condition(e.z, e.a, m.lambda());
  const auto rep = gumbel_experiment(e.z, m, C, *cfg.seed, e.replicates, {opts.threads, cfg.max_events});
  json q = json::array();
  for (const auto& row : rep.quantiles)
    q.push_back({{"p", row.p}, {"empirical_w", row.empirical}, {"gumbel_w", row.predicted}});
  json j = {{"metadata", metadata(cfg)},
            {"lambda", rep.lambda},
            {"C", rep.C},
            {"C_source", C_source},
            {"total_spores", rep.total_spores},
            {"centering", rep.centering},
            {"location", rep.location},
            {"scale", rep.scale},
            {"replicates", rep.times.size()},
            {"ks_distance", rep.ks},
            {"median_w", rep.median_w},
            {"predicted_median_w", rep.predicted_median_w},
            {"quantiles", q},
            {"growth_condition",
             {{"sum_k", growth.sum_k},
              {"sum_k2", growth.sum_k2},
              {"exponent", growth.exponent},
              {"ratio", growth.ratio},
              {"max_type", growth.max_type},
              {"flagged", growth.flagged}}}};
  out.write_json("gumbel.json", j);
  out.write("extinction_times.csv", csv::samples(rep.times));
  result.summary = "KS distance " + csv::number(rep.ks) + ", median w " + csv::number(rep.median_w);
}

// Rows: deterministic rows pass when observed lies within expected +- tol;
// Monte Carlo rows pass when the 95% Wilson interval covers the expected value.
inline void run_oracle(const ExperimentConfig& cfg, const OracleExperiment& e, const RunOptions& opts,
                       ArtifactSet& out, RunResult& result) {
  const auto& m = cfg.model;
  std::string table = "check,k,t,expected,observed,lower,upper,pass\n";
  bool all_pass = true;
  std::uint64_t mc_cells = 0, mc_covered = 0;
  auto row = [&](const std::string& check, std::uint64_t k, double t, double expected, double observed,
                 double lower, double upper, bool pass) {
    table += check + "," + std::to_string(k) + "," + csv::number(t) + "," + csv::number(expected) + "," +
             csv::number(observed) + "," + csv::number(lower) + "," + csv::number(upper) + "," +
             (pass ? "true" : "false") + "\n";
  };

  const auto lf = linear_fractional_case(m);
  auto exact = [&](std::uint64_t k, double t) {
    return lf ? closed_form_linear_fractional(t, m.beta(), lf->first, lf->second)
              : closed_form_mu0(k, t, m.beta(), m.rho());
  };

  const TruncatedSystem sys(m, e.K);
  // One solve per requested time so each comparison lands on a grid point.
  for (double t : e.t) {
    std::vector<double> q(e.k.size(), 1.0);
    if (t > 0.0) {
      const auto sol = solve_survival(sys, {t, std::min(e.tol / 10.0, 1e-9), std::min(0.1, t)});
      for (std::size_t i = 0; i < e.k.size(); ++i) q[i] = sol.curve(e.k[i]).points.back().q;
    }
    for (std::size_t i = 0; i < e.k.size(); ++i) {
      const double expect = exact(e.k[i], t);
      const bool pass = std::abs(q[i] - expect) <= e.tol;
      all_pass = all_pass && pass;
      row("ode", e.k[i], t, expect, q[i], expect - e.tol, expect + e.tol, pass);
    }
  }

  if (e.replicates > 0) {
    std::uint64_t cell = 0;
    for (auto k : e.k) {
      for (double t : e.t) {
        const auto est = estimate_qk(k, t, m, derive_seed(*cfg.seed, cell++), e.replicates,
                                     {opts.threads, cfg.max_events});
        const double expect = exact(k, t);
        const bool covered = est.ci_low <= expect && expect <= est.ci_high;
        ++mc_cells;
        mc_covered += covered ? 1 : 0;
        row("monte_carlo", k, t, expect, est.point, est.ci_low, est.ci_high, covered);
      }
    }
  }

  json j = {{"metadata", metadata(cfg)}, {"case", lf ? "linear_fractional" : "mean_zero"}};
  if (lf) {
    const double C_exact = linear_fractional_constant(lf->first, lf->second);
    const auto est = estimate_constant(sys, DecayWindow::make(m));
    const bool pass = std::abs(est.C_hat - C_exact) <= 1e-4;
    all_pass = all_pass && pass;
    row("constant", 1, est.t_star, C_exact, est.C_hat, C_exact - 1e-4, C_exact + 1e-4, pass);
    j["constant"] = constant_json(est);
  }
  // Coverage of 95% intervals: at least 85% of cells, allowing binomial slack.
  const bool mc_pass = mc_cells == 0 || static_cast<double>(mc_covered) >= 0.85 * static_cast<double>(mc_cells);
  all_pass = all_pass && mc_pass;
  j["monte_carlo"] = {{"cells", mc_cells}, {"covered", mc_covered}, {"pass", mc_pass}};
  j["all_pass"] = all_pass;
  out.write("oracle.csv", table);
  out.write_json("oracle.json", j);
  result.summary = all_pass ? "all oracle comparisons pass" : "oracle comparison FAILED";
  if (!all_pass) result.exit_code = kExitNumerical;
}

inline void run_slope(const ExperimentConfig& cfg, const SlopeExperiment& e, const RunOptions& opts,
                      ArtifactSet& out, RunResult& result) {
  const auto& m = cfg.model;
  SurvivalCurve curve;
  if (e.source == "ode") {
    const auto sol = solve_survival(TruncatedSystem(m, e.K), {e.t_hi, e.tol, e.dt});
    curve = sol.curve(1);
  } else {
    const auto grid = uniform_grid(e.t_lo, e.t_hi, e.dt);
    curve = estimate_curve(1, grid, m, *cfg.seed, e.replicates, {opts.threads, cfg.max_events}, true);
  }
  const auto fit = fit_decay_rate(curve, e.t_lo, e.t_hi);
  json j = {{"metadata", metadata(cfg)},
            {"source", e.source},
            {"window", {e.t_lo, e.t_hi}},
            {"lambda_hat", fit.lambda_hat},
            {"std_error", fit.std_error},
            {"points", fit.points},
            {"lambda", m.lambda()},
            {"relative_difference", (fit.lambda_hat - m.lambda()) / m.lambda()}};
  const SurvivalCurve one[] = {curve};
  out.write("slope_curve.csv", csv::curves(one));
  out.write_json("slope.json", j);
  result.summary = "lambda_hat = " + csv::number(fit.lambda_hat) + " (lambda = " + csv::number(m.lambda()) + ")";
}

}  // namespace detail

// Runs one experiment and writes its artifacts plus manifest.json. On any
// exception every file written by this run is removed before rethrowing.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  const auto dir = opts.out_dir.empty() ? std::filesystem::path(cfg.output.dir) : opts.out_dir;
  detail::ArtifactSet out(dir);
  RunResult result;
  try {
    std::visit(
        [&](const auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, SurvivalExperiment>) detail::run_survival(cfg, e, opts, out, result);
          if constexpr (std::is_same_v<T, ConstantExperiment>) detail::run_constant(cfg, e, out, result);
          if constexpr (std::is_same_v<T, GumbelExperiment>) detail::run_gumbel(cfg, e, opts, out, result);
          if constexpr (std::is_same_v<T, OracleExperiment>) detail::run_oracle(cfg, e, opts, out, result);
          if constexpr (std::is_same_v<T, SlopeExperiment>) detail::run_slope(cfg, e, opts, out, result);
        },
        cfg.experiment);
    json files = json::array();
    for (const auto& p : out.written()) files.push_back(p.filename().string());
    out.write_json("manifest.json", {{"metadata", metadata(cfg)},
                                     {"experiment", cfg.type()},
                                     {"artifacts", files},
                                     {"threads", opts.threads},
                                     {"exit_code", result.exit_code}});
  } catch (...) {
    out.rollback();
    throw;
  }
  result.artifacts = out.written();
  return result;
}

}  // namespace sporebp
