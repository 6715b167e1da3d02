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

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sporebp/analytic.hpp"
#include "sporebp/errors.hpp"
#include "sporebp/model.hpp"
#include "sporebp/simulator.hpp"

namespace sporebp {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

struct SurvivalExperiment {
  std::vector<std::uint64_t> k{1};
  double t_max = 0.0;
  double dt = 0.0;
  std::string method = "ode";  // ode | mc | both
  std::uint64_t K = 0;
  double tol = 1e-9;
  std::uint64_t replicates = 10000;
};

struct ConstantExperiment {
  std::uint64_t K = 0;
  double tol = 1e-8;
  double dt = 0.25;
  double t_max = 0.0;
  double a = 0.0;
  double epsilon = 0.0;
};

struct GumbelExperiment {
  PopulationState::Counts z;
  std::optional<double> C;
  std::uint64_t replicates = 2000;
  double a = 0.0;
  std::uint64_t K = 0;
};

struct OracleExperiment {
  std::vector<std::uint64_t> k;
  std::vector<double> t{0.5, 1.0, 2.0, 5.0};
  double tol = 1e-8;
  std::uint64_t replicates = 0;  // 0 disables the Monte Carlo rows
  std::uint64_t K = 0;
};

struct SlopeExperiment {
  std::string source = "ode";  // ode | mc
  double t_lo = 0.0;
  double t_hi = 0.0;
  double dt = 0.0;
  std::uint64_t K = 0;
  double tol = 1e-10;
  std::uint64_t replicates = 100000;
};

using Experiment =
    std::variant<SurvivalExperiment, ConstantExperiment, GumbelExperiment, OracleExperiment, SlopeExperiment>;

struct OutputSpec {
  std::string dir = "out";
  std::string format = "csv";
};

struct ExperimentConfig {
  ModelParams model;
  Experiment experiment;
  std::optional<std::uint64_t> seed;
  bool ephemeral_seed = false;
  std::uint64_t max_events = kDefaultMaxEvents;
  OutputSpec output;
  // The config with every default filled in; embedded in artifact metadata.
  json resolved;

  std::string type() const;
  bool randomized() const;
};

struct ParseOptions {
  std::optional<std::uint64_t> seed_override;
  bool ephemeral = false;
};

namespace detail {

// Reads keys of one JSON object, type-checking them and rejecting keys that
// were never read.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (!v) throw ConfigError("missing required key", at(key));
    return *v;
  }

  std::optional<double> number(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return as_number(*v, at(key));
  }

  std::optional<std::uint64_t> count(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return as_count(*v, at(key));
  }

  std::optional<std::string> string(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw ConfigError("expected a string", at(key));
    return v->get<std::string>();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key", at(key));
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError("expected a number", path);
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError("expected a finite number", path);
    return x;
  }

  static std::uint64_t as_count(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (x >= 0.0 && x < 1.8e19 && std::floor(x) == x) return static_cast<std::uint64_t>(x);
    }
    throw ConfigError("expected a nonnegative integer", path);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline OffspringDistribution parse_offspring(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  const auto kind = r.string("kind");
  if (!kind) throw ConfigError("missing required key", r.at("kind"));
  std::optional<OffspringDistribution> d;
  try {
    if (*kind == "table") {
      const json& probs = r.require("probs");
      if (!probs.is_array()) throw ConfigError("expected an array of probabilities", r.at("probs"));
      std::vector<double> p;
      for (std::size_t i = 0; i < probs.size(); ++i)
        p.push_back(ObjectReader::as_number(probs[i], r.at("probs") + "[" + std::to_string(i) + "]"));
      try {
        d = OffspringDistribution::table(std::move(p));
      } catch (const ConfigError& e) {
        if (!e.path().empty()) throw;
        throw ConfigError(e.what(), r.at("probs"));
      }
    } else if (*kind == "poisson") {
      const json& mean = r.require("mean");
      d = OffspringDistribution::poisson(ObjectReader::as_number(mean, r.at("mean")));
    } else if (*kind == "geometric") {
      const json& p = r.require("p");
      d = OffspringDistribution::geometric(ObjectReader::as_number(p, r.at("p")));
    } else {
      throw ConfigError("kind must be one of table, poisson, geometric", r.at("kind"));
    }
  } catch (const ConfigError& e) {
    if (!e.path().empty()) throw;
    throw ConfigError(e.what(), path);
  }
  r.finish();
  return *d;
}

inline json offspring_to_json(const OffspringDistribution& d) {
  switch (d.kind()) {
    case OffspringKind::table:
      return {{"kind", "table"}, {"probs", std::vector<double>(d.probs().begin(), d.probs().end())}};
    case OffspringKind::poisson:
      return {{"kind", "poisson"}, {"mean", d.parameter()}};
    case OffspringKind::geometric:
      return {{"kind", "geometric"}, {"p", d.parameter()}};
  }
  return {};
}

inline std::vector<std::uint64_t> parse_types(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError("expected a nonempty array of types", path);
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto k = ObjectReader::as_count(v[i], path + "[" + std::to_string(i) + "]");
    if (k == 0) throw ConfigError("types must be >= 1", path + "[" + std::to_string(i) + "]");
    out.push_back(k);
  }
  return out;
}

inline std::vector<double> parse_times(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError("expected a nonempty array of times", path);
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = ObjectReader::as_number(v[i], path + "[" + std::to_string(i) + "]");
    if (t < 0.0) throw ConfigError("times must be >= 0", path + "[" + std::to_string(i) + "]");
    out.push_back(t);
  }
  return out;
}

inline void require_subcritical(const ModelParams& m, const std::string& experiment) {
  if (!m.subcritical()) {
    throw ConfigError("the " + experiment +
                          " experiment needs a subcritical model: decay rate lambda = rho + beta (1 - mean) = " +
                          std::to_string(m.lambda()) + " must be > 0",
                      "model");
  }
}

inline std::uint64_t truncation_or_default(ObjectReader& r, const ModelParams& m, std::uint64_t at_least) {
  const auto K = r.count("K");
  if (K && *K < std::max<std::uint64_t>(at_least, 1))
    throw ConfigError("K must be >= " + std::to_string(std::max<std::uint64_t>(at_least, 1)), r.at("K"));
  return K.value_or(std::max(TruncatedSystem::default_truncation(m), at_least));
}

inline double positive(ObjectReader& r, const std::string& key, double fallback) {
  const auto v = r.number(key);
  if (v && !(*v > 0.0)) throw ConfigError("must be > 0", r.at(key));
  return v.value_or(fallback);
}

}  // namespace detail

inline std::string ExperimentConfig::type() const {
  return std::visit(
      [](const auto& e) -> std::string {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, SurvivalExperiment>) return "survival";
        if constexpr (std::is_same_v<T, ConstantExperiment>) return "constant";
        if constexpr (std::is_same_v<T, GumbelExperiment>) return "gumbel";
        if constexpr (std::is_same_v<T, OracleExperiment>) return "oracle";
        if constexpr (std::is_same_v<T, SlopeExperiment>) return "slope";
      },
      experiment);
}

inline bool ExperimentConfig::randomized() const {
  return std::visit(
      [](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, SurvivalExperiment>) return e.method != "ode";
        if constexpr (std::is_same_v<T, GumbelExperiment>) return true;
        if constexpr (std::is_same_v<T, OracleExperiment>) return e.replicates > 0;
        if constexpr (std::is_same_v<T, SlopeExperiment>) return e.source == "mc";
        return false;
      },
      experiment);
}

// Parses and validates a JSON experiment config. Errors carry the JSON path
// of the offending key.
inline ExperimentConfig parse_config(const std::string& text, const ParseOptions& opts = {}) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  detail::ObjectReader top(root, "");
  if (auto v = top.count("schema_version"); v && *v != kConfigSchemaVersion)
    throw ConfigError("unsupported schema version", "schema_version");

  // model
  detail::ObjectReader mr(top.require("model"), "model");
  const auto beta = mr.number("beta");
  if (!beta) throw ConfigError("missing required key", "model.beta");
  const double rho = mr.number("rho").value_or(0.0);
  auto offspring = detail::parse_offspring(mr.require("offspring"), "model.offspring");
  mr.finish();
  std::optional<ModelParams> model;
  try {
    model.emplace(*beta, rho, std::move(offspring));
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "model");
  }
  const ModelParams& m = *model;

  // experiment
  detail::ObjectReader er(top.require("experiment"), "experiment");
  const auto type = er.string("type");
  if (!type) throw ConfigError("missing required key", "experiment.type");
  std::optional<std::uint64_t> seed = er.count("seed");
  const std::uint64_t max_events = er.count("max_events").value_or(kDefaultMaxEvents);
  if (max_events == 0) throw ConfigError("must be >= 1", "experiment.max_events");

  json ej = {{"type", *type}};
  std::optional<Experiment> experiment;
  if (*type == "survival") {
    SurvivalExperiment e;
    if (const json* v = er.find("k")) e.k = detail::parse_types(*v, "experiment.k");
    const auto t_max = er.number("t_max");
    if (!t_max || !(*t_max > 0.0)) throw ConfigError("t_max is required and must be > 0", "experiment.t_max");
    e.t_max = *t_max;
    e.dt = detail::positive(er, "dt", e.t_max / 100.0);
    e.method = er.string("method").value_or("ode");
    if (e.method != "ode" && e.method != "mc" && e.method != "both")
      throw ConfigError("method must be one of ode, mc, both", "experiment.method");
    const auto kmax = *std::max_element(e.k.begin(), e.k.end());
    e.K = detail::truncation_or_default(er, m, kmax);
    e.tol = detail::positive(er, "tol", e.tol);
    e.replicates = er.count("replicates").value_or(e.replicates);
    if (e.replicates == 0) throw ConfigError("must be >= 1", "experiment.replicates");
    ej.update({{"k", e.k}, {"t_max", e.t_max}, {"dt", e.dt}, {"method", e.method}, {"K", e.K}, {"tol", e.tol}});
    if (e.method != "ode") ej["replicates"] = e.replicates;
    experiment = e;
  } else if (*type == "constant") {
    detail::require_subcritical(m, "constant");
    ConstantExperiment e;
    e.K = detail::truncation_or_default(er, m, 1);
    e.tol = detail::positive(er, "tol", e.tol);
    e.dt = detail::positive(er, "dt", e.dt);
    const auto window = DecayWindow::make(m, er.number("a"), er.number("epsilon"));
    e.a = window.a;
    e.epsilon = window.epsilon;
    e.t_max = detail::positive(er, "t_max", 60.0 / e.a);
    ej.update({{"K", e.K}, {"tol", e.tol}, {"dt", e.dt}, {"t_max", e.t_max}, {"a", e.a}, {"epsilon", e.epsilon}});
    experiment = e;
  } else if (*type == "gumbel") {
    detail::require_subcritical(m, "gumbel");
    GumbelExperiment e;
    const json& z = er.require("z");
    if (!z.is_object() || z.empty()) throw ConfigError("expected a nonempty map from type to count", "experiment.z");
    json zj = json::object();
    for (const auto& [key, value] : z.items()) {
      const std::string path = "experiment.z." + key;
      std::uint64_t k = 0;
      try {
        std::size_t used = 0;
        k = std::stoull(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ConfigError("type keys must be positive integers", path);
      }
      if (k == 0) throw ConfigError("type keys must be positive integers", path);
      const auto n = detail::ObjectReader::as_count(value, path);
      if (n > 0) e.z[k] += n;
      zj[std::to_string(k)] = n;
    }
    if (e.z.empty()) throw ConfigError("initial population is empty", "experiment.z");
    e.C = er.number("C");
    if (e.C && !(*e.C > 0.0 && *e.C <= 1.0)) throw ConfigError("C must lie in (0, 1]", "experiment.C");
    e.replicates = er.count("replicates").value_or(e.replicates);
    if (e.replicates == 0) throw ConfigError("must be >= 1", "experiment.replicates");
    e.a = DecayWindow::make(m, er.number("a")).a;
    e.K = detail::truncation_or_default(er, m, 1);
    ej.update({{"z", zj}, {"replicates", e.replicates}, {"a", e.a}, {"K", e.K}});
    if (e.C) ej["C"] = *e.C;
    experiment = e;
  } else if (*type == "oracle") {
    OracleExperiment e;
    const auto lf = linear_fractional_case(m);
    if (!mean_zero_case(m) && !lf)
      throw ConfigError(
          "no closed form applies: the oracle needs mean offspring 0, or rho = 0 with offspring on {0, 2}",
          "model");
    if (lf) detail::require_subcritical(m, "oracle");
    e.k = lf ? std::vector<std::uint64_t>{1} : std::vector<std::uint64_t>{1, 2, 5};
    if (const json* v = er.find("k")) e.k = detail::parse_types(*v, "experiment.k");
    if (lf && (e.k.size() != 1 || e.k[0] != 1))
      throw ConfigError("the linear fractional closed form covers k = 1 only", "experiment.k");
    if (const json* v = er.find("t")) e.t = detail::parse_times(*v, "experiment.t");
    e.tol = detail::positive(er, "tol", e.tol);
    e.replicates = er.count("replicates").value_or(0);
    e.K = detail::truncation_or_default(er, m, *std::max_element(e.k.begin(), e.k.end()));
    ej.update({{"k", e.k}, {"t", e.t}, {"tol", e.tol}, {"replicates", e.replicates}, {"K", e.K}});
    experiment = e;
  } else if (*type == "slope") {
    detail::require_subcritical(m, "slope");
    SlopeExperiment e;
    e.source = er.string("source").value_or("ode");
    if (e.source != "ode" && e.source != "mc") throw ConfigError("source must be ode or mc", "experiment.source");
    const double lam = m.lambda();
    e.t_lo = er.number("t_lo").value_or(20.0 / lam);
    e.t_hi = er.number("t_hi").value_or(40.0 / lam);
    if (!(e.t_lo >= 0.0 && e.t_hi > e.t_lo)) throw ConfigError("need 0 <= t_lo < t_hi", "experiment.t_hi");
    e.dt = detail::positive(er, "dt", (e.t_hi - e.t_lo) / 50.0);
    e.K = detail::truncation_or_default(er, m, 1);
    e.tol = detail::positive(er, "tol", e.tol);
    e.replicates = er.count("replicates").value_or(e.replicates);
    if (e.replicates == 0) throw ConfigError("must be >= 1", "experiment.replicates");
    ej.update({{"source", e.source}, {"t_lo", e.t_lo}, {"t_hi", e.t_hi}, {"dt", e.dt}, {"K", e.K}, {"tol", e.tol}});
    if (e.source == "mc") ej["replicates"] = e.replicates;
    experiment = e;
  } else {
    throw ConfigError("type must be one of survival, constant, gumbel, oracle, slope", "experiment.type");
  }
  er.finish();

  OutputSpec output;
  if (const json* o = top.find("output")) {
    detail::ObjectReader orr(*o, "output");
    output.dir = orr.string("dir").value_or(output.dir);
    output.format = orr.string("format").value_or(output.format);
    if (output.format != "csv") throw ConfigError("only the csv format is supported", "output.format");
    orr.finish();
  }
  top.finish();

  ExperimentConfig cfg{m, *experiment, seed, false, max_events, output, {}};
  if (opts.seed_override) cfg.seed = opts.seed_override;
  if (cfg.randomized() && !cfg.seed) {
    if (!opts.ephemeral)
      throw ConfigError("randomized experiments need an explicit seed (or pass --ephemeral)", "experiment.seed");
    std::random_device rd;
    cfg.seed = (std::uint64_t{rd()} << 32) | rd();
    cfg.ephemeral_seed = true;
  }
  if (cfg.randomized()) {
    ej["seed"] = *cfg.seed;
    ej["max_events"] = cfg.max_events;
  }
  cfg.resolved = {{"schema_version", kConfigSchemaVersion},
                  {"model", {{"beta", m.beta()}, {"rho", m.rho()}, {"offspring", detail::offspring_to_json(m.offspring())}}},
                  {"experiment", ej},
                  {"output", {{"format", output.format}}}};
  return cfg;
}

}  // namespace sporebp
