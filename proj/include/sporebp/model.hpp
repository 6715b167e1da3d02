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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sporebp/errors.hpp"
#include "sporebp/random.hpp"

namespace sporebp {

enum class OffspringKind { table, poisson, geometric };

inline const char* to_string(OffspringKind kind) {
  switch (kind) {
    case OffspringKind::table: return "table";
    case OffspringKind::poisson: return "poisson";
    case OffspringKind::geometric: return "geometric";
  }
  return "?";
}

struct Moments {
  double mean;    // sum_k k p_k
  double second;  // sum_k k^2 p_k
};

// Law of the spore count J of a newly created host. J = 0 means no host is
// created. Immutable after construction.
class OffspringDistribution {
 public:
  static constexpr double kSumTolerance = 1e-12;
  static constexpr double kRenormalizeTolerance = 1e-9;

  // Finite table p_0..p_J. Sums within 1e-12 of one are accepted as-is,
  // within 1e-9 are renormalized, anything else throws.
  static OffspringDistribution table(std::vector<double> probs) {
    if (probs.empty()) throw ConfigError("offspring table is empty");
    double sum = 0.0;
    for (double p : probs) {
      if (!std::isfinite(p) || p < 0.0) throw ConfigError("offspring probabilities must be finite and >= 0");
      sum += p;
    }
    const double deviation = std::abs(sum - 1.0);
    if (deviation > kRenormalizeTolerance) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "offspring probabilities sum to " << sum << ", not 1";
      throw ConfigError(msg.str());
    }
    if (deviation > kSumTolerance) {
      for (double& p : probs) p /= sum;
    }
    while (probs.size() > 1 && probs.back() == 0.0) probs.pop_back();

    OffspringDistribution d(OffspringKind::table, 0.0);
    d.cdf_.resize(probs.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      acc += probs[j];
      d.cdf_[j] = acc;
    }
    d.cdf_.back() = 1.0;
    d.probs_ = std::move(probs);
    return d;
  }

  // Poisson with the given mean (> 0).
  static OffspringDistribution poisson(double mean) {
    if (!std::isfinite(mean) || mean <= 0.0) throw ConfigError("poisson mean must be finite and > 0");
    return OffspringDistribution(OffspringKind::poisson, mean);
  }

  // Geometric on {0, 1, 2, ...}: P(J = j) = p (1 - p)^j, 0 < p <= 1.
  static OffspringDistribution geometric(double success) {
    if (!std::isfinite(success) || success <= 0.0 || success > 1.0)
      throw ConfigError("geometric success probability must lie in (0, 1]");
    return OffspringDistribution(OffspringKind::geometric, success);
  }

  OffspringKind kind() const noexcept { return kind_; }

  // Rate (poisson) or success probability (geometric); 0 for tables.
  double parameter() const noexcept { return param_; }

  // Table entries p_0..p_J with trailing zeros trimmed; empty for parametric kinds.
  std::span<const double> probs() const noexcept { return probs_; }

  // Largest j with p_j > 0, or nullopt for unbounded support.
  std::optional<std::uint64_t> support_max() const {
    if (kind_ == OffspringKind::table) return probs_.size() - 1;
    if (kind_ == OffspringKind::geometric && param_ == 1.0) return 0;
    return std::nullopt;
  }

  double pmf(std::uint64_t j) const {
    switch (kind_) {
      case OffspringKind::table:
        return j < probs_.size() ? probs_[j] : 0.0;
      case OffspringKind::poisson: {
        const auto x = static_cast<double>(j);
        return std::exp(-param_ + x * std::log(param_) - std::lgamma(x + 1.0));
      }
      case OffspringKind::geometric:
        if (param_ == 1.0) return j == 0 ? 1.0 : 0.0;
        return param_ * std::pow(1.0 - param_, static_cast<double>(j));
    }
    return 0.0;
  }

  Moments moments() const {
    switch (kind_) {
      case OffspringKind::table: {
        Moments m{0.0, 0.0};
        for (std::size_t k = 0; k < probs_.size(); ++k) {
          const auto x = static_cast<double>(k);
          m.mean += x * probs_[k];
          m.second += x * x * probs_[k];
        }
        return m;
      }
      case OffspringKind::poisson:
        return {param_, param_ + param_ * param_};
      case OffspringKind::geometric: {
        const double q = 1.0 - param_;
        return {q / param_, q * (2.0 - param_) / (param_ * param_)};
      }
    }
    return {0.0, 0.0};
  }

  // sum_{j > K} j p_j; used to pick truncation levels for unbounded laws.
  double first_moment_tail(std::uint64_t K) const {
    if (kind_ == OffspringKind::table) {
      double tail = 0.0;
      for (std::size_t j = K + 1; j < probs_.size(); ++j) tail += static_cast<double>(j) * probs_[j];
      return tail;
    }
    double head = 0.0;
    for (std::uint64_t j = 1; j <= K; ++j) head += static_cast<double>(j) * pmf(j);
    return std::max(0.0, moments().mean - head);
  }

  // Exact draw. Tables use inverse CDF on the cumulative table; poisson uses
  // sequential inversion for small means and PTRS (Hoermann 1993) otherwise;
  // geometric uses floor(log U / log(1 - p)).
  std::uint64_t sample(RandomStream& rng) const {
    switch (kind_) {
      case OffspringKind::table: {
        const double u = rng.uniform_pos();
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<std::uint64_t>(it - cdf_.begin());
      }
      case OffspringKind::poisson:
        return param_ < 10.0 ? poisson_inversion(rng) : poisson_ptrs(rng);
      case OffspringKind::geometric: {
        if (param_ == 1.0) return 0;
        return static_cast<std::uint64_t>(std::floor(std::log(rng.uniform_pos()) / std::log1p(-param_)));
      }
    }
    return 0;
  }

 private:
  OffspringDistribution(OffspringKind kind, double param) : kind_(kind), param_(param) {}

  std::uint64_t poisson_inversion(RandomStream& rng) const {
    const double u = rng.uniform();
    double p = std::exp(-param_);
    double cdf = p;
    std::uint64_t k = 0;
    while (u >= cdf) {
      ++k;
      p *= param_ / static_cast<double>(k);
      const double next = cdf + p;
      if (next == cdf) break;  // numerically exhausted tail
      cdf = next;
    }
    return k;
  }

  std::uint64_t poisson_ptrs(RandomStream& rng) const {
    const double lam = param_;
    const double slam = std::sqrt(lam);
    const double loglam = std::log(lam);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      const double u = rng.uniform() - 0.5;
      const double v = rng.uniform_pos();
      const double us = 0.5 - std::abs(u);
      const double k = std::floor((2.0 * a / us + b) * u + lam + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
          -lam + k * loglam - std::lgamma(k + 1.0))
        return static_cast<std::uint64_t>(k);
    }
  }

  OffspringKind kind_;
  double param_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

inline Moments mean_and_second_moment(const OffspringDistribution& d) { return d.moments(); }

inline std::uint64_t sample_offspring(const OffspringDistribution& d, RandomStream& rng) {
  return d.sample(rng);
}

// beta: release rate per spore; rho: removal rate per host.
class ModelParams {
 public:
  ModelParams(double beta, double rho, OffspringDistribution offspring)
      : beta_(beta), rho_(rho), offspring_(std::move(offspring)), moments_(offspring_.moments()) {
    if (!std::isfinite(beta) || beta <= 0.0) throw ConfigError("beta must be finite and > 0");
    if (!std::isfinite(rho) || rho < 0.0) throw ConfigError("rho must be finite and >= 0");
  }

  double beta() const noexcept { return beta_; }
  double rho() const noexcept { return rho_; }
  const OffspringDistribution& offspring() const noexcept { return offspring_; }
  double mean() const noexcept { return moments_.mean; }
  double second_moment() const noexcept { return moments_.second; }

  // rho + beta (1 - mean); the exponential decay rate of the survival tail.
  double lambda() const noexcept { return rho_ + beta_ * (1.0 - moments_.mean); }
  bool subcritical() const noexcept { return lambda() > 0.0; }

 private:
  double beta_;
  double rho_;
  OffspringDistribution offspring_;
  Moments moments_;
};

inline double decay_rate(const ModelParams& m) { return m.lambda(); }

struct ValidationCheck {
  std::string name;
  bool passed;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  // Mean offspring count is zero: the C k e^{-lambda t} tail does not apply, but the
  // survival probability has a closed form.
  bool mean_zero = false;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

inline ValidationReport validate(const ModelParams& m, bool require_subcritical) {
  ValidationReport report;
  auto fmt = [](double x) {
    std::ostringstream s;
    s.precision(12);
    s << x;
    return s.str();
  };
  report.checks.push_back({"beta > 0", m.beta() > 0.0, "beta = " + fmt(m.beta())});
  report.checks.push_back({"rho >= 0", m.rho() >= 0.0, "rho = " + fmt(m.rho())});

  report.mean_zero = m.mean() == 0.0;
  report.checks.push_back(
      {"mean > 0", true,
       report.mean_zero ? "mean = 0: no C k e^{-lambda t} tail; closed form q_k(t) = e^{-rho t}(1 - (1 - e^{-beta t})^k) applies"
                        : "mean = " + fmt(m.mean())});

  const bool finite_m2 = std::isfinite(m.second_moment());
  report.checks.push_back({"second moment finite", finite_m2, "sum k^2 p_k = " + fmt(m.second_moment())});

  const double lam = m.lambda();
  const bool sub = lam > 0.0;
  report.checks.push_back({"subcritical (lambda = rho + beta(1 - mean) > 0)", sub || !require_subcritical,
                           "lambda = " + fmt(lam) + (require_subcritical ? "" : " (not required)")});
  return report;
}

// Exponent a and slack epsilon with 0 < a < min(lambda, beta) and
// 0 < epsilon < min(lambda, beta) - a.
struct DecayWindow {
  double a;
  double epsilon;

  static DecayWindow make(const ModelParams& m, std::optional<double> a = std::nullopt,
                          std::optional<double> epsilon = std::nullopt) {
    const double bound = std::min(m.lambda(), m.beta());
    if (!(bound > 0.0)) throw ConfigError("decay window requires a subcritical model (lambda > 0)");
    DecayWindow w{a.value_or(bound / 2.0), epsilon.value_or(bound / 4.0)};
    if (!(w.a > 0.0 && w.a < bound)) throw ConfigError("a must lie in (0, min(lambda, beta))");
    if (!(w.epsilon > 0.0 && w.epsilon < bound - w.a))
      throw ConfigError("epsilon must lie in (0, min(lambda, beta) - a)");
    return w;
  }
};

// Smallest k0 >= 1 with sum_{k <= k0} k p_k > mean - epsilon / beta: the
// truncation level at which the truncated process decays no faster than
// lambda + epsilon.
inline std::uint64_t truncation_level(const ModelParams& m, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  const double target = m.mean() - epsilon / m.beta();
  const auto& d = m.offspring();
  double head = 0.0;
  for (std::uint64_t k = 1;; ++k) {
    head += static_cast<double>(k) * d.pmf(k);
    if (head > target) return k;
    if (k > 100'000'000) throw NumericalError("truncation level search did not terminate");
  }
}

}  // namespace sporebp
