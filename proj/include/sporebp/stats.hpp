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
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sporebp/analytic.hpp"
#include "sporebp/errors.hpp"
#include "sporebp/model.hpp"
#include "sporebp/simulator.hpp"

namespace sporebp {

inline constexpr double kZ95 = 1.959963984540054;

struct EstimateWithCI {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::uint64_t n = 0;
  std::uint64_t successes = 0;
  std::string method = "wilson95";
};

// Wilson score interval for a binomial proportion.
inline EstimateWithCI wilson_interval(std::uint64_t successes, std::uint64_t n, double z = kZ95) {
  if (n == 0) throw ConfigError("wilson_interval: n must be >= 1");
  if (successes > n) throw ConfigError("wilson_interval: successes > n");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  EstimateWithCI e;
  e.point = p;
  e.n = n;
  e.successes = successes;
  e.ci_low = std::clamp(center - half, 0.0, p);
  e.ci_high = std::clamp(center + half, p, 1.0);
  return e;
}

// Monte Carlo estimate of q_k(t) from n replicates of a single type-k host.
inline EstimateWithCI estimate_qk(std::uint64_t k, double t, const ModelParams& m, std::uint64_t seed,
                                  std::uint64_t n, BatchOptions opts = {}) {
  if (k == 0) throw ConfigError("estimate_qk: k must be >= 1");
  const auto outcomes = run_batch(PopulationState::single(k), m, seed, n, t, opts);
  const auto alive = static_cast<std::uint64_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const SimOutcome& o) { return o.censored; }));
  return wilson_interval(alive, n);
}

// Monte Carlo survival curve on the given time grid. By default all points
// share one batch (a monotone curve). With `independent_points`, point i uses
// its own replicates (streams i*n .. i*n + n - 1), which makes the pointwise
// errors independent for regression.
inline SurvivalCurve estimate_curve(std::uint64_t k, std::span<const double> grid, const ModelParams& m,
                                    std::uint64_t seed, std::uint64_t n, BatchOptions opts = {},
                                    bool independent_points = false) {
  if (grid.empty()) throw ConfigError("estimate_curve: empty time grid");
  if (n == 0) throw ConfigError("estimate_curve: n must be >= 1");
  SurvivalCurve curve;
  curve.k = k;
  curve.source = CurveSource::monte_carlo;
  auto point = [&](double t, std::uint64_t alive) {
    const double p = static_cast<double>(alive) / static_cast<double>(n);
    curve.points.push_back({t, p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))});
  };
  if (!independent_points) {
    const double horizon = *std::max_element(grid.begin(), grid.end());
    const auto outcomes = run_batch(PopulationState::single(k), m, seed, n, horizon, opts);
    for (double t : grid) {
      const auto alive = static_cast<std::uint64_t>(std::count_if(
          outcomes.begin(), outcomes.end(), [t](const SimOutcome& o) { return o.censored || o.time > t; }));
      point(t, alive);
    }
    return curve;
  }
  std::vector<char> alive(n * grid.size());
  parallel_for_index(alive.size(), opts.threads, [&](std::uint64_t r) {
    RandomStream rng(seed, r);
    alive[r] = survival_indicator(k, grid[r / n], m, rng, opts.max_events) ? 1 : 0;
  });
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto first = alive.begin() + static_cast<std::ptrdiff_t>(i * n);
    point(grid[i], static_cast<std::uint64_t>(std::count(first, first + static_cast<std::ptrdiff_t>(n), 1)));
  }
  return curve;
}

struct GrowthReport {
  double sum_k = 0.0;       // sum_k k z_k (total spores)
  double sum_k2 = 0.0;      // sum_k k^2 z_k
  double exponent = 0.0;    // 1 + a / lambda
  double ratio = 0.0;       // sum_k2 / sum_k^exponent
  std::uint64_t max_type = 0;
  // Advisory: the asymptotic condition asks ratio -> 0; a finite-n ratio
  // above 1 indicates spores concentrated on too few hosts.
  bool flagged = false;
};

inline GrowthReport check_growth_condition(const PopulationState::Counts& z, double a, double lambda) {
  if (z.empty()) throw ConfigError("check_growth_condition: empty initial counts");
  if (!(a > 0.0) || !(lambda > 0.0)) throw ConfigError("check_growth_condition: a and lambda must be > 0");
  GrowthReport r;
  for (const auto& [k, n] : z) {
    const auto kd = static_cast<double>(k);
    r.sum_k += kd * static_cast<double>(n);
    r.sum_k2 += kd * kd * static_cast<double>(n);
    if (n > 0) r.max_type = std::max(r.max_type, k);
  }
  r.exponent = 1.0 + a / lambda;
  r.ratio = r.sum_k2 / std::pow(r.sum_k, r.exponent);
  r.flagged = r.ratio > 1.0;
  return r;
}

// sup_x |F_n(x) - F(x)| for the empirical CDF F_n of `sample`.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw ConfigError("ks_distance: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return std::clamp(d, 0.0, 1.0);
}

// Kolmogorov survival function Q(x) = P(K > x) = 2 sum_{j>=1} (-1)^{j-1} e^{-2 j^2 x^2}.
inline double kolmogorov_sf(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.0) {
    // Theta-function form, accurate for small x.
    constexpr double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int j = 1; j <= 50; ++j) {
      const double odd = 2.0 * j - 1.0;
      s += std::exp(-odd * odd * pi2 / (8.0 * x * x));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / x * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    s += (j % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct TwoSampleKS {
  double distance = 0.0;
  double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value
// (Stephens' small-sample correction).
inline TwoSampleKS ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d)};
}

inline double gumbel_cdf(double w) { return std::exp(-std::exp(-w)); }
inline double gumbel_quantile(double p) { return -std::log(-std::log(p)); }

// Median of a sample (mean of the middle pair for even sizes).
inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Empirical quantile by linear interpolation between order statistics.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct QuantileRow {
  double p;
  double empirical;
  double predicted;
};

struct GumbelReport {
  double lambda = 0.0;
  double C = 0.0;
  double total_spores = 0.0;      // sum_k k z_k
  double centering = 0.0;         // ln(C sum_k k z_k)
  double location = 0.0;          // centering / lambda, in time units
  double scale = 0.0;             // 1 / lambda
  std::vector<double> times;      // extinction times, replicate order
  std::vector<double> w;          // lambda T - centering, replicate order
  double ks = 1.0;
  double median_w = 0.0;
  double predicted_median_w = 0.0;
  std::vector<QuantileRow> quantiles;
};

// Summarizes extinction times against the Gumbel limit of lambda T - ln(C sum k z_k).
inline GumbelReport gumbel_report(std::vector<double> times, double lambda, double C, double total_spores) {
  GumbelReport r;
  r.lambda = lambda;
  r.C = C;
  r.total_spores = total_spores;
  r.centering = std::log(C * total_spores);
  r.location = r.centering / lambda;
  r.scale = 1.0 / lambda;
  r.times = std::move(times);
  r.w.reserve(r.times.size());
  for (double t : r.times) r.w.push_back(lambda * t - r.centering);
  r.ks = ks_distance(r.w, gumbel_cdf);
  r.median_w = median(r.w);
  r.predicted_median_w = gumbel_quantile(0.5);
  std::vector<double> sorted = r.w;
  std::sort(sorted.begin(), sorted.end());
  for (double p : {0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95})
    r.quantiles.push_back({p, quantile_sorted(sorted, p), gumbel_quantile(p)});
  return r;
}

inline GumbelReport gumbel_experiment(const PopulationState::Counts& z, const ModelParams& m, double C,
                                      std::uint64_t seed, std::uint64_t replicates, BatchOptions opts = {}) {
  if (!m.subcritical()) throw ConfigError("gumbel_experiment requires lambda > 0");
  if (!(C > 0.0 && C <= 1.0)) throw ConfigError("gumbel_experiment: C must lie in (0, 1]");
  const PopulationState init(z);
  if (init.extinct()) throw ConfigError("gumbel_experiment: initial population is empty");
  const auto outcomes = run_batch(init, m, seed, replicates, std::nullopt, opts);
  std::vector<double> times;
  times.reserve(outcomes.size());
  for (const auto& o : outcomes) times.push_back(o.time);
  return gumbel_report(std::move(times), m.lambda(), C, static_cast<double>(init.spores()));
}

struct DecayFit {
  double lambda_hat = 0.0;
  double std_error = 0.0;
  std::size_t points = 0;
};

// Least-squares slope of -ln q against t over [t_lo, t_hi]. Monte Carlo
// curves are weighted by (q / err)^2, the inverse delta-method variance of
// ln q, and report the known-variance standard error; other curves use
// ordinary least squares with the residual-based standard error.
inline DecayFit fit_decay_rate(const SurvivalCurve& curve, double t_lo, double t_hi) {
  std::vector<double> xs, ys, ws;
  const bool weighted = curve.source == CurveSource::monte_carlo;
  for (const auto& p : curve.points) {
    if (p.t < t_lo || p.t > t_hi) continue;
    if (!(p.q > 0.0)) throw NumericalError("fit_decay_rate: nonpositive q in window at t = " + std::to_string(p.t));
    xs.push_back(p.t);
    ys.push_back(-std::log(p.q));
    if (weighted) {
      if (!(p.err > 0.0)) throw NumericalError("fit_decay_rate: zero standard error in weighted fit");
      ws.push_back((p.q / p.err) * (p.q / p.err));
    } else {
      ws.push_back(1.0);
    }
  }
  if (xs.size() < 2) throw NumericalError("fit_decay_rate: fewer than two points in window");
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sw += ws[i];
    sx += ws[i] * xs[i];
    sy += ws[i] * ys[i];
  }
  const double xbar = sx / sw, ybar = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += ws[i] * (xs[i] - xbar) * (xs[i] - xbar);
    sxy += ws[i] * (xs[i] - xbar) * (ys[i] - ybar);
  }
  DecayFit fit;
  fit.points = xs.size();
  fit.lambda_hat = sxy / sxx;
  if (weighted) {
    fit.std_error = std::sqrt(1.0 / sxx);
  } else if (xs.size() > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - ybar - fit.lambda_hat * (xs[i] - xbar);
      rss += r * r;
    }
    fit.std_error = std::sqrt(rss / static_cast<double>(xs.size() - 2) / sxx);
  }
  return fit;
}

}  // namespace sporebp
