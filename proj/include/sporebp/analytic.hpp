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
#include "sporebp/model.hpp"

namespace sporebp {

enum class CurveSource { ode, closed_form, monte_carlo };

inline const char* to_string(CurveSource s) {
  switch (s) {
    case CurveSource::ode: return "ode";
    case CurveSource::closed_form: return "closed_form";
    case CurveSource::monte_carlo: return "monte_carlo";
  }
  return "?";
}

struct CurvePoint {
  double t;
  double q;
  double err;  // error bound (ode), standard error (monte_carlo), 0 (closed_form)
};

// Survival probability q_k(t) on a strictly increasing time grid.
struct SurvivalCurve {
  std::uint64_t k = 1;
  CurveSource source = CurveSource::ode;
  std::vector<CurvePoint> points;
};

// The backward system restricted to types 1..K, with offspring counts above
// K mapped to 0. That process is dominated by the untruncated one, so its
// survival probabilities are lower bounds that increase with K.
class TruncatedSystem {
 public:
  TruncatedSystem(ModelParams params, std::uint64_t K) : params_(std::move(params)), K_(K) {
    if (K_ < 1) throw ConfigError("truncation level K must be >= 1");
    probs_.assign(K_ + 1, 0.0);
    double kept = 0.0;
    for (std::uint64_t j = 1; j <= K_; ++j) {
      probs_[j] = params_.offspring().pmf(j);
      kept += probs_[j];
      truncated_mean_ += static_cast<double>(j) * probs_[j];
    }
    probs_[0] = std::max(0.0, 1.0 - kept);
  }

  // Table laws: the support maximum (the system is then exact). Unbounded
  // laws: the smallest K >= 10 whose discarded first moment is below 1e-13.
  static std::uint64_t default_truncation(const ModelParams& params) {
    const auto& d = params.offspring();
    if (auto top = d.support_max()) return std::max<std::uint64_t>(*top, 1);
    std::uint64_t K = 10;
    while (d.first_moment_tail(K) >= 1e-13) K += 10;
    return K;
  }

  explicit TruncatedSystem(ModelParams params)
      : TruncatedSystem(params, default_truncation(params)) {}

  const ModelParams& params() const noexcept { return params_; }
  std::uint64_t K() const noexcept { return K_; }
  // Truncated law p~_0..p~_K.
  std::span<const double> probs() const noexcept { return probs_; }
  double truncated_mean() const noexcept { return truncated_mean_; }

 private:
  ModelParams params_;
  std::uint64_t K_;
  std::vector<double> probs_;
  double truncated_mean_ = 0.0;
};

// Right-hand side of the backward equations. q[k-1] holds q_k, q_0 = 0.
// A type-k host leaves its state at rate rho + beta k; a release (rate beta k)
// leaves hosts of types k-1 and J, which survive independently, so
//   q_k' = -(rho + beta k) q_k + beta k E[1 - (1 - q_{k-1})(1 - q_J)]
//        = -(rho + beta k) q_k + beta k (q_{k-1} + G (1 - q_{k-1})),
// with G = sum_j p~_j q_j. For k = 1 this is q_1' = -(rho + beta) q_1 + beta G.
inline void backward_rhs(std::span<const double> q, const TruncatedSystem& sys, std::span<double> out) {
  const auto K = sys.K();
  const auto p = sys.probs();
  const double beta = sys.params().beta();
  const double rho = sys.params().rho();
  double G = 0.0;
  for (std::uint64_t j = 1; j <= K; ++j) G += p[j] * q[j - 1];
  double prev = 0.0;
  for (std::uint64_t k = 1; k <= K; ++k) {
    const double bk = beta * static_cast<double>(k);
    out[k - 1] = -(rho + bk) * q[k - 1] + bk * (prev + G * (1.0 - prev));
    prev = q[k - 1];
  }
}

inline std::vector<double> backward_rhs(std::span<const double> q, const TruncatedSystem& sys) {
  std::vector<double> out(sys.K());
  backward_rhs(q, sys, out);
  return out;
}

struct SolveOptions {
  double t_max = 10.0;
  // Accepted when the step-halving error estimate is at most tol * q at every
  // output point, which implies absolute accuracy tol.
  double tol = 1e-9;
  // Output spacing; 0 selects t_max / 1000.
  double dt_out = 0.0;
};

struct SurvivalSolution {
  std::vector<SurvivalCurve> curves;  // curves[k - 1] is q_k
  double step = 0.0;                  // accepted RK4 step
  double max_error = 0.0;             // largest absolute error estimate
  std::uint64_t clamped = 0;          // outputs clamped into [0, 1]

  const SurvivalCurve& curve(std::uint64_t k) const { return curves.at(k - 1); }
};

namespace detail {

// Classical RK4 at fixed step h = dt_out / substeps from q = 1; returns the
// state at each output point, row-major [point][k].
inline std::vector<double> integrate_rk4(const TruncatedSystem& sys, std::size_t n_out, double dt_out,
                                         std::uint64_t substeps) {
  const std::size_t K = sys.K();
  std::vector<double> out((n_out + 1) * K);
  std::vector<double> y(K, 1.0), k1(K), k2(K), k3(K), k4(K), tmp(K);
  std::copy(y.begin(), y.end(), out.begin());
  const double h = dt_out / static_cast<double>(substeps);
  for (std::size_t i = 1; i <= n_out; ++i) {
    for (std::uint64_t s = 0; s < substeps; ++s) {
      backward_rhs(y, sys, k1);
      for (std::size_t c = 0; c < K; ++c) tmp[c] = y[c] + 0.5 * h * k1[c];
      backward_rhs(tmp, sys, k2);
      for (std::size_t c = 0; c < K; ++c) tmp[c] = y[c] + 0.5 * h * k2[c];
      backward_rhs(tmp, sys, k3);
      for (std::size_t c = 0; c < K; ++c) tmp[c] = y[c] + h * k3[c];
      backward_rhs(tmp, sys, k4);
      for (std::size_t c = 0; c < K; ++c) y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
    std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(i * K));
  }
  return out;
}

}  // namespace detail

// Integrates q_k(0) = 1, k = 1..K, to t_max with fixed-step RK4, halving the
// step until the Richardson estimate |y_h - y_{h/2}| / 15 meets the tolerance.
inline SurvivalSolution solve_survival(const TruncatedSystem& sys, const SolveOptions& opts) {
  if (!(opts.t_max > 0.0)) throw ConfigError("t_max must be > 0");
  if (!(opts.tol > 0.0)) throw ConfigError("tol must be > 0");
  const double dt_req = opts.dt_out > 0.0 ? opts.dt_out : opts.t_max / 1000.0;
  const auto n_out = static_cast<std::size_t>(std::ceil(opts.t_max / dt_req - 1e-9));
  const double dt_out = opts.t_max / static_cast<double>(n_out);
  const std::size_t K = sys.K();

  // Start inside the RK4 stability interval of the fastest mode.
  const double fastest = sys.params().rho() + sys.params().beta() * static_cast<double>(K);
  std::uint64_t substeps = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(dt_out * fastest / 0.5)));

  // Relative checks are skipped where q is below this (denormal territory).
  constexpr double kTinyQ = 1e-250;
  auto coarse = detail::integrate_rk4(sys, n_out, dt_out, substeps);
  // Worst ratio of error estimate to allowance; RK4 shrinks it ~16x per
  // halving until roundoff takes over.
  double prev_ratio = std::numeric_limits<double>::infinity();
  int stalls = 0;
  for (;;) {
    if (dt_out / static_cast<double>(substeps) < 1e-12 * opts.t_max || substeps > (std::uint64_t{1} << 30))
      throw NumericalError("solve_survival: step size underflow before reaching tol");
    substeps *= 2;
    auto fine = detail::integrate_rk4(sys, n_out, dt_out, substeps);
    double max_err = 0.0, ratio = 0.0;
    for (std::size_t i = 0; i < fine.size(); ++i) {
      if (!std::isfinite(fine[i])) throw NumericalError("solve_survival: non-finite value");
      const double err = std::abs(fine[i] - coarse[i]) / 15.0;
      max_err = std::max(max_err, err);
      double allowed = opts.tol;
      if (std::abs(fine[i]) > kTinyQ) allowed = std::min(allowed, opts.tol * std::abs(fine[i]));
      ratio = std::max(ratio, err / allowed);
    }
    const bool ok = ratio <= 1.0;
    if (!ok) {
      stalls = ratio > 0.5 * prev_ratio ? stalls + 1 : 0;
      if (stalls >= 2) {
        std::ostringstream msg;
        msg << "solve_survival: error estimate stalled at " << max_err << " (tol " << opts.tol
            << "); roundoff limits the attainable accuracy";
        throw NumericalError(msg.str());
      }
      prev_ratio = ratio;
    }
    if (ok) {
      SurvivalSolution sol;
      sol.step = dt_out / static_cast<double>(substeps);
      sol.max_error = max_err;
      sol.curves.resize(K);
      for (std::size_t k = 1; k <= K; ++k) {
        auto& c = sol.curves[k - 1];
        c.k = k;
        c.source = CurveSource::ode;
        c.points.reserve(n_out + 1);
        for (std::size_t i = 0; i <= n_out; ++i) {
          double q = fine[i * K + (k - 1)];
          const double err = std::abs(q - coarse[i * K + (k - 1)]) / 15.0;
          if (q < 0.0 || q > 1.0) {
            q = std::clamp(q, 0.0, 1.0);
            ++sol.clamped;
          }
          // Exact initial condition.
          const double t = i == 0 ? 0.0 : (i == n_out ? opts.t_max : static_cast<double>(i) * dt_out);
          c.points.push_back({t, i == 0 ? 1.0 : q, i == 0 ? 0.0 : err});
        }
      }
      return sol;
    }
    coarse = std::move(fine);
  }
}

// Survival when no new hosts are ever created (mean offspring 0): the host
// must escape removal and keep at least one of its k spores.
inline double closed_form_mu0(std::uint64_t k, double t, double beta, double rho) {
  if (t == 0.0) return 1.0;
  const double x = std::exp(-beta * t);
  // 1 - (1 - x)^k without cancellation for small x.
  const double at_least_one = -std::expm1(static_cast<double>(k) * std::log1p(-x));
  return std::exp(-rho * t) * at_least_one;
}

namespace detail {
inline void check_linear_fractional(double p0, double p2) {
  if (!(p0 >= 0.0 && p2 >= 0.0) || std::abs(p0 + p2 - 1.0) > 1e-12)
    throw ConfigError("linear fractional case requires p0 + p2 = 1");
  if (p0 == p2) throw ConfigError("linear fractional closed form needs p0 != p2 (critical case)");
}
}  // namespace detail

// q_1(t) for rho = 0 and offspring law p0 + p2 = 1 (a linear birth-death chain).
inline double closed_form_linear_fractional(double t, double beta, double p0, double p2) {
  detail::check_linear_fractional(p0, p2);
  const double d = p0 - p2;
  const double e = std::exp(-beta * d * t);
  return d * e / (p0 - p2 * e);
}

// lim e^{lambda t} q_1(t) in the linear fractional case; needs p2 < p0.
inline double linear_fractional_constant(double p0, double p2) {
  detail::check_linear_fractional(p0, p2);
  if (!(p2 < p0)) throw ConfigError("linear fractional constant needs p2 < p0 (subcritical)");
  return 1.0 - p2 / p0;
}

// Detects the closed-form cases. Returns (p0, p2) for rho = 0 with a
// two-point law on {0, 2}.
inline std::optional<std::pair<double, double>> linear_fractional_case(const ModelParams& m) {
  if (m.rho() != 0.0 || m.offspring().kind() != OffspringKind::table) return std::nullopt;
  const auto p = m.offspring().probs();
  if (p.size() != 3 || p[1] != 0.0 || p[0] == p[2]) return std::nullopt;
  return std::make_pair(p[0], p[2]);
}

inline bool mean_zero_case(const ModelParams& m) { return m.mean() == 0.0; }

struct ConstantOptions {
  double tol = 1e-8;    // relative change of h per unit time
  double dt = 0.25;     // grid spacing for h
  double t_max = 0.0;   // 0 selects 60 / a
  double solver_tol = 1e-11;
  bool k_doubling = true;
  double k_doubling_accept = 1e-6;
};

struct ConstantEstimate {
  double C_hat = 0.0;
  double t_star = 0.0;
  std::uint64_t K = 0;
  double lambda = 0.0;
  double last_rel_change = 0.0;  // |h(t*) - h(t* - dt)| / (h(t*) dt)
  std::optional<double> k_doubling_change;
  bool k_doubling_ok = true;
  // Largest increase h(t_i) - h(t_{i-1}) seen on the grid (0 when h is
  // nonincreasing).
  double max_h_increase = 0.0;
  std::vector<std::pair<double, double>> h;  // (t, e^{lambda t} q_1(t)) up to t*
};

namespace detail {
inline ConstantEstimate extract_constant(const TruncatedSystem& sys, const DecayWindow& window,
                                         const ConstantOptions& opts) {
  const double lambda = sys.params().lambda();
  const double t_floor = 10.0 / window.a;
  const double t_max = opts.t_max > 0.0 ? opts.t_max : 60.0 / window.a;
  if (t_max < t_floor + opts.dt) throw ConfigError("estimate_constant: t_max must exceed 10 / a");
  const auto sol = solve_survival(sys, {t_max, opts.solver_tol, opts.dt});
  const auto& pts = sol.curve(1).points;

  ConstantEstimate est;
  est.K = sys.K();
  est.lambda = lambda;
  double prev = 1.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double h = std::exp(lambda * pts[i].t) * pts[i].q;
    est.h.emplace_back(pts[i].t, h);
    if (i == 0) continue;
    const double dt = pts[i].t - pts[i - 1].t;
    est.max_h_increase = std::max(est.max_h_increase, h - prev);
    const double rel = std::abs(h - prev) / (h * dt);
    prev = h;
    est.last_rel_change = rel;
    if (pts[i].t >= t_floor && rel < opts.tol) {
      est.C_hat = h;
      est.t_star = pts[i].t;
      return est;
    }
  }
  std::ostringstream msg;
  msg.precision(17);
  msg << "estimate_constant: no convergence by t_max = " << t_max << "; last h values:";
  for (std::size_t i = est.h.size() >= 3 ? est.h.size() - 3 : 0; i < est.h.size(); ++i)
    msg << " h(" << est.h[i].first << ")=" << est.h[i].second;
  msg << "; last relative change " << est.last_rel_change;
  throw NumericalError(msg.str());
}
}  // namespace detail

// C = lim e^{lambda t} q_1(t), with lambda from the untruncated law. Returns
// h(t*) at the first grid time t* >= 10 / a where h changes by less than tol
// (relative, per unit time), and reports the change under truncation 2K.
inline ConstantEstimate estimate_constant(const TruncatedSystem& sys, const DecayWindow& window,
                                          const ConstantOptions& opts = {}) {
  if (!sys.params().subcritical()) throw ConfigError("estimate_constant requires lambda > 0");
  auto est = detail::extract_constant(sys, window, opts);
  if (opts.k_doubling) {
    const auto doubled = detail::extract_constant(TruncatedSystem(sys.params(), 2 * sys.K()), window, opts);
    est.k_doubling_change = std::abs(doubled.C_hat - est.C_hat);
    est.k_doubling_ok = *est.k_doubling_change < opts.k_doubling_accept;
  }
  return est;
}

struct LowerBoundReport {
  std::uint64_t k0 = 0;       // truncation level used
  double lambda = 0.0;
  double epsilon = 0.0;
  double min_g = 0.0;         // min over grid of ln q_1(t) + (lambda + epsilon) t
  double t_at_min = 0.0;
  double g_end = 0.0;
  double c1 = 0.0;            // exp(min_g): implied constant in q_1 >= c1 e^{-(lambda+eps) t}
  bool stabilized = false;    // minimum attained in the first half of the grid
  std::vector<std::pair<double, double>> g;
};

// Checks q_1(t) >= c1 e^{-(lambda + eps) t} on the process truncated at k0,
// the smallest level whose retained mean exceeds mean - eps / beta. That
// process is dominated by the full one, so the bound carries over.
inline LowerBoundReport truncation_lower_bound_check(const TruncatedSystem& sys, double eps,
                                                     double t_max = 0.0, double dt = 0.0) {
  const auto& m = sys.params();
  LowerBoundReport r;
  r.k0 = truncation_level(m, eps);
  r.lambda = m.lambda();
  r.epsilon = eps;
  if (t_max <= 0.0) t_max = 20.0 / eps;
  const auto sol = solve_survival(TruncatedSystem(m, r.k0), {t_max, 1e-10, dt > 0.0 ? dt : t_max / 1000.0});
  const auto& pts = sol.curve(1).points;
  r.min_g = std::numeric_limits<double>::infinity();
  double min_first_half = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    if (!(p.q > 0.0)) throw NumericalError("truncation_lower_bound_check: q_1 underflowed to 0");
    const double g = std::log(p.q) + (r.lambda + eps) * p.t;
    r.g.emplace_back(p.t, g);
    if (g < r.min_g) {
      r.min_g = g;
      r.t_at_min = p.t;
    }
    if (p.t <= t_max / 2.0) min_first_half = std::min(min_first_half, g);
  }
  r.g_end = r.g.back().second;
  r.c1 = std::exp(r.min_g);
  r.stabilized = min_first_half <= r.min_g;
  return r;
}

}  // namespace sporebp
