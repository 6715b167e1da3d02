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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "sporebp/analytic.hpp"

using namespace sporebp;

namespace {

ModelParams model(double beta, double rho, std::vector<double> probs) {
  return ModelParams(beta, rho, OffspringDistribution::table(std::move(probs)));
}

// Direct O(K^2) evaluation of the first-event decomposition, q_0 = 0.
std::vector<double> rhs_brute_force(const std::vector<double>& q, const TruncatedSystem& sys) {
  const auto K = sys.K();
  const auto p = sys.probs();
  auto qq = [&](std::uint64_t j) { return j == 0 ? 0.0 : q[j - 1]; };
  std::vector<double> out(K);
  for (std::uint64_t k = 1; k <= K; ++k) {
    double s = 0.0;
    for (std::uint64_t j = 0; j <= K; ++j) s += p[j] * (1.0 - (1.0 - qq(k - 1)) * (1.0 - qq(j)));
    const double bk = sys.params().beta() * double(k);
    out[k - 1] = -(sys.params().rho() + bk) * q[k - 1] + bk * s;
  }
  return out;
}

std::vector<double> random_q(RandomStream& rng, std::uint64_t K) {
  std::vector<double> q(K);
  for (auto& x : q) x = rng.uniform();
  return q;
}

}  // namespace

TEST(BackwardRhs, Examples) {
  const TruncatedSystem one(model(1.0, 0.0, {1.0}), 1);
  EXPECT_EQ(backward_rhs(std::vector<double>{1.0}, one), std::vector<double>{-1.0});

  const TruncatedSystem lf(model(1.0, 0.0, {0.6, 0.0, 0.4}), 2);
  for (double q1 : {0.0, 0.3, 1.0})
    for (double q2 : {0.0, 0.5, 0.9}) {
      const auto d = backward_rhs(std::vector<double>{q1, q2}, lf);
      EXPECT_DOUBLE_EQ(d[0], -q1 + 0.4 * q2);
    }
}

TEST(BackwardRhs, ZeroIsAbsorbing) {
  const TruncatedSystem sys(ModelParams(0.7, 0.4, OffspringDistribution::poisson(1.3)), 15);
  for (double v : backward_rhs(std::vector<double>(15, 0.0), sys)) EXPECT_EQ(v, 0.0);
}

TEST(BackwardRhs, FirstComponentAndBruteForce) {
  RandomStream rng(41, 0);
  const TruncatedSystem systems[] = {
      TruncatedSystem(model(1.0, 0.0, {0.6, 0.0, 0.4}), 6),
      TruncatedSystem(model(0.8, 0.3, {0.5, 0.3, 0.2}), 9),
      TruncatedSystem(ModelParams(0.5, 1.0, OffspringDistribution::poisson(2.0)), 12),
      TruncatedSystem(ModelParams(1.2, 0.1, OffspringDistribution::geometric(0.6)), 7),
  };
  for (const auto& sys : systems) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto q = random_q(rng, sys.K());
      const auto d = backward_rhs(q, sys);
      double G = 0.0;
      for (std::uint64_t j = 1; j <= sys.K(); ++j) G += sys.probs()[j] * q[j - 1];
      const double beta = sys.params().beta(), rho = sys.params().rho();
      EXPECT_NEAR(d[0], -(rho + beta) * q[0] + beta * G, 1e-15);
      const auto ref = rhs_brute_force(q, sys);
      for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(d[k], ref[k], 1e-13 * (1.0 + double(k)));
    }
  }
}

TEST(TruncatedSystem, MovesTailMassToZero) {
  const TruncatedSystem sys(ModelParams(0.5, 1.0, OffspringDistribution::poisson(2.0)), 3);
  double sum = 0.0;
  for (double p : sys.probs()) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_LT(sys.truncated_mean(), 2.0);
  const TruncatedSystem exact(model(1.0, 0.0, {0.6, 0.0, 0.4}), 5);
  EXPECT_DOUBLE_EQ(exact.truncated_mean(), 0.8);
  EXPECT_THROW(TruncatedSystem(model(1.0, 0.0, {1.0}), 0), ConfigError);
}

TEST(ClosedFormMu0, Examples) {
  EXPECT_NEAR(closed_form_mu0(1, std::numbers::ln2, 1.0, 0.0), 0.5, 1e-15);
  for (std::uint64_t k : {1, 2, 7}) EXPECT_EQ(closed_form_mu0(k, 0.0, 1.3, 0.4), 1.0);
  // e^{-1} (1 - (1 - e^{-1})^2), mpmath
  EXPECT_NEAR(closed_form_mu0(2, 1.0, 1.0, 1.0), 0.22088349810536144, 1e-15);
}

TEST(ClosedFormLinearFractional, Examples) {
  EXPECT_EQ(closed_form_linear_fractional(0.0, 1.0, 0.6, 0.4), 1.0);
  EXPECT_NEAR(linear_fractional_constant(0.6, 0.4), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(closed_form_linear_fractional(1.0, 1.0, 0.5, 0.5), ConfigError);
  EXPECT_THROW(linear_fractional_constant(0.4, 0.6), ConfigError);
  double prev = 1.0;
  for (double t = 1.0; t <= 200.0; t += 1.0) {
    const double h = std::exp(0.2 * t) * closed_form_linear_fractional(t, 1.0, 0.6, 0.4);
    EXPECT_LE(h, prev * (1.0 + 1e-14));
    EXPECT_GE(h, 1.0 / 3.0 * (1.0 - 1e-14));
    prev = h;
  }
  EXPECT_NEAR(prev, 1.0 / 3.0, 1e-14);
}

TEST(SolveSurvival, MatchesMeanZeroClosedForm) {
  for (auto [beta, rho] : {std::pair{1.0, 1.0}, std::pair{2.0, 0.5}, std::pair{1.0, 0.0}}) {
    const TruncatedSystem sys(model(beta, rho, {1.0}), 6);
    const auto sol = solve_survival(sys, {5.0, 1e-10, 0.05});
    for (std::uint64_t k = 1; k <= 6; ++k)
      for (const auto& p : sol.curve(k).points)
        ASSERT_NEAR(p.q, closed_form_mu0(k, p.t, beta, rho), 1e-10) << "k=" << k << " t=" << p.t;
  }
}

TEST(SolveSurvival, MatchesLinearFractionalClosedForm) {
  const TruncatedSystem sys(model(1.0, 0.0, {0.6, 0.0, 0.4}), 2);
  const auto sol = solve_survival(sys, {5.0, 1e-10, 0.5});
  const auto& c = sol.curve(1);
  EXPECT_NEAR(c.points.back().q, 0.16247361568634495, 1e-10);  // mpmath
  EXPECT_EQ(c.points.front().t, 0.0);
  EXPECT_EQ(c.points.front().q, 1.0);
  EXPECT_EQ(c.points.back().t, 5.0);
}

TEST(SolveSurvival, RejectsBadOptions) {
  const TruncatedSystem sys(model(1.0, 0.0, {1.0}), 1);
  EXPECT_THROW(solve_survival(sys, {0.0, 1e-9, 0.1}), ConfigError);
  EXPECT_THROW(solve_survival(sys, {1.0, 0.0, 0.1}), ConfigError);
  // Unreachable tolerance ends in step-size underflow.
  EXPECT_THROW(solve_survival(sys, {1.0, 1e-30, 0.5}), NumericalError);
}

TEST(SolveSurvival, CurvesAreProbabilitiesAndRespectUnionBound) {
  const TruncatedSystem systems[] = {
      TruncatedSystem(model(1.0, 0.0, {0.6, 0.0, 0.4}), 10),
      TruncatedSystem(model(1.0, 0.2, {0.5, 0.3, 0.2}), 10),
      TruncatedSystem(ModelParams(0.5, 1.0, OffspringDistribution::poisson(2.0)), 20),
  };
  const double tol = 1e-9;
  for (const auto& sys : systems) {
    const auto sol = solve_survival(sys, {30.0, tol, 0.1});
    const auto& q1 = sol.curve(1).points;
    for (std::uint64_t k = 1; k <= sys.K(); ++k) {
      const auto& pts = sol.curve(k).points;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        ASSERT_GE(pts[i].q, 0.0);
        ASSERT_LE(pts[i].q, std::min(1.0, double(k) * q1[i].q) + tol);
        if (i > 0) {
          ASSERT_LE(pts[i].q, pts[i - 1].q + tol);
        }
      }
    }
  }
}

TEST(SolveSurvival, MonotoneInTruncation) {
  const ModelParams m(0.5, 1.0, OffspringDistribution::poisson(2.0));
  const auto lo = solve_survival(TruncatedSystem(m, 4), {10.0, 1e-10, 0.1});
  const auto hi = solve_survival(TruncatedSystem(m, 8), {10.0, 1e-10, 0.1});
  for (std::uint64_t k = 1; k <= 4; ++k) {
    const auto& a = lo.curve(k).points;
    const auto& b = hi.curve(k).points;
    for (std::size_t i = 1; i < a.size(); ++i) ASSERT_GT(b[i].q, a[i].q) << "k=" << k << " t=" << a[i].t;
  }
}

TEST(SolveSurvival, ScaledSurvivalNonincreasing) {
  const double tol = 1e-9;
  for (const auto& m : {model(1.0, 0.0, {0.6, 0.0, 0.4}), model(1.0, 0.0, {0.5, 0.3, 0.2}),
                        model(2.0, 0.3, {0.7, 0.1, 0.1, 0.1}), ModelParams(0.5, 1.0, OffspringDistribution::poisson(2.0))}) {
    const TruncatedSystem sys(m);
    const auto sol = solve_survival(sys, {40.0 / m.lambda(), tol, 0.1});
    double prev = 1.0;
    for (const auto& p : sol.curve(1).points) {
      const double h = std::exp(m.lambda() * p.t) * p.q;
      ASSERT_LE(h, prev + 10.0 * tol) << "t=" << p.t;
      prev = h;
    }
  }
}

TEST(SolveSurvival, FiniteDifferenceSlopeApproachesLambda) {
  const TruncatedSystem sys(model(1.0, 0.0, {0.6, 0.0, 0.4}), 2);
  const auto sol = solve_survival(sys, {101.0, 1e-11, 0.5});
  const auto& pts = sol.curve(1).points;
  const auto i = static_cast<std::size_t>(100.0 / 0.5);
  ASSERT_NEAR(pts[i].t, 100.0, 1e-9);
  const double slope = -(std::log(pts[i + 1].q) - std::log(pts[i].q)) / (pts[i + 1].t - pts[i].t);
  EXPECT_NEAR(slope, 0.2, 0.005 * 0.2);
}

TEST(SolveSurvival, TailRatioDecaysLikeExponential) {
  // |q_k / (k q_1) - 1| <= c k e^{-a t}: c fitted on the first half of the
  // window must bound the second half.
  const auto m = model(1.0, 0.0, {0.5, 0.3, 0.2});
  const auto a = DecayWindow::make(m).a;
  const TruncatedSystem sys(m, 10);
  const auto sol = solve_survival(sys, {60.0, 1e-12, 0.5});
  const auto& q1 = sol.curve(1).points;
  double c = 0.0;
  for (std::uint64_t k = 2; k <= 10; ++k) {
    const auto& qk = sol.curve(k).points;
    for (std::size_t i = 0; i < qk.size(); ++i) {
      const double t = qk[i].t;
      if (t < 10.0) continue;
      const double dev = std::abs(qk[i].q / (double(k) * q1[i].q) - 1.0);
      if (t <= 30.0)
        c = std::max(c, dev * std::exp(a * t) / double(k));
      else
        EXPECT_LE(dev, c * double(k) * std::exp(-a * t)) << "k=" << k << " t=" << t;
    }
  }
  EXPECT_GT(c, 0.0);
}

TEST(EstimateConstant, LinearFractional) {
  const auto m = model(1.0, 0.0, {0.6, 0.0, 0.4});
  const auto est = estimate_constant(TruncatedSystem(m), DecayWindow::make(m));
  EXPECT_NEAR(est.C_hat, 1.0 / 3.0, 1e-4);
  EXPECT_GE(est.t_star, 10.0 / 0.1);
  ASSERT_TRUE(est.k_doubling_change);
  EXPECT_TRUE(est.k_doubling_ok);
  EXPECT_LE(est.max_h_increase, 10.0 * 1e-8);
}

TEST(EstimateConstant, InUnitIntervalForOtherLaws) {
  for (const auto& m : {model(1.0, 0.0, {0.5, 0.5}), model(1.0, 0.3, {0.5, 0.3, 0.2}),
                        ModelParams(0.5, 1.0, OffspringDistribution::poisson(2.0))}) {
    const auto est = estimate_constant(TruncatedSystem(m), DecayWindow::make(m));
    EXPECT_GT(est.C_hat, 0.0);
    EXPECT_LE(est.C_hat, 1.0 + 1e-9);
    EXPECT_TRUE(est.k_doubling_ok);
    for (std::size_t i = 1; i < est.h.size(); ++i) ASSERT_LE(est.h[i].second, est.h[i - 1].second + 1e-7);
  }
  // Single-type case {p0 = p1 = 1/2}, rho = 0: spores act independently and
  // each lives Exp(beta / 2), so q_1 = e^{-t/2} and C = 1.
  const auto m = model(1.0, 0.0, {0.5, 0.5});
  EXPECT_NEAR(estimate_constant(TruncatedSystem(m), DecayWindow::make(m)).C_hat, 1.0, 1e-6);
}

TEST(EstimateConstant, ErrorsReported) {
  const auto super = model(1.0, 0.0, {0.0, 0.0, 1.0});
  EXPECT_THROW(estimate_constant(TruncatedSystem(super), DecayWindow{0.1, 0.05}), ConfigError);
  const auto m = model(1.0, 0.0, {0.6, 0.0, 0.4});
  ConstantOptions opts;
  opts.tol = 1e-14;
  opts.t_max = 101.0;
  EXPECT_THROW(estimate_constant(TruncatedSystem(m), DecayWindow::make(m), opts), NumericalError);
}

TEST(TruncationLowerBound, Examples) {
  const auto lf = model(1.0, 0.0, {0.6, 0.0, 0.4});
  const auto w = DecayWindow::make(lf);
  const auto r = truncation_lower_bound_check(TruncatedSystem(lf), w.epsilon);
  EXPECT_EQ(r.k0, 2u);
  EXPECT_TRUE(std::isfinite(r.min_g));
  EXPECT_TRUE(r.stabilized);
  // q_1 >= C e^{-lambda t} implies the minimum of ln q_1 + (lambda + eps) t is >= ln C.
  EXPECT_GE(r.c1, 1.0 / 3.0 - 1e-9);

  const ModelParams pois(0.5, 1.0, OffspringDistribution::poisson(2.0));
  const auto rp = truncation_lower_bound_check(TruncatedSystem(pois), DecayWindow::make(pois).epsilon);
  EXPECT_TRUE(std::isfinite(rp.min_g));
  EXPECT_GT(rp.c1, 0.0);
  EXPECT_TRUE(rp.stabilized);

  const auto mu0 = model(1.0, 0.5, {1.0});
  const auto r0 = truncation_lower_bound_check(TruncatedSystem(mu0), 0.2);
  EXPECT_DOUBLE_EQ(r0.lambda, 1.5);
  EXPECT_NEAR(r0.min_g, 0.0, 1e-9);
  EXPECT_NEAR(r0.c1, 1.0, 1e-9);
  for (const auto& [t, g] : r0.g) EXPECT_NEAR(g, 0.2 * t, 1e-8);
}
