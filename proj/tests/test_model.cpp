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

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <vector>

#include "sporebp/model.hpp"

using namespace sporebp;

namespace {

OffspringDistribution table(std::vector<double> p) { return OffspringDistribution::table(std::move(p)); }

// Chi-square goodness-of-fit p-value of n draws against the first `bins`
// probabilities, with the remaining mass pooled into one cell.
double chi_square_p(const OffspringDistribution& d, std::uint64_t seed, int n, std::uint64_t bins) {
  RandomStream rng(seed, 0);
  std::vector<double> counts(bins + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto j = d.sample(rng);
    counts[std::min<std::uint64_t>(j, bins)] += 1.0;
  }
  double chi2 = 0.0, head = 0.0;
  int cells = 0;
  for (std::uint64_t j = 0; j <= bins; ++j) {
    double p = j < bins ? d.pmf(j) : 1.0 - head;
    if (j < bins) head += p;
    if (p <= 0.0) {
      EXPECT_EQ(counts[j], 0.0);
      continue;
    }
    const double e = p * n;
    chi2 += (counts[j] - e) * (counts[j] - e) / e;
    ++cells;
  }
  boost::math::chi_squared dist(cells - 1);
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

}  // namespace

TEST(MeanAndSecondMoment, TableCases) {
  const auto two_point = mean_and_second_moment(table({0.6, 0.0, 0.4}));
  EXPECT_DOUBLE_EQ(two_point.mean, 0.8);
  EXPECT_DOUBLE_EQ(two_point.second, 1.6);
  const auto point = mean_and_second_moment(table({0.0, 1.0}));
  EXPECT_EQ(point.mean, 1.0);
  EXPECT_EQ(point.second, 1.0);
}

TEST(MeanAndSecondMoment, ParametricMatchesBruteForceSums) {
  // Brute-force sums to k = 200 (poisson) / 3000 (geometric) in mpmath give
  // (2, 6) and (7/3, 119/9).
  const auto pois = mean_and_second_moment(OffspringDistribution::poisson(2.0));
  EXPECT_NEAR(pois.mean, 2.0, 1e-12);
  EXPECT_NEAR(pois.second, 6.0, 1e-12);
  const auto geo = mean_and_second_moment(OffspringDistribution::geometric(0.3));
  EXPECT_NEAR(geo.mean, 7.0 / 3.0, 1e-12);
  EXPECT_NEAR(geo.second, 119.0 / 9.0, 1e-12);

  // Also against an in-test summation of the pmf.
  for (const auto& d : {OffspringDistribution::poisson(3.5), OffspringDistribution::geometric(0.45)}) {
    double m1 = 0.0, m2 = 0.0;
    for (int k = 0; k < 2000; ++k) {
      m1 += k * d.pmf(k);
      m2 += double(k) * k * d.pmf(k);
    }
    EXPECT_NEAR(d.moments().mean, m1, 1e-10);
    EXPECT_NEAR(d.moments().second, m2, 1e-9);
  }
}

TEST(MeanAndSecondMoment, TableEqualsDirectLoop) {
  RandomStream rng(17, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(1 + rng.below(12));
    double sum = 0.0;
    for (double& x : p) sum += (x = rng.uniform());
    for (double& x : p) x /= sum;
    const auto d = table(p);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < d.probs().size(); ++k) {
      m1 += double(k) * d.probs()[k];
      m2 += double(k) * k * d.probs()[k];
    }
    EXPECT_EQ(d.moments().mean, m1);
    EXPECT_EQ(d.moments().second, m2);
  }
}

TEST(OffspringDistribution, Normalization) {
  EXPECT_NO_THROW(table({0.6, 0.0, 0.4}));
  // Within 1e-9: renormalized.
  const auto d = table({0.6, 0.4 + 5e-10});
  EXPECT_NEAR(d.probs()[0] + d.probs()[1], 1.0, 1e-15);
  EXPECT_THROW(table({0.5, 0.4}), ConfigError);
  EXPECT_THROW(table({1.1, -0.1}), ConfigError);
  EXPECT_THROW(table({}), ConfigError);
  EXPECT_THROW(OffspringDistribution::poisson(0.0), ConfigError);
  EXPECT_THROW(OffspringDistribution::geometric(0.0), ConfigError);
  EXPECT_THROW(OffspringDistribution::geometric(1.5), ConfigError);
}

TEST(OffspringDistribution, TrailingZerosTrimmed) {
  const auto d = table({0.5, 0.5, 0.0, 0.0});
  EXPECT_EQ(d.support_max(), 1u);
  EXPECT_FALSE(OffspringDistribution::poisson(1.0).support_max());
}

TEST(DecayRate, Examples) {
  EXPECT_DOUBLE_EQ(decay_rate(ModelParams(1.0, 0.0, table({0.6, 0.0, 0.4}))), 0.2);
  EXPECT_DOUBLE_EQ(decay_rate(ModelParams(1.0, 0.5, table({0.0, 1.0}))), 0.5);
  EXPECT_DOUBLE_EQ(decay_rate(ModelParams(2.0, 0.0, table({1.0}))), 2.0);
}

TEST(DecayRate, AffineInMean) {
  for (double mu : {0.3, 1.0, 1.7, 2.5}) {
    const ModelParams m(1.5, 0.25, OffspringDistribution::poisson(mu));
    EXPECT_EQ(m.lambda(), 0.25 + 1.5 * (1.0 - mu));
  }
  EXPECT_EQ(ModelParams(1.5, 0.25, table({1.0})).lambda(), 1.75);
}

TEST(ModelParams, RejectsBadRates) {
  EXPECT_THROW(ModelParams(0.0, 0.0, table({1.0})), ConfigError);
  EXPECT_THROW(ModelParams(1.0, -0.1, table({1.0})), ConfigError);
}

TEST(Validate, Examples) {
  const auto super = validate(ModelParams(1.0, 0.0, table({0.0, 0.0, 1.0})), true);
  EXPECT_FALSE(super.passed());

  const auto sub = validate(ModelParams(1.0, 0.0, table({0.6, 0.0, 0.4})), true);
  EXPECT_TRUE(sub.passed());
  EXPECT_FALSE(sub.mean_zero);

  const auto mu0 = validate(ModelParams(1.0, 1.0, table({1.0})), true);
  EXPECT_TRUE(mu0.passed());
  EXPECT_TRUE(mu0.mean_zero);

  // Supercritical passes when subcriticality is not required.
  EXPECT_TRUE(validate(ModelParams(1.0, 0.0, table({0.0, 0.0, 1.0})), false).passed());
}

TEST(SampleOffspring, PointMass) {
  RandomStream rng(1, 0);
  const auto d = table({0.0, 0.0, 0.0, 1.0});
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_offspring(d, rng), 3u);
}

TEST(SampleOffspring, TwoPointFrequency) {
  RandomStream rng(2, 0);
  const auto d = table({0.6, 0.0, 0.4});
  const int n = 1000000;
  int twos = 0;
  for (int i = 0; i < n; ++i) {
    const auto j = sample_offspring(d, rng);
    ASSERT_TRUE(j == 0 || j == 2);
    twos += j == 2;
  }
  EXPECT_NEAR(double(twos) / n, 0.4, 3.0 * std::sqrt(0.4 * 0.6 / n));
}

TEST(SampleOffspring, PoissonMean) {
  RandomStream rng(3, 0);
  const auto d = OffspringDistribution::poisson(2.0);
  const int n = 1000000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += double(sample_offspring(d, rng));
  EXPECT_NEAR(sum / n, 2.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(SampleOffspring, ChiSquareAgainstPmf) {
  EXPECT_GT(chi_square_p(table({0.5, 0.3, 0.2}), 101, 1000000, 3), 0.001);
  EXPECT_GT(chi_square_p(table({0.1, 0.0, 0.25, 0.05, 0.6}), 102, 1000000, 5), 0.001);
  EXPECT_GT(chi_square_p(OffspringDistribution::poisson(2.0), 103, 1000000, 10), 0.001);
  // Large mean exercises the rejection sampler.
  EXPECT_GT(chi_square_p(OffspringDistribution::poisson(25.0), 104, 1000000, 45), 0.001);
  EXPECT_GT(chi_square_p(OffspringDistribution::geometric(0.4), 105, 1000000, 12), 0.001);
}

TEST(DecayWindow, DefaultsAndBounds) {
  const ModelParams m(1.0, 0.0, table({0.6, 0.0, 0.4}));  // lambda 0.2, beta 1
  const auto w = DecayWindow::make(m);
  EXPECT_DOUBLE_EQ(w.a, 0.1);
  EXPECT_DOUBLE_EQ(w.epsilon, 0.05);
  EXPECT_THROW(DecayWindow::make(m, 0.2), ConfigError);
  EXPECT_THROW(DecayWindow::make(m, 0.15, 0.06), ConfigError);
  EXPECT_THROW(DecayWindow::make(ModelParams(1.0, 0.0, table({0.0, 0.0, 1.0}))), ConfigError);
}

TEST(TruncationLevel, Examples) {
  // mean 0.8, beta 1, eps 0.05: need sum_{k<=k0} k p_k > 0.75, first at k0 = 2.
  EXPECT_EQ(truncation_level(ModelParams(1.0, 0.0, table({0.6, 0.0, 0.4})), 0.05), 2u);
  // mean 0: any k0 >= 1 works.
  EXPECT_EQ(truncation_level(ModelParams(1.0, 1.0, table({1.0})), 0.1), 1u);
  const ModelParams pois(0.5, 1.0, OffspringDistribution::poisson(2.0));
  const auto k0 = truncation_level(pois, 0.01);
  double head = 0.0;
  for (std::uint64_t k = 1; k <= k0; ++k) head += double(k) * pois.offspring().pmf(k);
  EXPECT_GT(head, 2.0 - 0.01 / 0.5);
  EXPECT_LE(head - double(k0) * pois.offspring().pmf(k0), 2.0 - 0.01 / 0.5);
}
