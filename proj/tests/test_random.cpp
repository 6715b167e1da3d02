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

#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "sporebp/random.hpp"

using sporebp::RandomStream;

// Known-answer vectors from the Random123 distribution (kat_vectors).
TEST(Philox, KnownAnswers) {
  using A4 = std::array<std::uint32_t, 4>;
  EXPECT_EQ(sporebp::philox4x32_10({0, 0, 0, 0}, {0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(sporebp::philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(sporebp::philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RandomStream, SameIdentitySameSequence) {
  RandomStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(RandomStream, DistinctIndicesAndSeedsDiffer) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed : {1ull, 2ull})
    for (std::uint64_t idx = 0; idx < 100; ++idx) firsts.insert(RandomStream(seed, idx)());
  EXPECT_EQ(firsts.size(), 200u);
}

TEST(RandomStream, UniformPosNeverZero) {
  RandomStream rng(3, 0);
  double lo = 1.0, sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform_pos();
    ASSERT_GT(u, 0.0);
    ASSERT_LE(u, 1.0);
    lo = std::min(lo, u);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(RandomStream, BelowIsUniform) {
  RandomStream rng(11, 0);
  const std::uint64_t bins = 7;
  const int n = 700000;
  std::vector<int> counts(bins);
  for (int i = 0; i < n; ++i) {
    const auto x = rng.below(bins);
    ASSERT_LT(x, bins);
    ++counts[x];
  }
  double chi2 = 0.0;
  const double expected = static_cast<double>(n) / bins;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // chi-square with 6 df: 99.9% quantile is 22.46
  EXPECT_LT(chi2, 22.46);
}

TEST(RandomStream, ExponentialMean) {
  RandomStream rng(5, 1);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += rng.exponential(4.0);
  EXPECT_NEAR(sum / n, 0.25, 3.0 * 0.25 / std::sqrt(n));
}

TEST(DeriveSeed, DistinctTags) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t tag = 0; tag < 1000; ++tag) seeds.insert(sporebp::derive_seed(99, tag));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_EQ(sporebp::derive_seed(99, 3), sporebp::derive_seed(99, 3));
}
