// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ocmc/entropy.hpp"

using namespace ocmc;
using testutil::check_gradients;
using testutil::random_tensor;

TEST(GaussianPmf, CenterBinStandardNormal) {
  // erf(0.5/sqrt(2)), frozen from a high-precision oracle
  EXPECT_NEAR(gaussian_pmf(0, 0.0, 1.0), 0.3829249225480261, 1e-15);
}

TEST(GaussianPmf, SymmetricAboutZeroMean) {
  for (long k : {1L, 2L, 5L, 17L})
    EXPECT_DOUBLE_EQ(gaussian_pmf(k, 0.0, 1.3), gaussian_pmf(-k, 0.0, 1.3));
}

TEST(GaussianPmf, TinySigmaConcentratesMass) {
  EXPECT_NEAR(gaussian_pmf(0, 0.0, 1e-9), 1.0, 1e-12);
  EXPECT_NEAR(gaussian_pmf(0, 0.0, 0.0), 1.0, 1e-12);  // clamped up to the floor
  EXPECT_NEAR(gaussian_pmf(1, 0.0, 1e-9), 0.0, 1e-12);
}

TEST(GaussianPmf, SumsToOneOverWideRange) {
  for (auto [mu, sigma] : {std::pair{0.0, 1.0}, {3.7, 0.2}, {-12.5, 6.0}, {0.1, 1e-6}}) {
    const long lo = static_cast<long>(std::floor(mu - 40.0 * sigma - 1.0));
    const long hi = static_cast<long>(std::ceil(mu + 40.0 * sigma + 1.0));
    double sum = 0.0;
    for (long k = lo; k <= hi; ++k) sum += gaussian_pmf(k, mu, sigma);
    EXPECT_NEAR(sum, 1.0, 1e-9) << "mu=" << mu << " sigma=" << sigma;
  }
}

TEST(GaussianLikelihood, MatchesScalarPath) {
  Rng rng(61);
  Tensor mu = random_tensor({1, 2, 3, 3}, rng, -2, 2, false);
  Tensor sigma = random_tensor({1, 2, 3, 3}, rng, 0.3, 2.5, false);
  Tensor z = Tensor::zeros({1, 2, 3, 3});
  for (auto& v : z.values()) v = std::round(rng.uniform_range(-4, 4));
  Tensor p = gaussian_likelihood(z, mu, sigma);
  for (std::size_t i = 0; i < p.values().size(); ++i) {
    const long k = std::lround(z.values()[i]);
    EXPECT_NEAR(p.values()[i], gaussian_pmf(k, mu.values()[i], sigma.values()[i]), 1e-14);
  }
}

TEST(GaussianLikelihood, RateGradientsMatchFiniteDifferences) {
  Rng rng(62);
  Tensor z = Tensor::param({1, 2, 2, 2}, std::vector<double>(8, 0.0));
  for (auto& v : z.values()) v = std::round(rng.uniform_range(-3, 3));
  std::vector<Tensor> in{z, random_tensor({1, 2, 2, 2}, rng, -1, 1),
                         random_tensor({1, 2, 2, 2}, rng, 0.5, 2.0)};
  auto r = check_gradients(in, [](const auto& v) {
    return estimate_rate(v[0], v[1], v[2]);
  });
  EXPECT_LT(r.max_err, 1e-5) << r.where;
}

TEST(EstimateRate, ClosedFormCounts) {
  Tensor a = Tensor::zeros({1, 1, 10, 10});
  EXPECT_NEAR(estimate_rate(a, [](std::int64_t, long) { return 0.5; }), 100.0, 1e-12);
  Tensor b = Tensor::zeros({1, 1, 8, 8});
  EXPECT_NEAR(estimate_rate(b, [](std::int64_t, long) { return 1.0 / 256.0; }), 512.0, 1e-12);
}

TEST(EstimateRate, BinarySourceMatchesEntropyOracle) {
  // 900 zeros @ p=0.9 and 100 ones on p=0.1: 1000 * H(0.9, 0.1) bits
  Tensor z = Tensor::zeros({1, 1, 10, 100});
  for (std::size_t i = 0; i < 100; ++i) z.values()[i * 10] = 1.0;
  const double bits =
      estimate_rate(z, [](std::int64_t, long k) { return k == 0 ? 0.9 : 0.1; });
  EXPECT_NEAR(bits, 468.9955935892812, 1e-9);
}

TEST(EstimateRate, NonNegativeAndFloored) {
  Tensor z = Tensor::zeros({1, 1, 1, 4});
  const double bits = estimate_rate(z, [](std::int64_t, long) { return 1.0; });
  EXPECT_NEAR(bits, 0.0, 1e-12);
  // Vanishing probability is floored at 2^-16: 16 bits per element.
  const double floored = estimate_rate(z, [](std::int64_t, long) { return 1e-300; });
  EXPECT_NEAR(floored, 64.0, 1e-12);
  EXPECT_GE(floored, 0.0);
}

TEST(EstimateRate, EvalMatchesTrainTensorPathOnIntegers) {
  Rng rng(63);
  Tensor z = Tensor::zeros({1, 3, 4, 4});
  for (auto& v : z.values()) v = std::round(rng.uniform_range(-2, 2));
  Tensor mu = random_tensor({1, 3, 4, 4}, rng, -0.5, 0.5, false);
  Tensor sigma = random_tensor({1, 3, 4, 4}, rng, 0.8, 1.6, false);
  const double eval_bits = estimate_rate(z, gaussian_provider(mu, sigma));
  NoGradGuard ng;
  const double train_bits = estimate_rate(z, mu, sigma).value0();
  // Probabilities here are far above both clamps, so the paths agree.
  EXPECT_NEAR(eval_bits, train_bits, 1e-9 * std::max(1.0, eval_bits));
}

TEST(Factorized, CumulativeMonotoneAndBounded) {
  Rng rng(64);
  FactorizedModel m = FactorizedModel::init(2, rng);
  for (int ch = 0; ch < 2; ++ch) {
    double prev = -1.0;
    for (double x = -30.0; x <= 30.0; x += 0.01) {
      const double c = factorized_cumulative(m, ch, x);
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0);
      EXPECT_GE(c, prev) << "ch=" << ch << " x=" << x;
      prev = c;
    }
  }
  EXPECT_LT(factorized_cumulative(m, 0, -30.0), factorized_cumulative(m, 0, 30.0));
}

TEST(Factorized, TensorPathMatchesScalarPath) {
  Rng rng(65);
  FactorizedModel m = FactorizedModel::init(3, rng);
  Tensor z = Tensor::zeros({2, 3, 2, 2});
  for (auto& v : z.values()) v = std::round(rng.uniform_range(-5, 5));
  NoGradGuard ng;
  Tensor p = m.likelihood(z);
  const std::int64_t plane = 4;
  for (std::size_t i = 0; i < p.values().size(); ++i) {
    const int ch = static_cast<int>((static_cast<std::int64_t>(i) / plane) % 3);
    const long k = std::lround(z.values()[i]);
    EXPECT_NEAR(p.values()[i], factorized_pmf(k, m, ch), 1e-12) << "i=" << i;
  }
}

TEST(Factorized, PmfSumsNearOneAtInit) {
  Rng rng(66);
  FactorizedModel m = FactorizedModel::init(2, rng);
  for (int ch = 0; ch < 2; ++ch) {
    double sum = 0.0;
    for (long k = -30; k <= 30; ++k) sum += factorized_pmf(k, m, ch);
    // At init the mass inside [-30, 30] is simply c(30.5) - c(-30.5).
    const double want = factorized_cumulative(m, ch, 30.5) - factorized_cumulative(m, ch, -30.5);
    EXPECT_NEAR(sum, want, 1e-9);
    EXPECT_GT(sum, 0.5);
  }
}

TEST(Factorized, Gradients) {
  Rng rng(67);
  FactorizedModel m = FactorizedModel::init(2, rng);
  Tensor z = Tensor::param({1, 2, 2, 2}, std::vector<double>(8, 0.0));
  for (auto& v : z.values()) v = std::round(rng.uniform_range(-2, 2)) + rng.uniform_range(-0.3, 0.3);
  std::vector<Tensor> in{z};
  m.trainables(in);
  auto r = check_gradients(in, [&m](const auto& v) { return m.likelihood(v[0]); });
  EXPECT_LT(r.max_err, 1e-5) << r.where;
}

TEST(Factorized, ProviderCachesPerChannel) {
  Rng rng(68);
  FactorizedModel m = FactorizedModel::init(2, rng);
  Shape s{1, 2, 2, 2};
  auto pmf = factorized_provider(m, s);
  // Elements 0..3 are channel 0, 4..7 channel 1.
  EXPECT_DOUBLE_EQ(pmf(0, 1), factorized_pmf(1, m, 0));
  EXPECT_DOUBLE_EQ(pmf(5, 1), factorized_pmf(1, m, 1));
  EXPECT_DOUBLE_EQ(pmf(3, 1), pmf(0, 1));
}

TEST(QuantizedCdfBuild, HalfAndHalf) {
  QuantizedCdf q = build_quantized_cdf({0.5, 0.5}, -1);
  EXPECT_EQ(q.v_min, -1);
  EXPECT_EQ(q.v_max, 0);
  ASSERT_EQ(q.cum.size(), 3u);
  EXPECT_EQ(q.cum[0], 0u);
  EXPECT_EQ(q.cum[1], 32768u);
  EXPECT_EQ(q.cum[2], 65536u);
}

TEST(QuantizedCdfBuild, FloorRescuesZeroProbability) {
  QuantizedCdf q = build_quantized_cdf({1.0, 0.0}, 0);
  EXPECT_EQ(q.hi(0) - q.lo(0), 65535u);
  EXPECT_EQ(q.hi(1) - q.lo(1), 1u);
  EXPECT_EQ(q.cum.back(), 65536u);
}

TEST(QuantizedCdfBuild, RandomPmfRoundsWithinHalfStep) {
  Rng rng(69);
  std::vector<double> pmf(37);
  double sum = 0.0;
  for (auto& p : pmf) {
    p = rng.uniform_range(0.0, 1.0);
    sum += p;
  }
  for (auto& p : pmf) p /= sum;
  QuantizedCdf q = build_quantized_cdf(pmf, -18);
  EXPECT_EQ(q.cum.back(), 65536u);
  for (int s = 0; s < q.symbols(); ++s) {
    const std::uint32_t c = q.hi(s) - q.lo(s);
    EXPECT_GE(c, 1u);
    if (c > 1)  // floored entries may round up further
      EXPECT_NEAR(static_cast<double>(c) / 65536.0, pmf[static_cast<std::size_t>(s)],
                  std::pow(2.0, -15.0));
  }
}

TEST(QuantizedCdfBuild, DeterministicIncludingTies) {
  std::vector<double> pmf{0.25, 0.25, 0.25, 0.25, 1e-7, 1e-7};
  QuantizedCdf a = build_quantized_cdf(pmf, 0);
  QuantizedCdf b = build_quantized_cdf(pmf, 0);
  EXPECT_EQ(a.cum, b.cum);
  std::uint64_t total = 0;
  for (int s = 0; s < a.symbols(); ++s) total += a.hi(s) - a.lo(s);
  EXPECT_EQ(total, 65536u);
}

TEST(QuantizedCdfBuild, RejectsBadInput) {
  EXPECT_THROW(build_quantized_cdf({}, 0), std::invalid_argument);
  EXPECT_THROW(build_quantized_cdf({0.5, -0.5}, 0), std::invalid_argument);
}

TEST(CdfTables, GaussianTableCoversRange) {
  QuantizedCdf q = gaussian_cdf_table(0.0, 0.001, -5, 5);
  EXPECT_EQ(q.symbols(), 11);
  for (int s = 0; s < q.symbols(); ++s) EXPECT_GE(q.hi(s) - q.lo(s), 1u);
  // Nearly all mass on k=0 (symbol index 5).
  EXPECT_GT(q.hi(5) - q.lo(5), 65000u);
  EXPECT_EQ(q.cum.back(), 65536u);
}

TEST(CdfTables, FactorizedTableValid) {
  Rng rng(70);
  FactorizedModel m = FactorizedModel::init(2, rng);
  QuantizedCdf q = factorized_cdf_table(m, 1, -8, 8);
  EXPECT_EQ(q.symbols(), 17);
  EXPECT_EQ(q.cum.back(), 65536u);
  for (int s = 0; s < q.symbols(); ++s) EXPECT_GE(q.hi(s) - q.lo(s), 1u);
}
