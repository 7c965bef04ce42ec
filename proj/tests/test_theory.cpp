#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "sparsefront/error.hpp"
#include "sparsefront/theory.hpp"

using namespace sparsefront;

TEST(Theory, EnsembleMoments) {
  const double pi = std::numbers::pi;
  WeightEnsemble g{WeightDistribution::gaussian, 2.0, 1};
  EXPECT_NEAR(g.mu(), 2.0 * std::sqrt(2.0 / pi), 1e-14);
  EXPECT_NEAR(g.sigma2(), 4.0, 1e-14);
  WeightEnsemble u{WeightDistribution::uniform, 3.0, 1};
  EXPECT_NEAR(u.mu(), 1.5, 1e-14);
  EXPECT_NEAR(u.sigma2(), 3.0, 1e-14);
  WeightEnsemble r{WeightDistribution::rademacher, 7.0, 1};
  EXPECT_NEAR(r.mu(), 1.0, 1e-14);
  EXPECT_NEAR(r.sigma2(), 1.0, 1e-14);
}

TEST(Theory, SampleMomentsMatchAnalytic) {
  for (auto d : {WeightDistribution::gaussian, WeightDistribution::uniform, WeightDistribution::rademacher}) {
    WeightEnsemble ens{d, 0.5, 3};
    Rng rng = make_rng(17);
    const Eigen::VectorXd w = ens.sample(200000, rng);
    EXPECT_NEAR(w.cwiseAbs().mean(), ens.mu(), 0.01 * ens.mu()) << to_string(d);
    EXPECT_NEAR(w.squaredNorm() / 200000.0, ens.sigma2(), 0.01 * ens.sigma2()) << to_string(d);
    EXPECT_NEAR(w.mean(), 0.0, 0.01);
  }
}

TEST(Theory, KsStatisticHandCases) {
  // One sample at the mean: the empirical CDF jumps 0 -> 1 where Phi = 1/2.
  EXPECT_NEAR(ks_statistic_normal({0.0}, 0.0, 1.0), 0.5, 1e-12);
  // Two symmetric samples at +-z with Phi(-z) = 0.1587: D = max(0.5 - 0.1587, 0.1587).
  const double phi = 0.5 * std::erfc(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(ks_statistic_normal({-1.0, 1.0}, 0.0, 1.0), 0.5 - phi, 1e-12);
  EXPECT_THROW(ks_statistic_normal({}, 0.0, 1.0), Error);
}

TEST(Theory, WaveletCoefficientsOfGaussianWeightsAreGaussian) {
  const auto b = make_basis(WaveletFamily::db5, 2, SignalShape::grid(28, 28));
  WeightEnsemble ens{WeightDistribution::gaussian, 1.0, 5};
  const auto s = mc_coefficient_samples(ens, b, 100, 4000);
  // 1.36 / sqrt(n) is the 5% critical value.
  EXPECT_LT(ks_statistic_normal(s, 0.0, 1.0), 1.36 / std::sqrt(4000.0));
  // Uniform weights still give approximately Gaussian coefficients.
  WeightEnsemble uni{WeightDistribution::uniform, 1.0, 5};
  const auto su = mc_coefficient_samples(uni, b, 100, 4000);
  EXPECT_LT(ks_statistic_normal(su, 0.0, std::sqrt(uni.sigma2())), 0.04);
}

TEST(Theory, BaselineRatioConvergesToOne) {
  WeightEnsemble ens{WeightDistribution::uniform, 1.0, 2};
  const auto r = mc_baseline_scaling(ens, {16, 4096}, 200, 0.1);
  ASSERT_EQ(r.cells.size(), 2u);
  EXPECT_NEAR(r.cells[1].mean, 1.0, 0.01);
  EXPECT_GT(r.cells[0].std, r.cells[1].std);
}

TEST(Theory, SemiWhiteMeanIsLinearInK) {
  // E[sign(w)^T P_S w] = K mu for orthonormal atoms.
  const auto b = make_basis(WaveletFamily::haar, 2, SignalShape::grid(28, 28));
  WeightEnsemble ens{WeightDistribution::gaussian, 1.0, 4};
  const auto r = mc_semiwhite_scaling(ens, b, {400}, 400, 0.1);
  const auto& c = r.cells[0];
  EXPECT_NEAR(c.mean, 1.0, 0.08);
  EXPECT_LE(c.extra("var_z"), c.bound * 1.15);
  EXPECT_NEAR(c.extra("ratio_to_baseline"), 400.0 / 784.0, 0.05);
}

TEST(Theory, WhiteBoundNeverExceeded) {
  const auto b = make_basis(WaveletFamily::db5, 2, SignalShape::grid(28, 28));
  WeightEnsemble ens{WeightDistribution::rademacher, 1.0, 6};
  const auto r = mc_white_bound(ens, b, {5, 30, 200}, 100, 0.1);
  for (const auto& c : r.cells) {
    EXPECT_LE(c.extra("max_ratio"), 1.0 + 1e-9);
    EXPECT_GT(c.mean, 0.0);
  }
}

TEST(Theory, ReluSafeFractionDecreasesWithDelta) {
  ReluLayerSpec spec;
  spec.N = 256;
  spec.M = 50;
  const auto r = mc_relu_flip(spec, {0.0, 0.001, 0.01, 0.1}, 50);
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_NEAR(r.cells[0].mean, 1.0, 1e-12);
  for (std::size_t i = 1; i < r.cells.size(); ++i) EXPECT_LE(r.cells[i].mean, r.cells[i - 1].mean);
  EXPECT_LT(r.cells[3].mean, 0.2);
}

TEST(Theory, ResultsIndependentOfWorkers) {
  const auto b = make_basis(WaveletFamily::haar, 2, SignalShape::grid(28, 28));
  WeightEnsemble ens{WeightDistribution::gaussian, 1.0, 8};
  const auto a = mc_semiwhite_scaling(ens, b, {10, 50}, 64, 0.1, {1});
  const auto c = mc_semiwhite_scaling(ens, b, {10, 50}, 64, 0.1, {3});
  std::ostringstream sa, sc;
  a.write_csv(sa);
  c.write_csv(sc);
  EXPECT_EQ(sa.str(), sc.str());
}
