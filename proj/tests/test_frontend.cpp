#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "sparsefront/error.hpp"
#include "sparsefront/frontend.hpp"

using namespace sparsefront;

namespace {

Signal uniform(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Signal x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = u(rng);
  return x;
}

// Oracle: full sort of (|c|, index) pairs.
std::vector<std::size_t> sorted_top_k(const Eigen::VectorXd& c, std::size_t K) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(c.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(c[static_cast<Eigen::Index>(a)]) > std::abs(c[static_cast<Eigen::Index>(b)]);
  });
  idx.resize(K);
  std::sort(idx.begin(), idx.end());
  return idx;
}

FrontEndConfig mnist_cfg(WaveletFamily fam, double rho) {
  return FrontEndConfig::from_rho(make_basis(fam, 2, SignalShape::grid(28, 28)), rho);
}

}  // namespace

TEST(FrontEnd, KFromRho) {
  EXPECT_EQ(mnist_cfg(WaveletFamily::coif1, 0.035).K, 27u);
  EXPECT_EQ(mnist_cfg(WaveletFamily::db5, 0.02).K, 15u);
  EXPECT_THROW(mnist_cfg(WaveletFamily::db5, 0.0), Error);
  EXPECT_THROW(mnist_cfg(WaveletFamily::db5, 1.5), Error);
  EXPECT_THROW(mnist_cfg(WaveletFamily::db5, 1e-4), Error);
}

TEST(FrontEnd, TopKTieGoesToLowerIndex) {
  Eigen::VectorXd c(6);
  c << 1.0, -3.0, 2.0, 3.0, -2.0, 0.5;
  EXPECT_EQ(top_k_support(c, 1).indices(), (std::vector<std::size_t>{1}));
  EXPECT_EQ(top_k_support(c, 3).indices(), (std::vector<std::size_t>{1, 2, 3}));
  Eigen::VectorXd z = Eigen::VectorXd::Zero(5);
  EXPECT_EQ(top_k_support(z, 2).indices(), (std::vector<std::size_t>{0, 1}));
}

TEST(FrontEnd, TopKMatchesSortOracle) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd c = uniform(200, rng, -1, 1);
    // Quantize so ties are frequent.
    c = (c * 8).array().round() / 8;
    const std::size_t K = 1 + rng() % 200;
    EXPECT_EQ(top_k_support(c, K).indices(), sorted_top_k(c, K));
  }
}

TEST(FrontEnd, FullSupportIsIdentity) {
  const auto b = make_basis(WaveletFamily::db5, 2, SignalShape::grid(28, 28));
  const auto cfg = FrontEndConfig::with_k(b, b.dimension());
  std::mt19937_64 rng(2);
  const Signal x = uniform(784, rng, 0, 1);
  EXPECT_LT((sparsify(cfg, x) - x).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FrontEnd, SparsifyKeepsExactlyTopK) {
  const auto cfg = mnist_cfg(WaveletFamily::coif1, 0.035);
  std::mt19937_64 rng(4);
  const Signal x = uniform(784, rng, 0, 1);
  SupportSet S;
  const Signal y = sparsify(cfg, x, S);
  EXPECT_EQ(S.size(), cfg.K);
  EXPECT_EQ(S, support(cfg, x));
  const Eigen::VectorXd cx = cfg.basis.forward(x);
  const Eigen::VectorXd cy = cfg.basis.forward(y);
  for (std::size_t k = 0; k < 784; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    EXPECT_NEAR(cy[i], S.contains(k) ? cx[i] : 0.0, 1e-10);
  }
  // Sparsifying twice changes nothing.
  EXPECT_LT((sparsify(cfg, y) - y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FrontEnd, ProjectionProperties) {
  const auto b = make_basis(WaveletFamily::db5, 2, SignalShape::grid(28, 28));
  std::mt19937_64 rng(5);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < 784; k += 7) idx.push_back(k);
  const SupportSet S(idx, 784);
  const Signal v = uniform(784, rng, -1, 1);
  const Signal p = project(b, S, v);
  EXPECT_LT((project(b, S, p) - p).cwiseAbs().maxCoeff(), 1e-10);
  // Residual orthogonal to every retained atom.
  for (std::size_t k : idx) EXPECT_NEAR(b.basis_vector(k).dot(v - p), 0.0, 1e-10);
  // Dense oracle: sum_k psi_k psi_k^T v.
  Signal want = Signal::Zero(784);
  for (std::size_t k : idx) {
    const Signal psi = b.basis_vector(k);
    want += psi * psi.dot(v);
  }
  EXPECT_LT((p - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FrontEnd, SupportStabilityUnderCertificate) {
  std::mt19937_64 rng(9);
  for (auto fam : {WaveletFamily::haar, WaveletFamily::db5, WaveletFamily::coif1}) {
    const auto b = make_basis(fam, 2, SignalShape::grid(28, 28));
    const auto cfg = FrontEndConfig::with_k(b, 30);
    const double gamma = b.gamma();
    for (int t = 0; t < 200; ++t) {
      // K-sparse signal with every retained magnitude at least lambda.
      Eigen::VectorXd c = Eigen::VectorXd::Zero(784);
      std::vector<std::size_t> all(784);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      const double lambda = 1.0;
      std::uniform_real_distribution<double> mag(lambda, 3 * lambda);
      for (std::size_t i = 0; i < 30; ++i)
        c[static_cast<Eigen::Index>(all[i])] = (rng() & 1 ? 1 : -1) * mag(rng);
      const Signal x = b.inverse(c);
      const double eps = lambda / gamma * 0.999;
      const SnrReport snr = snr_check(cfg, x, eps);
      ASSERT_TRUE(snr.holds);
      Signal e = uniform(784, rng, -eps, eps);
      if (t % 2) e = eps * e.array().sign().matrix();  // corners of the box too
      const SupportSet S = support(cfg, x);
      ASSERT_EQ(support(cfg, x + e), S);
      const Signal out = sparsify(cfg, x + e);
      EXPECT_LT((out - (x + project(b, S, e))).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(FrontEnd, SnrReportFields) {
  const auto b = make_basis(WaveletFamily::haar, 1, SignalShape::grid(4, 4));
  const auto cfg = FrontEndConfig::with_k(b, 2);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(16);
  c[3] = 2.0;
  c[7] = -5.0;
  const Signal x = b.inverse(c);
  const SnrReport r = snr_check(cfg, x, 0.4);
  EXPECT_NEAR(r.lambda, 2.0, 1e-12);
  EXPECT_NEAR(r.gamma, 4.0, 1e-12);
  EXPECT_TRUE(r.holds);  // 2 / 0.4 = 5 > 4
  EXPECT_FALSE(snr_check(cfg, x, 0.5).holds);
}

TEST(FrontEnd, SnrFailsWhenRetainedCoefficientIsZero) {
  const auto b = make_basis(WaveletFamily::haar, 1, SignalShape::grid(4, 4));
  const auto cfg = FrontEndConfig::with_k(b, 3);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(16);
  c[3] = 2.0;
  c[7] = 1.0;
  const SnrReport r = snr_check(cfg, b.inverse(c), 1e-6);
  EXPECT_FALSE(r.holds);
  EXPECT_FALSE(snr_check(cfg, Signal::Zero(16), 0.1).holds);
}

TEST(FrontEnd, SupportOverlap) {
  const SupportSet a({1, 3, 5, 7}, 10);
  const SupportSet b({3, 4, 5, 9}, 10);
  EXPECT_EQ(support_overlap(a, b), 2u);
  EXPECT_EQ(support_overlap(a, a), 4u);
  const auto cfg = mnist_cfg(WaveletFamily::coif1, 0.035);
  std::mt19937_64 rng(1);
  const Signal x = uniform(784, rng, 0, 1);
  EXPECT_EQ(support_overlap(cfg, x, x), cfg.K);
}

TEST(FrontEnd, SupportSetValidation) {
  EXPECT_THROW(SupportSet({1, 1}, 5), Error);
  EXPECT_THROW(SupportSet({5}, 5), Error);
  const auto cfg = mnist_cfg(WaveletFamily::coif1, 0.035);
  EXPECT_THROW(sparsify(cfg, Signal::Zero(10)), Error);
}
