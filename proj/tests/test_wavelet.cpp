#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sparsefront/error.hpp"
#include "sparsefront/wavelet.hpp"

using namespace sparsefront;

namespace {

// Reference taps typed in from the published decomposition lowpass filters.
const std::vector<double> kDb5 = {0.003335725285001549, -0.012580751999015526, -0.006241490213011705,
                                  0.07757149384006515,  -0.03224486958502952,  -0.24229488706619015,
                                  0.13842814590110342,  0.7243085284385744,    0.6038292697974729,
                                  0.160102397974125};
const std::vector<double> kCoif1 = {-0.01565572813546454, -0.0727326195128539, 0.38486484686420286,
                                    0.8525720202122554,   0.3378976624578092,  -0.0727326195128539};

std::vector<double> taps_of(std::span<const double> s) { return {s.begin(), s.end()}; }

// Dense one-level periodized analysis matrix: rows 0..n/2-1 lowpass, then highpass.
Eigen::MatrixXd analysis_matrix(const std::vector<double>& lo, std::size_t n) {
  const std::size_t L = lo.size();
  std::vector<double> hi(L);
  for (std::size_t k = 0; k < L; ++k) hi[k] = (k % 2 ? -1.0 : 1.0) * lo[L - 1 - k];
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n / 2; ++i)
    for (std::size_t k = 0; k < L; ++k) {
      A(i, (2 * i + k) % n) += lo[k];
      A(n / 2 + i, (2 * i + k) % n) += hi[k];
    }
  return A;
}

// Multilevel 1D transform matrix built from the dense one-level steps.
Eigen::MatrixXd multilevel_matrix(const std::vector<double>& lo, std::size_t n, int levels) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(n, n);
  std::size_t m = n;
  for (int l = 0; l < levels; ++l) {
    Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n, n);
    step.topLeftCorner(m, m) = analysis_matrix(lo, m);
    T = step * T;
    m /= 2;
  }
  return T;
}

Eigen::MatrixXd basis_matrix(const WaveletBasis& b) {
  const auto n = static_cast<Eigen::Index>(b.dimension());
  Eigen::MatrixXd Psi(n, n);
  for (Eigen::Index k = 0; k < n; ++k) Psi.col(k) = b.basis_vector(static_cast<std::size_t>(k));
  return Psi;
}

Signal random_signal(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Signal x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST(Wavelet, Db5TapsMatchReference) {
  const auto b = make_basis(WaveletFamily::db5, 1, SignalShape::line(32));
  const auto lo = taps_of(b.lowpass());
  ASSERT_EQ(lo.size(), kDb5.size());
  for (std::size_t k = 0; k < lo.size(); ++k) EXPECT_NEAR(lo[k], kDb5[k], 1e-11) << "tap " << k;
}

TEST(Wavelet, Coif1TapsMatchReference) {
  const auto b = make_basis(WaveletFamily::coif1, 1, SignalShape::line(32));
  const auto lo = taps_of(b.lowpass());
  ASSERT_EQ(lo.size(), kCoif1.size());
  for (std::size_t k = 0; k < lo.size(); ++k) EXPECT_NEAR(lo[k], kCoif1[k], 1e-11) << "tap " << k;
}

TEST(Wavelet, LowpassAlgebraicConditions) {
  for (auto fam : {WaveletFamily::haar, WaveletFamily::db5, WaveletFamily::coif1}) {
    const auto b = make_basis(fam, 1, SignalShape::line(64));
    const auto h = taps_of(b.lowpass());
    const auto g = taps_of(b.highpass());
    EXPECT_NEAR(std::accumulate(h.begin(), h.end(), 0.0), std::sqrt(2.0), 1e-12);
    // Even shifts are orthonormal.
    for (std::size_t s = 0; s < h.size(); s += 2) {
      double acc = 0.0;
      for (std::size_t k = 0; k + s < h.size(); ++k) acc += h[k] * h[k + s];
      EXPECT_NEAR(acc, s == 0 ? 1.0 : 0.0, 1e-12) << to_string(fam) << " shift " << s;
    }
    // Highpass annihilates constants; db5 kills the first five moments.
    const int moments = fam == WaveletFamily::db5 ? 5 : (fam == WaveletFamily::coif1 ? 2 : 1);
    for (int p = 0; p < moments; ++p) {
      double acc = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) acc += std::pow(static_cast<double>(k), p) * g[k];
      EXPECT_NEAR(acc, 0.0, 1e-9) << to_string(fam) << " moment " << p;
    }
  }
}

TEST(Wavelet, HaarHandExample) {
  const auto b = make_basis(WaveletFamily::haar, 1, SignalShape::line(4));
  Signal x(4);
  x << 1, 2, 3, 4;
  const double r = 1.0 / std::sqrt(2.0);
  Signal want(4);
  want << 3 * r, 7 * r, -r, -r;
  EXPECT_LT((b.forward(x) - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Wavelet, OneDimensionalMatchesDenseOracle) {
  for (auto [fam, taps] : {std::pair{WaveletFamily::db5, kDb5}, std::pair{WaveletFamily::coif1, kCoif1}}) {
    for (int levels : {1, 2, 3}) {
      const std::size_t n = 64;
      const auto b = make_basis(fam, levels, SignalShape::line(n));
      const Eigen::MatrixXd T = multilevel_matrix(taps, n, levels);
      const Signal x = random_signal(n, 7 + levels);
      EXPECT_LT((b.forward(x) - T * x).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Wavelet, GridCoefficientOrder) {
  // Haar on 4x4 with one level: coefficient 0 is the top-left approximation
  // atom, coefficient 4 the first (low-rows, high-cols) atom, 8 the first
  // (high-rows, low-cols) atom, 12 the first (high-rows, high-cols) atom.
  const auto b = make_basis(WaveletFamily::haar, 1, SignalShape::grid(4, 4));
  auto atom = [](double a, double c, double d, double e) {
    Signal v = Signal::Zero(16);
    v[0] = a;
    v[1] = c;
    v[4] = d;
    v[5] = e;
    return v;
  };
  EXPECT_LT((b.basis_vector(0) - atom(.5, .5, .5, .5)).norm(), 1e-14);
  EXPECT_LT((b.basis_vector(4) - atom(.5, -.5, .5, -.5)).norm(), 1e-14);
  EXPECT_LT((b.basis_vector(8) - atom(.5, .5, -.5, -.5)).norm(), 1e-14);
  EXPECT_LT((b.basis_vector(12) - atom(.5, -.5, -.5, .5)).norm(), 1e-14);
  // Bands are row-major: coefficient 1 sits one block to the right.
  Signal shifted = Signal::Zero(16);
  shifted[2] = shifted[3] = shifted[6] = shifted[7] = 0.5;
  EXPECT_LT((b.basis_vector(1) - shifted).norm(), 1e-14);
}

TEST(Wavelet, GridLevelTwoLayout) {
  // 8x8 with two levels: 2x2 approx, three 2x2 level-2 bands, three 4x4 level-1 bands.
  const auto b = make_basis(WaveletFamily::haar, 2, SignalShape::grid(8, 8));
  // Coefficient 16 is the first finest (low-rows, high-cols) atom: support 2x2.
  const Signal v = b.basis_vector(16);
  EXPECT_EQ((v.array() != 0.0).count(), 4);
  // Coefficient 4 is a level-2 detail atom: support 4x4.
  EXPECT_EQ((b.basis_vector(4).array() != 0.0).count(), 16);
}

TEST(Wavelet, OrthonormalAndRoundTrip) {
  for (auto fam : {WaveletFamily::haar, WaveletFamily::db5, WaveletFamily::coif1}) {
    for (auto shape : {SignalShape::line(64), SignalShape::grid(16, 16), SignalShape::grid(28, 28)}) {
      const int L = std::min(2, max_levels(shape));
      const auto b = make_basis(fam, L, shape);
      const Eigen::MatrixXd Psi = basis_matrix(b);
      const auto n = static_cast<Eigen::Index>(b.dimension());
      const double gram_err = (Psi.transpose() * Psi - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
      EXPECT_LT(gram_err, 1e-10) << to_string(fam) << " " << shape.to_string();
      const Signal x = random_signal(b.dimension(), 3);
      EXPECT_LT((b.inverse(b.forward(x)) - x).cwiseAbs().maxCoeff(), 1e-10);
      // forward is the transpose of the synthesis matrix.
      EXPECT_LT((b.forward(x) - Psi.transpose() * x).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Wavelet, L1NormsAndGamma) {
  const auto b = make_basis(WaveletFamily::coif1, 2, SignalShape::grid(28, 28));
  const auto& l1 = b.l1_norms();
  double mx = 0.0;
  for (std::size_t k = 0; k < b.dimension(); ++k) {
    const double want = b.basis_vector(k).lpNorm<1>();
    EXPECT_NEAR(l1[static_cast<Eigen::Index>(k)], want, 1e-12);
    mx = std::max(mx, want);
  }
  EXPECT_NEAR(b.gamma(), 2.0 * mx, 1e-12);
  // Haar level-1 grid atoms have four entries of 1/2.
  EXPECT_NEAR(make_basis(WaveletFamily::haar, 1, SignalShape::grid(4, 4)).gamma(), 4.0, 1e-14);
}

TEST(Wavelet, CopiesShareState) {
  const auto a = make_basis(WaveletFamily::db5, 2, SignalShape::grid(28, 28));
  const WaveletBasis c = a;
  EXPECT_EQ(&a.l1_norms(), &c.l1_norms());
}

TEST(Wavelet, MaxLevels) {
  EXPECT_EQ(max_levels(SignalShape::grid(28, 28)), 2);
  EXPECT_EQ(max_levels(SignalShape::line(64)), 6);
  EXPECT_EQ(max_levels(SignalShape::line(7)), 0);
}

TEST(Wavelet, ParseFamily) {
  EXPECT_EQ(parse_wavelet_family("db5"), WaveletFamily::db5);
  EXPECT_EQ(parse_wavelet_family("coif1"), WaveletFamily::coif1);
  EXPECT_EQ(parse_wavelet_family("haar"), WaveletFamily::haar);
  try {
    parse_wavelet_family("sym4");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownFamily);
  }
}

namespace {
template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}
}  // namespace

TEST(Wavelet, ErrorKinds) {
  EXPECT_EQ(kind_of([] { make_basis(WaveletFamily::haar, 3, SignalShape::grid(28, 28)); }),
            ErrorKind::UnsupportedShape);
  EXPECT_EQ(kind_of([] { make_basis(WaveletFamily::haar, 0, SignalShape::line(8)); }),
            ErrorKind::UnsupportedShape);
  EXPECT_EQ(kind_of([] { make_basis(WaveletFamily::haar, 1, SignalShape{3, 4, 4}); }),
            ErrorKind::UnsupportedShape);
  const auto b = make_basis(WaveletFamily::haar, 1, SignalShape::line(8));
  EXPECT_EQ(kind_of([&] { b.forward(Signal::Zero(6)); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([&] { b.inverse(Signal::Zero(9)); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([&] { b.basis_vector(8); }), ErrorKind::IndexOutOfRange);
}
