#include "sparsefront/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparsefront/error.hpp"

namespace sparsefront {

FrontEndConfig FrontEndConfig::from_rho(WaveletBasis basis, double rho) {
  require(rho > 0.0 && rho <= 1.0, ErrorKind::InvalidArgument,
          "sparsity level rho must lie in (0, 1]");
  const auto n = static_cast<double>(basis.dimension());
  const auto k = static_cast<std::size_t>(std::floor(rho * n));
  require(k >= 1, ErrorKind::InvalidArgument, "rho * N must be at least 1");
  return FrontEndConfig{std::move(basis), rho, k};
}

FrontEndConfig FrontEndConfig::with_k(WaveletBasis basis, std::size_t K) {
  const std::size_t n = basis.dimension();
  require(K >= 1 && K <= n, ErrorKind::InvalidArgument, "K must lie in [1, N]");
  const double rho = static_cast<double>(K) / static_cast<double>(n);
  return FrontEndConfig{std::move(basis), rho, K};
}

SupportSet::SupportSet(std::vector<std::size_t> indices, std::size_t dimension)
    : indices_(std::move(indices)), dimension_(dimension) {
  std::sort(indices_.begin(), indices_.end());
  require(std::adjacent_find(indices_.begin(), indices_.end()) == indices_.end(),
          ErrorKind::InvalidArgument, "support indices must be distinct");
  require(indices_.empty() || indices_.back() < dimension_, ErrorKind::IndexOutOfRange,
          "support index out of range");
}

bool SupportSet::contains(std::size_t k) const {
  return std::binary_search(indices_.begin(), indices_.end(), k);
}

SupportSet top_k_support(const Eigen::VectorXd& coeffs, std::size_t K) {
  const auto n = static_cast<std::size_t>(coeffs.size());
  require(K >= 1 && K <= n, ErrorKind::InvalidArgument, "K must lie in [1, N]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(coeffs[static_cast<Eigen::Index>(a)]);
    const double mb = std::abs(coeffs[static_cast<Eigen::Index>(b)]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  if (K < n) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(K - 1), idx.end(), before);
    idx.resize(K);
  }
  return SupportSet(std::move(idx), n);
}

SupportSet support(const FrontEndConfig& cfg, const Signal& x) {
  return top_k_support(cfg.basis.forward(x), cfg.K);
}

Signal sparsify(const FrontEndConfig& cfg, const Signal& x, SupportSet& support_out) {
  Eigen::VectorXd coeffs = cfg.basis.forward(x);
  support_out = top_k_support(coeffs, cfg.K);
  Eigen::VectorXd kept = Eigen::VectorXd::Zero(coeffs.size());
  for (std::size_t k : support_out.indices()) {
    kept[static_cast<Eigen::Index>(k)] = coeffs[static_cast<Eigen::Index>(k)];
  }
  return cfg.basis.inverse(kept);
}

Signal sparsify(const FrontEndConfig& cfg, const Signal& x) {
  SupportSet ignored;
  return sparsify(cfg, x, ignored);
}

Signal project(const WaveletBasis& basis, const SupportSet& S, const Signal& v) {
  require(!S.empty(), ErrorKind::InvalidArgument, "projection onto an empty support");
  require(S.dimension() == basis.dimension(), ErrorKind::ShapeMismatch,
          "support dimension does not match basis");
  Eigen::VectorXd coeffs = basis.forward(v);
  Eigen::VectorXd kept = Eigen::VectorXd::Zero(coeffs.size());
  for (std::size_t k : S.indices()) {
    kept[static_cast<Eigen::Index>(k)] = coeffs[static_cast<Eigen::Index>(k)];
  }
  return basis.inverse(kept);
}

SnrReport snr_check(const FrontEndConfig& cfg, const Signal& x, double epsilon) {
  require(epsilon >= 0.0, ErrorKind::InvalidArgument, "epsilon must be non-negative");
  const Eigen::VectorXd coeffs = cfg.basis.forward(x);
  const SupportSet S = top_k_support(coeffs, cfg.K);
  SnrReport report;
  report.gamma = cfg.basis.gamma();
  report.epsilon = epsilon;
  double lambda = 0.0;
  bool any_zero = false;
  for (std::size_t k : S.indices()) {
    const double m = std::abs(coeffs[static_cast<Eigen::Index>(k)]);
    if (m == 0.0) {
      any_zero = true;
    } else if (lambda == 0.0 || m < lambda) {
      lambda = m;
    }
  }
  report.lambda = lambda;
  // A zero among the retained coefficients ties with every discarded zero, so
  // the support cannot be certified.
  if (lambda == 0.0 || any_zero) {
    report.holds = false;
  } else if (epsilon == 0.0) {
    report.holds = true;
  } else {
    report.holds = lambda / epsilon > report.gamma;
  }
  return report;
}

std::size_t support_overlap(const SupportSet& a, const SupportSet& b) {
  require(a.dimension() == b.dimension(), ErrorKind::ShapeMismatch,
          "supports over different dimensions");
  std::size_t count = 0;
  auto ia = a.indices().begin();
  auto ib = b.indices().begin();
  while (ia != a.indices().end() && ib != b.indices().end()) {
    if (*ia == *ib) {
      ++count;
      ++ia;
      ++ib;
    } else if (*ia < *ib) {
      ++ia;
    } else {
      ++ib;
    }
  }
  return count;
}

std::size_t support_overlap(const FrontEndConfig& cfg, const Signal& x, const Signal& x_pert) {
  require(x.size() == x_pert.size(), ErrorKind::ShapeMismatch,
          "signals passed to support_overlap differ in shape");
  return support_overlap(support(cfg, x), support(cfg, x_pert));
}

}  // namespace sparsefront
