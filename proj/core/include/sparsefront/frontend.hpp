#pragma once

#include <cstddef>
#include <vector>

#include "sparsefront/wavelet.hpp"

namespace sparsefront {

/// Sparsifying front end: keep the K largest-magnitude coefficients of the
/// input in `basis`, zero the rest, reconstruct.
struct FrontEndConfig {
  WaveletBasis basis;
  double rho = 0.0;
  std::size_t K = 0;

  /// K = floor(rho * N); rho must lie in (0, 1] and give K >= 1.
  static FrontEndConfig from_rho(WaveletBasis basis, double rho);
  static FrontEndConfig with_k(WaveletBasis basis, std::size_t K);

  std::size_t dimension() const noexcept { return basis.dimension(); }
};

/// Sorted, distinct coefficient indices in [0, N).
class SupportSet {
 public:
  SupportSet() = default;
  SupportSet(std::vector<std::size_t> indices, std::size_t dimension);

  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  bool contains(std::size_t k) const;
  std::size_t dimension() const noexcept { return dimension_; }

  friend bool operator==(const SupportSet&, const SupportSet&) = default;

 private:
  std::vector<std::size_t> indices_;
  std::size_t dimension_ = 0;
};

struct SnrReport {
  double lambda = 0.0;
  double gamma = 0.0;
  double epsilon = 0.0;
  bool holds = false;
};

/// Indices of the K largest |coeffs|; equal magnitudes go to the lower index.
SupportSet top_k_support(const Eigen::VectorXd& coeffs, std::size_t K);

SupportSet support(const FrontEndConfig& cfg, const Signal& x);
Signal sparsify(const FrontEndConfig& cfg, const Signal& x);
/// Sparsified signal together with the support it was built from.
Signal sparsify(const FrontEndConfig& cfg, const Signal& x, SupportSet& support_out);

/// Orthogonal projection of v onto span{psi_k : k in S}.
Signal project(const WaveletBasis& basis, const SupportSet& S, const Signal& v);

SnrReport snr_check(const FrontEndConfig& cfg, const Signal& x, double epsilon);

std::size_t support_overlap(const FrontEndConfig& cfg, const Signal& x, const Signal& x_pert);
std::size_t support_overlap(const SupportSet& a, const SupportSet& b);

}  // namespace sparsefront
