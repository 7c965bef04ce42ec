#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace sparsefront {

using Signal = Eigen::VectorXd;

enum class WaveletFamily { haar, db5, coif1 };

WaveletFamily parse_wavelet_family(std::string_view name);
std::string_view to_string(WaveletFamily family) noexcept;

/// Shape of a signal: a 1D line of `width` samples, or a row-major
/// `height` x `width` grid.
struct SignalShape {
  int rank = 1;
  std::size_t height = 1;
  std::size_t width = 0;

  static SignalShape line(std::size_t n) { return {1, 1, n}; }
  static SignalShape grid(std::size_t h, std::size_t w) { return {2, h, w}; }

  std::size_t size() const noexcept { return height * width; }
  std::string to_string() const;
  friend bool operator==(const SignalShape&, const SignalShape&) = default;
};

/// An explicit orthonormal wavelet basis of R^N built from a periodized
/// multilevel (Mallat) transform.
///
/// Coefficient order is frozen: the coarsest approximation band first, then
/// the detail bands level by level from coarsest to finest. For grids each
/// level contributes three bands in the order (low-rows, high-cols),
/// (high-rows, low-cols), (high-rows, high-cols); every band is stored
/// row-major. Copies share state, and the object is immutable apart from the
/// lazily built l1-norm cache, which is filled exactly once.
class WaveletBasis {
 public:
  WaveletBasis(WaveletFamily family, int levels, SignalShape shape);

  WaveletFamily family() const noexcept;
  int levels() const noexcept;
  const SignalShape& shape() const noexcept;
  std::size_t dimension() const noexcept;

  /// Analysis filter taps (length 2 for haar, 10 for db5, 6 for coif1).
  std::span<const double> lowpass() const noexcept;
  std::span<const double> highpass() const noexcept;

  /// values[k] = psi_k^T x.
  Signal forward(const Signal& x) const;
  /// sum_k c[k] psi_k.
  Signal inverse(const Signal& coeffs) const;
  Signal basis_vector(std::size_t k) const;

  /// Entry k is ||psi_k||_1; computed on first use and cached.
  const Eigen::VectorXd& l1_norms() const;
  /// 2 * max_k ||psi_k||_1, the constant of the support-stability certificate.
  double gamma() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

WaveletBasis make_basis(WaveletFamily family, int levels, SignalShape shape);

/// Largest L with 2^L dividing every extent of `shape`.
int max_levels(const SignalShape& shape) noexcept;

}  // namespace sparsefront
