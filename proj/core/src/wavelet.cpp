#include "sparsefront/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "sparsefront/error.hpp"

namespace sparsefront {

namespace {

// Daubechies 5 (10 taps), minimum-phase spectral factor, sum = sqrt(2).
constexpr double kDb5[] = {
    0.003335725285473771277998183,  -0.01258075199908199946850974,
    -0.006241490212798274274190519, 0.07757149384004571352313049,
    -0.03224486958463837464847976,  -0.2422948870663820318625714,
    0.1384281459013207315053971,    0.7243085284377729277280712,
    0.6038292697971896705401193,    0.1601023979741929144807237,
};

std::vector<double> lowpass_taps(WaveletFamily family) {
  switch (family) {
    case WaveletFamily::haar: {
      const double r = 1.0 / std::sqrt(2.0);
      return {r, r};
    }
    case WaveletFamily::db5:
      return {std::begin(kDb5), std::end(kDb5)};
    case WaveletFamily::coif1: {
      // Closed form of the 6-tap Coiflet, in the same ascending order as db5.
      const double s7 = std::sqrt(7.0);
      const double scale = std::sqrt(2.0) / 32.0;
      return {scale * (-3.0 + s7),        scale * (1.0 - s7), scale * (14.0 - 2.0 * s7),
              scale * (14.0 + 2.0 * s7), scale * (5.0 + s7), scale * (1.0 - s7)};
    }
  }
  fail(ErrorKind::UnknownFamily, "unknown wavelet family");
}

// Quadrature mirror: g[k] = (-1)^k h[L-1-k].
std::vector<double> mirror(const std::vector<double>& h) {
  std::vector<double> g(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double v = h[h.size() - 1 - k];
    g[k] = (k % 2 == 0) ? v : -v;
  }
  return g;
}

}  // namespace

struct WaveletBasis::State {
  WaveletFamily family;
  int levels;
  SignalShape shape;
  std::vector<double> lo;
  std::vector<double> hi;
  // order[k] is the Mallat-layout buffer index holding coefficient k.
  std::vector<std::size_t> order;

  mutable std::once_flag l1_once;
  mutable Eigen::VectorXd l1;

  // One periodized analysis step over n samples read with `stride`.
  void analyze(double* data, std::size_t n, std::size_t stride, std::vector<double>& ext,
               std::vector<double>& out) const {
    const std::size_t taps = lo.size();
    ext.resize(n + taps);
    for (std::size_t i = 0; i < n + taps; ++i) ext[i] = data[(i % n) * stride];
    out.resize(n);
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const double* src = ext.data() + 2 * i;
      double a = 0.0;
      double d = 0.0;
      for (std::size_t k = 0; k < taps; ++k) {
        a += lo[k] * src[k];
        d += hi[k] * src[k];
      }
      out[i] = a;
      out[half + i] = d;
    }
    for (std::size_t i = 0; i < n; ++i) data[i * stride] = out[i];
  }

  // Adjoint (= inverse) of analyze.
  void synthesize(double* data, std::size_t n, std::size_t stride, std::vector<double>& acc,
                  std::vector<double>& in) const {
    const std::size_t taps = lo.size();
    const std::size_t half = n / 2;
    in.resize(n);
    for (std::size_t i = 0; i < n; ++i) in[i] = data[i * stride];
    acc.assign(n, 0.0);
    for (std::size_t i = 0; i < half; ++i) {
      const double a = in[i];
      const double d = in[half + i];
      for (std::size_t k = 0; k < taps; ++k) {
        acc[(2 * i + k) % n] += lo[k] * a + hi[k] * d;
      }
    }
    for (std::size_t i = 0; i < n; ++i) data[i * stride] = acc[i];
  }

  void forward_inplace(std::vector<double>& buf) const {
    std::vector<double> scratch_a;
    std::vector<double> scratch_b;
    const std::size_t w = shape.width;
    const std::size_t h = shape.height;
    for (int level = 0; level < levels; ++level) {
      const std::size_t aw = w >> level;
      const std::size_t ah = h >> (shape.rank == 2 ? level : 0);
      for (std::size_t r = 0; r < ah; ++r) analyze(buf.data() + r * w, aw, 1, scratch_a, scratch_b);
      if (shape.rank == 2) {
        for (std::size_t c = 0; c < aw; ++c) analyze(buf.data() + c, ah, w, scratch_a, scratch_b);
      }
    }
  }

  void inverse_inplace(std::vector<double>& buf) const {
    std::vector<double> scratch_a;
    std::vector<double> scratch_b;
    const std::size_t w = shape.width;
    const std::size_t h = shape.height;
    for (int level = levels - 1; level >= 0; --level) {
      const std::size_t aw = w >> level;
      const std::size_t ah = h >> (shape.rank == 2 ? level : 0);
      if (shape.rank == 2) {
        for (std::size_t c = 0; c < aw; ++c) synthesize(buf.data() + c, ah, w, scratch_a, scratch_b);
      }
      for (std::size_t r = 0; r < ah; ++r) synthesize(buf.data() + r * w, aw, 1, scratch_a, scratch_b);
    }
  }

  void build_order() {
    const std::size_t w = shape.width;
    order.clear();
    order.reserve(shape.size());
    if (shape.rank == 1) {
      // The 1D Mallat layout already is the canonical order.
      for (std::size_t i = 0; i < w; ++i) order.push_back(i);
      return;
    }
    auto push_block = [&](std::size_t r0, std::size_t c0, std::size_t bh, std::size_t bw) {
      for (std::size_t r = 0; r < bh; ++r)
        for (std::size_t c = 0; c < bw; ++c) order.push_back((r0 + r) * w + (c0 + c));
    };
    const std::size_t ch = shape.height >> levels;
    const std::size_t cw = w >> levels;
    push_block(0, 0, ch, cw);
    for (int level = levels; level >= 1; --level) {
      const std::size_t bh = shape.height >> level;
      const std::size_t bw = w >> level;
      push_block(0, bw, bh, bw);
      push_block(bh, 0, bh, bw);
      push_block(bh, bw, bh, bw);
    }
  }
};

std::string SignalShape::to_string() const {
  if (rank == 1) return std::to_string(width);
  return std::to_string(height) + "x" + std::to_string(width);
}

WaveletFamily parse_wavelet_family(std::string_view name) {
  if (name == "haar") return WaveletFamily::haar;
  if (name == "db5") return WaveletFamily::db5;
  if (name == "coif1") return WaveletFamily::coif1;
  fail(ErrorKind::UnknownFamily, "unknown wavelet family '" + std::string(name) + "'");
}

std::string_view to_string(WaveletFamily family) noexcept {
  switch (family) {
    case WaveletFamily::haar: return "haar";
    case WaveletFamily::db5: return "db5";
    case WaveletFamily::coif1: return "coif1";
  }
  return "unknown";
}

int max_levels(const SignalShape& shape) noexcept {
  int levels = 0;
  auto divisible = [&](int l) {
    const std::size_t m = std::size_t{1} << l;
    if (shape.width % m != 0) return false;
    return shape.rank == 1 || shape.height % m == 0;
  };
  while (levels < 62 && shape.width > 0 && divisible(levels + 1)) ++levels;
  return levels;
}

WaveletBasis::WaveletBasis(WaveletFamily family, int levels, SignalShape shape)
    : state_(std::make_shared<State>()) {
  require(shape.rank == 1 || shape.rank == 2, ErrorKind::UnsupportedShape,
          "signal rank must be 1 or 2");
  if (shape.rank == 1) shape.height = 1;
  require(shape.size() > 0, ErrorKind::UnsupportedShape, "empty signal shape");
  require(levels >= 1, ErrorKind::UnsupportedShape, "levels must be positive");
  require(levels <= max_levels(shape), ErrorKind::UnsupportedShape,
          "2^" + std::to_string(levels) + " does not divide every extent of shape " +
              shape.to_string());
  state_->family = family;
  state_->levels = levels;
  state_->shape = shape;
  state_->lo = lowpass_taps(family);
  state_->hi = mirror(state_->lo);
  state_->build_order();
}

WaveletFamily WaveletBasis::family() const noexcept { return state_->family; }
int WaveletBasis::levels() const noexcept { return state_->levels; }
const SignalShape& WaveletBasis::shape() const noexcept { return state_->shape; }
std::size_t WaveletBasis::dimension() const noexcept { return state_->shape.size(); }
std::span<const double> WaveletBasis::lowpass() const noexcept { return state_->lo; }
std::span<const double> WaveletBasis::highpass() const noexcept { return state_->hi; }

Signal WaveletBasis::forward(const Signal& x) const {
  const std::size_t n = dimension();
  require(static_cast<std::size_t>(x.size()) == n, ErrorKind::ShapeMismatch,
          "signal of length " + std::to_string(x.size()) + " does not match basis shape " +
              state_->shape.to_string());
  std::vector<double> buf(x.data(), x.data() + n);
  state_->forward_inplace(buf);
  Signal coeffs(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) coeffs[static_cast<Eigen::Index>(k)] = buf[state_->order[k]];
  return coeffs;
}

Signal WaveletBasis::inverse(const Signal& coeffs) const {
  const std::size_t n = dimension();
  require(static_cast<std::size_t>(coeffs.size()) == n, ErrorKind::ShapeMismatch,
          "coefficient vector of length " + std::to_string(coeffs.size()) +
              " does not match basis dimension " + std::to_string(n));
  std::vector<double> buf(n);
  for (std::size_t k = 0; k < n; ++k) buf[state_->order[k]] = coeffs[static_cast<Eigen::Index>(k)];
  state_->inverse_inplace(buf);
  return Eigen::Map<const Signal>(buf.data(), static_cast<Eigen::Index>(n));
}

Signal WaveletBasis::basis_vector(std::size_t k) const {
  const std::size_t n = dimension();
  require(k < n, ErrorKind::IndexOutOfRange,
          "basis index " + std::to_string(k) + " out of range [0, " + std::to_string(n) + ")");
  Signal unit = Signal::Zero(static_cast<Eigen::Index>(n));
  unit[static_cast<Eigen::Index>(k)] = 1.0;
  return inverse(unit);
}

const Eigen::VectorXd& WaveletBasis::l1_norms() const {
  std::call_once(state_->l1_once, [this] {
    const std::size_t n = dimension();
    Eigen::VectorXd norms(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      norms[static_cast<Eigen::Index>(k)] = basis_vector(k).lpNorm<1>();
    }
    state_->l1 = std::move(norms);
  });
  return state_->l1;
}

double WaveletBasis::gamma() const { return 2.0 * l1_norms().maxCoeff(); }

WaveletBasis make_basis(WaveletFamily family, int levels, SignalShape shape) {
  return WaveletBasis(family, levels, shape);
}

}  // namespace sparsefront
