#include "sparsefront/theory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "parallel.hpp"
#include "sparsefront/error.hpp"

namespace sparsefront {

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double a : v) ss += (a - m.mean) * (a - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

// Uniformly random K-subset of [0, n) by partial Fisher-Yates.
std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    boost::random::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

double gaussian_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

void check_trials(std::size_t trials) {
  require(trials >= 30, ErrorKind::InvalidArgument, "Monte-Carlo reports need at least 30 trials");
}

double signed_unit(double a) { return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0); }

}  // namespace

WeightDistribution parse_weight_distribution(std::string_view name) {
  if (name == "gaussian") return WeightDistribution::gaussian;
  if (name == "uniform") return WeightDistribution::uniform;
  if (name == "rademacher") return WeightDistribution::rademacher;
  fail(ErrorKind::InvalidArgument, "unknown weight distribution '" + std::string(name) + "'");
}

std::string_view to_string(WeightDistribution d) noexcept {
  switch (d) {
    case WeightDistribution::gaussian: return "gaussian";
    case WeightDistribution::uniform: return "uniform";
    case WeightDistribution::rademacher: return "rademacher";
  }
  return "unknown";
}

double WeightEnsemble::mu() const {
  switch (distribution) {
    case WeightDistribution::gaussian: return scale * std::sqrt(2.0 / std::numbers::pi);
    case WeightDistribution::uniform: return scale / 2.0;
    case WeightDistribution::rademacher: return 1.0;
  }
  return 0.0;
}

double WeightEnsemble::sigma2() const {
  switch (distribution) {
    case WeightDistribution::gaussian: return scale * scale;
    case WeightDistribution::uniform: return scale * scale / 3.0;
    case WeightDistribution::rademacher: return 1.0;
  }
  return 0.0;
}

Eigen::VectorXd WeightEnsemble::sample(std::size_t n, Rng& rng) const {
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  switch (distribution) {
    case WeightDistribution::gaussian: {
      boost::random::normal_distribution<double> dist(0.0, scale);
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = dist(rng);
      break;
    }
    case WeightDistribution::uniform: {
      boost::random::uniform_real_distribution<double> dist(-scale, scale);
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = dist(rng);
      break;
    }
    case WeightDistribution::rademacher: {
      boost::random::uniform_int_distribution<int> coin(0, 1);
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = coin(rng) == 1 ? 1.0 : -1.0;
      break;
    }
  }
  return w;
}

double ScalingCell::extra(const std::string& key) const {
  for (const auto& [k, v] : extras) {
    if (k == key) return v;
  }
  fail(ErrorKind::InvalidArgument, "no statistic named '" + key + "' in report cell");
}

double ScalingCell::ci95() const {
  return trials > 0 ? 1.96 * std / std::sqrt(static_cast<double>(trials)) : 0.0;
}

void ScalingReport::write_csv(std::ostream& out) const {
  out << "N,K,mean,std,trials,bound";
  if (!cells.empty()) {
    for (const auto& [k, v] : cells.front().extras) out << ',' << k;
  }
  out << '\n';
  out.precision(17);
  for (const auto& c : cells) {
    out << c.N << ',' << c.K << ',' << c.mean << ',' << c.std << ',' << c.trials << ',' << c.bound;
    for (const auto& [k, v] : c.extras) out << ',' << v;
    out << '\n';
  }
}

ScalingReport mc_baseline_scaling(const WeightEnsemble& ens, const std::vector<std::size_t>& n_grid,
                                  std::size_t trials, double eps, const TheoryOptions& opt) {
  check_trials(trials);
  require(eps > 0.0, ErrorKind::InvalidArgument, "eps must be positive");
  ScalingReport report{"baseline_scaling", {}};
  for (std::size_t n : n_grid) {
    std::vector<double> ratio(trials);
    detail::parallel_for(trials, opt.workers, [&](std::size_t t) {
      Rng rng = make_rng(ens.seed, streams::kTheoryTrial ^ (n << 20), t);
      const Eigen::VectorXd w = ens.sample(n, rng);
      const double delta0 = eps * w.lpNorm<1>();
      ratio[t] = delta0 / (static_cast<double>(n) * eps * ens.mu());
    });
    const Moments m = moments(ratio);
    report.cells.push_back({n, n, m.mean, m.std, trials, 1.0, {}});
  }
  return report;
}

ScalingReport mc_semiwhite_scaling(const WeightEnsemble& ens, const WaveletBasis& basis,
                                   const std::vector<std::size_t>& k_grid, std::size_t trials,
                                   double eps, const TheoryOptions& opt) {
  check_trials(trials);
  require(eps > 0.0, ErrorKind::InvalidArgument, "eps must be positive");
  const std::size_t n = basis.dimension();
  const double mu = ens.mu();
  ScalingReport report{"semiwhite_scaling", {}};
  for (std::size_t k : k_grid) {
    require(k >= 1 && k <= n, ErrorKind::InvalidArgument, "K must lie in [1, N]");
    std::vector<double> ratio(trials);
    std::vector<double> z(trials);
    std::vector<double> to_baseline(trials);
    detail::parallel_for(trials, opt.workers, [&](std::size_t t) {
      Rng rng = make_rng(ens.seed, streams::kTheoryTrial ^ (k << 20) ^ 0x5357, t);
      const Eigen::VectorXd w = ens.sample(n, rng);
      const auto subset = random_subset(n, k, rng);
      const Eigen::VectorXd coeffs = basis.forward(w);
      Eigen::VectorXd kept = Eigen::VectorXd::Zero(coeffs.size());
      for (std::size_t i : subset) kept[static_cast<Eigen::Index>(i)] = coeffs[static_cast<Eigen::Index>(i)];
      const Eigen::VectorXd projected = basis.inverse(kept);
      const Eigen::VectorXd sgn = w.unaryExpr(&signed_unit);
      z[t] = sgn.dot(projected);
      const double delta_sw = eps * std::abs(z[t]);
      ratio[t] = delta_sw / (static_cast<double>(k) * eps * mu);
      to_baseline[t] = delta_sw / (eps * w.lpNorm<1>());
    });
    const Moments m = moments(ratio);
    const Moments mz = moments(z);
    const double var_bound = static_cast<double>(k) * (ens.sigma2() + mu * mu);
    ScalingCell cell{n, k, m.mean, m.std, trials, var_bound, {}};
    cell.extras = {{"var_z", mz.std * mz.std},
                   {"ratio_to_baseline", moments(to_baseline).mean},
                   {"k_over_n", static_cast<double>(k) / static_cast<double>(n)}};
    report.cells.push_back(std::move(cell));
  }
  return report;
}

ScalingReport mc_white_bound(const WeightEnsemble& ens, const WaveletBasis& basis,
                             const std::vector<std::size_t>& k_grid, std::size_t trials, double eps,
                             const TheoryOptions& opt) {
  check_trials(trials);
  require(eps > 0.0, ErrorKind::InvalidArgument, "eps must be positive");
  const std::size_t n = basis.dimension();
  const Eigen::VectorXd& l1 = basis.l1_norms();
  ScalingReport report{"white_bound", {}};
  for (std::size_t k : k_grid) {
    require(k >= 1 && k <= n, ErrorKind::InvalidArgument, "K must lie in [1, N]");
    std::vector<double> ratio(trials);
    std::vector<double> to_baseline(trials);
    std::vector<double> delta_w(trials);
    detail::parallel_for(trials, opt.workers, [&](std::size_t t) {
      Rng rng = make_rng(ens.seed, streams::kTheoryTrial ^ (k << 20) ^ 0x5742, t);
      const Eigen::VectorXd w = ens.sample(n, rng);
      const auto subset = random_subset(n, k, rng);
      const Eigen::VectorXd coeffs = basis.forward(w);
      Eigen::VectorXd kept = Eigen::VectorXd::Zero(coeffs.size());
      double bound = 0.0;
      for (std::size_t i : subset) {
        const auto j = static_cast<Eigen::Index>(i);
        kept[j] = coeffs[j];
        bound += std::abs(coeffs[j]) * l1[j];
      }
      const Eigen::VectorXd projected = basis.inverse(kept);
      delta_w[t] = eps * projected.lpNorm<1>();
      bound *= eps;
      if (delta_w[t] > bound * (1.0 + 1e-9) + 1e-12) {
        fail(ErrorKind::Internal, "white-box distortion exceeded its bound in a Monte-Carlo trial");
      }
      ratio[t] = bound > 0.0 ? delta_w[t] / bound : 1.0;
      to_baseline[t] = delta_w[t] / (eps * w.lpNorm<1>());
    });
    const Moments m = moments(ratio);
    const double max_ratio = *std::max_element(ratio.begin(), ratio.end());
    const double equal = static_cast<double>(std::count_if(ratio.begin(), ratio.end(), [](double r) {
                           return std::abs(r - 1.0) <= 1e-12;
                         })) /
                         static_cast<double>(trials);
    ScalingCell cell{n, k, m.mean, m.std, trials, 1.0, {}};
    cell.extras = {{"max_ratio", max_ratio},
                   {"ratio_to_baseline", moments(to_baseline).mean},
                   {"mean_delta_w", moments(delta_w).mean},
                   {"equality_fraction", equal}};
    report.cells.push_back(std::move(cell));
  }
  return report;
}

std::vector<double> mc_coefficient_samples(const WeightEnsemble& ens, const WaveletBasis& basis,
                                           std::size_t k, std::size_t trials) {
  const Signal psi = basis.basis_vector(k);
  std::vector<double> out(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(ens.seed, streams::kTheoryTrial ^ 0x4b53, t);
    out[t] = psi.dot(ens.sample(basis.dimension(), rng));
  }
  return out;
}

double ks_statistic_normal(std::vector<double> samples, double mean, double sigma) {
  require(!samples.empty(), ErrorKind::EmptyInput, "KS statistic of an empty sample");
  require(sigma > 0.0, ErrorKind::InvalidArgument, "sigma must be positive");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = 1.0 - gaussian_tail((samples[i] - mean) / sigma);
    d = std::max({d, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return d;
}

ScalingReport mc_relu_flip(const ReluLayerSpec& spec, const std::vector<double>& delta_grid,
                           std::size_t trials, const TheoryOptions& opt) {
  check_trials(trials);
  require(spec.N >= 1 && spec.M >= 1, ErrorKind::InvalidArgument, "layer needs N, M >= 1");
  for (double d : delta_grid) require(d >= 0.0, ErrorKind::InvalidArgument, "delta must be >= 0");
  const std::size_t cells = delta_grid.size();
  // results[t][c] = (safe fraction, flip fraction, predicted safe probability)
  std::vector<std::vector<std::array<double, 3>>> results(trials);
  detail::parallel_for(trials, opt.workers, [&](std::size_t t) {
    Rng rng = make_rng(spec.weights.seed, streams::kTheoryTrial ^ (spec.N << 20) ^ spec.M, t);
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    boost::random::uniform_int_distribution<int> coin(0, 1);
    Eigen::VectorXd x(static_cast<Eigen::Index>(spec.N));
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
    x.normalize();
    std::vector<double> pre(spec.M);
    std::vector<double> l1(spec.M);
    std::vector<double> spread(spec.M);
    std::vector<double> bias(spec.M);
    for (std::size_t i = 0; i < spec.M; ++i) {
      const Eigen::VectorXd w = spec.weights.sample(spec.N, rng);
      l1[i] = w.lpNorm<1>();
      bias[i] = (coin(rng) == 1 ? 1.0 : -1.0) * spec.bias_scale * l1[i];
      pre[i] = w.dot(x) - bias[i];
      spread[i] = w.norm() / std::sqrt(static_cast<double>(spec.N));
    }
    results[t].resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      const double delta = delta_grid[c];
      double safe = 0.0;
      double flips = 0.0;
      double predicted = 0.0;
      for (std::size_t i = 0; i < spec.M; ++i) {
        const double shift = delta * l1[i];
        if (std::abs(pre[i]) > shift) safe += 1.0;
        // Worst case e = delta sign(w_i) pushed toward the switching point.
        const double moved = pre[i] - (pre[i] > 0.0 ? shift : -shift);
        if ((pre[i] > 0.0) != (moved > 0.0)) flips += 1.0;
        const double b = bias[i];
        predicted += gaussian_tail((shift + b) / spread[i]) + gaussian_tail((shift - b) / spread[i]);
      }
      const auto m = static_cast<double>(spec.M);
      results[t][c] = {safe / m, flips / m, std::min(1.0, predicted / m)};
    }
  });
  ScalingReport report{"relu_flip", {}};
  for (std::size_t c = 0; c < cells; ++c) {
    std::vector<double> safe(trials);
    std::vector<double> flip(trials);
    std::vector<double> predicted(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      safe[t] = results[t][c][0];
      flip[t] = results[t][c][1];
      predicted[t] = results[t][c][2];
    }
    const Moments m = moments(safe);
    ScalingCell cell{spec.N, spec.M, m.mean, m.std, trials, moments(predicted).mean, {}};
    cell.extras = {{"delta", delta_grid[c]}, {"flip_fraction", moments(flip).mean}};
    report.cells.push_back(std::move(cell));
  }
  return report;
}

}  // namespace sparsefront
