#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sparsefront/rng.hpp"
#include "sparsefront/wavelet.hpp"

namespace sparsefront {

enum class WeightDistribution { gaussian, uniform, rademacher };

WeightDistribution parse_weight_distribution(std::string_view name);
std::string_view to_string(WeightDistribution d) noexcept;

/// I.i.d. zero-mean, zero-median weight entries. `scale` is sigma for the
/// Gaussian and the half-width a for the uniform law; ignored for Rademacher.
struct WeightEnsemble {
  WeightDistribution distribution = WeightDistribution::gaussian;
  double scale = 1.0;
  std::uint64_t seed = 1;

  /// E|w_1|.
  double mu() const;
  /// E[w_1^2].
  double sigma2() const;
  Eigen::VectorXd sample(std::size_t n, Rng& rng) const;
};

struct ScalingCell {
  std::size_t N = 0;
  std::size_t K = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t trials = 0;
  double bound = 0.0;
  /// Additional per-cell statistics, written as extra CSV columns.
  std::vector<std::pair<std::string, double>> extras;

  double extra(const std::string& name) const;
  /// Normal-approximation 95% half-width of the mean.
  double ci95() const;
};

struct ScalingReport {
  std::string name;
  std::vector<ScalingCell> cells;

  void write_csv(std::ostream& out) const;
};

struct TheoryOptions {
  /// Worker threads; results do not depend on this value.
  unsigned workers = 1;
};

/// Per N: mean of Delta_0 / (N eps mu); `bound` holds the limit 1.
ScalingReport mc_baseline_scaling(const WeightEnsemble& ens, const std::vector<std::size_t>& n_grid,
                                  std::size_t trials, double eps, const TheoryOptions& opt = {});

/// Per K: mean of Delta_SW / (K eps mu) with a uniformly random K-subset as
/// support. `bound` holds the variance bound K (sigma^2 + mu^2) on Z_K;
/// extras: var_z (sample variance of Z_K), ratio_to_baseline (mean
/// Delta_SW / Delta_0), k_over_n.
ScalingReport mc_semiwhite_scaling(const WeightEnsemble& ens, const WaveletBasis& basis,
                                   const std::vector<std::size_t>& k_grid, std::size_t trials,
                                   double eps, const TheoryOptions& opt = {});

/// Per K: mean of Delta_W / bound where bound = eps sum_{k in S} |psi_k^T w| ||psi_k||_1.
/// Throws ErrorKind::Internal if any trial exceeds the bound. extras:
/// max_ratio, ratio_to_baseline (mean Delta_W / Delta_0), equality_fraction.
ScalingReport mc_white_bound(const WeightEnsemble& ens, const WaveletBasis& basis,
                             const std::vector<std::size_t>& k_grid, std::size_t trials, double eps,
                             const TheoryOptions& opt = {});

/// Samples of psi_k^T w over `trials` independent weight draws.
std::vector<double> mc_coefficient_samples(const WeightEnsemble& ens, const WaveletBasis& basis,
                                           std::size_t k, std::size_t trials);

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against N(mean, sigma^2).
double ks_statistic_normal(std::vector<double> samples, double mean, double sigma);

/// Random one-hidden-layer ReLU layer: rows w_i i.i.d. from `weights`,
/// biases b_i = +-bias_scale * ||w_i||_1 with a random sign, inputs uniform on
/// the unit sphere.
struct ReluLayerSpec {
  std::size_t N = 784;
  std::size_t M = 100;
  WeightEnsemble weights;
  double bias_scale = 0.015;
};

/// Per (N, M, delta): mean fraction of neurons with |w_i^T x - b_i| > delta ||w_i||_1,
/// the per-neuron worst case for e = delta sign(w_i). Cells carry N, K = M and
/// extras: delta, flip_fraction (neurons whose sign actually flips under the
/// worst-case e). `bound` is the mean Gaussian-tail lower bound on the safe
/// probability.
ScalingReport mc_relu_flip(const ReluLayerSpec& spec, const std::vector<double>& delta_grid,
                           std::size_t trials, const TheoryOptions& opt = {});

}  // namespace sparsefront
