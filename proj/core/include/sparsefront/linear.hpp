#pragma once

#include <cstdint>
#include <filesystem>

#include "sparsefront/dataset.hpp"
#include "sparsefront/frontend.hpp"

namespace sparsefront {

/// Binary linear classifier: predicts label_pos iff w^T x + b > 0.
struct LinearModel {
  Eigen::VectorXd w;
  double b = 0.0;
  std::uint8_t label_neg = 0;
  std::uint8_t label_pos = 1;

  double score(const Signal& x) const { return w.dot(x) + b; }
  /// Binary class index: 1 for the positive side, 0 otherwise.
  int predict_class(const Signal& x) const { return score(x) > 0.0 ? 1 : 0; }
};

struct LinearHyper {
  double learning_rate = 0.01;
  int epochs = 20;
  double regularization = 1e-4;
  std::uint64_t seed = 1;
};

struct LinearTrainResult {
  LinearModel model;
  double train_accuracy = 0.0;
};

struct DistortionReport {
  double delta0 = 0.0;
  double delta_sw = 0.0;
  double delta_w = 0.0;
  /// Right-hand side of the white-box bound eps * sum_{k in S} |psi_k^T w| ||psi_k||_1.
  double white_bound = 0.0;
};

/// L2-regularized hinge loss minimized by seeded SGD over binary labels {0, 1}.
/// When `frontend` is given every training image is sparsified first.
LinearTrainResult train_linear(const Dataset& train_set, const LinearHyper& hyper,
                               const FrontEndConfig* frontend = nullptr);

double linear_accuracy(const LinearModel& model, const Dataset& ds,
                       const FrontEndConfig* frontend = nullptr);

/// +1 when the true class sits on the negative side (the attack pushes the
/// score up), -1 otherwise.
double attack_direction(int true_class);

/// e = s * eps * sign(w).
Signal attack_linear_baseline(const LinearModel& model, const Signal& x, int true_class, double eps);

/// e = s * eps * sign(project(w, support(x))).
Signal attack_linear_white(const LinearModel& model, const FrontEndConfig& cfg, const Signal& x,
                           int true_class, double eps);

/// e <- s * eps * sign(project(w, support(x + e))), starting from the baseline
/// perturbation, repeated `iters` times.
Signal attack_linear_white_iterated(const LinearModel& model, const FrontEndConfig& cfg,
                                    const Signal& x, int true_class, double eps, int iters);

/// Throws ErrorKind::Internal if the white-box distortion exceeds its bound.
DistortionReport distortions(const LinearModel& model, const FrontEndConfig& cfg, const Signal& x,
                             double eps);

/// Checkpoint: "SFLM", u32 version, u32 N, N x f64 weights, f64 bias, u8 label_neg, u8 label_pos.
void save_linear(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_linear(const std::filesystem::path& path);

Signal sign_of(const Signal& v);

}  // namespace sparsefront
