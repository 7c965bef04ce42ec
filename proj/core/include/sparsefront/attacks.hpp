#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sparsefront/network.hpp"

namespace sparsefront {

enum class AttackKind { fgsm, fgsm_iter, mifgsm, pgd, ll, ll_iter };

AttackKind parse_attack_kind(std::string_view name);
/// CLI spelling: fgsm, fgsm-iter, mifgsm, pgd, ll, ll-iter.
std::string_view to_string(AttackKind kind) noexcept;
bool is_iterative(AttackKind kind) noexcept;

struct AttackConfig {
  double eps = 0.2;
  double delta = 0.01;
  int steps = 100;
  int restarts = 1;
  double momentum_decay = 1.0;
  GradientSpec grad;
  std::uint64_t seed = 1;
  /// PGD starts every restart from a uniform draw in [-eps, eps]^N.
  bool random_init = true;
  /// Project x + e back into [0, 1]^N after every update. When false the
  /// range clamp happens only when the iterate is evaluated.
  bool clamp_each_step = true;
  /// Stop iterating an image (and skip its remaining restarts) once it is
  /// misclassified. Success is unaffected because the best iterate is kept.
  bool stop_on_success = false;
  /// Return the most damaging iterate. When false the final iterate is
  /// returned, and stop_on_success must be off.
  bool keep_best = true;

  /// Throws InvalidArgument on out-of-range fields.
  void validate(AttackKind kind) const;
};

struct AdversarialResult {
  /// x_adv - x; respects the budget.
  Signal perturbation;
  /// clamp(x + e, 0, 1).
  Signal adversarial;
  int predicted = -1;
  bool success = false;
  /// Index of the returned iterate (1-based; 1 for one-shot attacks).
  int steps_used = 0;
  /// max_{j != t} score_j - score_t at the adversarial image.
  double margin = 0.0;
};

/// Componentwise clamp to [-eps, eps].
Signal clip_budget(const Signal& e, double eps);

AdversarialResult fgsm(const Network& net, const FrontEndConfig* frontend, const Signal& x, int label,
                       const AttackConfig& cfg);
AdversarialResult fgsm_iter(const Network& net, const FrontEndConfig* frontend, const Signal& x,
                            int label, const AttackConfig& cfg);
AdversarialResult momentum_fgsm_iter(const Network& net, const FrontEndConfig* frontend,
                                     const Signal& x, int label, const AttackConfig& cfg);
/// `image_id` selects the per-image random-start stream.
AdversarialResult pgd(const Network& net, const FrontEndConfig* frontend, const Signal& x, int label,
                      const AttackConfig& cfg, std::uint64_t image_id = 0);
AdversarialResult locally_linear_attack(const Network& net, const FrontEndConfig* frontend,
                                        const Signal& x, int label, const AttackConfig& cfg);
AdversarialResult locally_linear_iter(const Network& net, const FrontEndConfig* frontend,
                                      const Signal& x, int label, const AttackConfig& cfg);

/// Runs one attack over the columns of `inputs`; `image_ids` seed PGD starts.
std::vector<AdversarialResult> run_attack(AttackKind kind, const Network& net,
                                          const FrontEndConfig* frontend,
                                          const Eigen::MatrixXd& inputs, std::span<const int> labels,
                                          std::span<const std::uint64_t> image_ids,
                                          const AttackConfig& cfg);

}  // namespace sparsefront
