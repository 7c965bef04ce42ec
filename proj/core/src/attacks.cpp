#include "sparsefront/attacks.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "sparsefront/error.hpp"
#include "sparsefront/linear.hpp"
#include "sparsefront/rng.hpp"

namespace sparsefront {

namespace {

using Idx = Eigen::Index;

// Columns processed together; bounds the memory of replicated backward passes.
constexpr std::size_t kChunk = 32;

struct Candidate {
  Signal e;
  int predicted = -1;
  bool success = false;
  double margin = -std::numeric_limits<double>::infinity();
  int step = 0;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.success != b.success) return a.success;
  return a.margin > b.margin;
}

double margin_of(const Eigen::VectorXd& scores, int label) {
  double m = -std::numeric_limits<double>::infinity();
  for (Idx j = 0; j < scores.size(); ++j) {
    if (j != label) m = std::max(m, scores[j]);
  }
  return m - scores[label];
}

Signal range_project(const Signal& x, const Signal& e) {
  return (x + e).cwiseMax(0.0).cwiseMin(1.0) - x;
}

// Scores an iterate whose pipeline scores are known.
Candidate judge(const Signal& x, const Signal& e, const Eigen::VectorXd& scores, int label, int step) {
  Candidate c;
  c.e = range_project(x, e);
  c.predicted = argmax(scores);
  c.success = c.predicted != label;
  c.margin = margin_of(scores, label);
  c.step = step;
  return c;
}

AdversarialResult to_result(const Signal& x, const Candidate& c) {
  AdversarialResult r;
  r.perturbation = c.e;
  r.adversarial = x + c.e;
  r.predicted = c.predicted;
  r.success = c.success;
  r.steps_used = c.step;
  r.margin = c.margin;
  return r;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& M, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(M.rows(), static_cast<Idx>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Idx>(j)) = M.col(static_cast<Idx>(cols[j]));
  return out;
}

GradientSpec step_spec(const AttackConfig& cfg, double step) {
  GradientSpec spec = cfg.grad;
  if (spec.probe_budget <= 0.0) spec.probe_budget = step;
  return spec;
}

enum class Direction { gradient, momentum, locally_linear };

// Shared iterative engine. Column b starts at E.col(b) and takes `steps`
// updates e <- clip(e + step * sign(d), eps) (then the range projection when
// configured). The best iterate among e_1..e_steps is kept per column, or
// the last one when keep_best is off.
class Iterator {
 public:
  Iterator(const Network& net, const FrontEndConfig* frontend, const Eigen::MatrixXd& X,
           std::span<const int> labels, const AttackConfig& cfg, Direction dir, double step, int steps)
      : net_(net), fe_(frontend), X_(X), labels_(labels), cfg_(cfg), dir_(dir), step_(step),
        steps_(steps), spec_(step_spec(cfg, step)) {}

  std::vector<Candidate> run(Eigen::MatrixXd E) {
    const auto B = static_cast<std::size_t>(X_.cols());
    std::vector<Candidate> best(B);
    std::vector<std::size_t> active(B);
    std::iota(active.begin(), active.end(), std::size_t{0});
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(X_.rows(), X_.cols());
    // Scores from the gradient pass double as the evaluation of the iterate
    // when the gradient is taken exactly where the iterate is evaluated.
    const bool reuse = cfg_.clamp_each_step && !spec_.exact;
    if (cfg_.clamp_each_step) {
      for (std::size_t b = 0; b < B; ++b) {
        const auto c = static_cast<Idx>(b);
        E.col(c) = range_project(X_.col(c), E.col(c));
      }
    }

    for (int k = 0; k <= steps_ && !active.empty(); ++k) {
      const bool last = k == steps_;
      if (last && reuse) {
        // Only the final iterate still needs scoring.
        evaluate(active, E, k, best);
        break;
      }
      if (last) break;

      const Eigen::MatrixXd Xa = gather(X_, active) + gather(E, active);
      std::vector<int> la(active.size());
      for (std::size_t j = 0; j < active.size(); ++j) la[j] = labels_[active[j]];

      Eigen::MatrixXd scores;
      Eigen::MatrixXd next(X_.rows(), static_cast<Idx>(active.size()));
      if (dir_ == Direction::locally_linear) {
        PairGradients pg = pair_gradients(net_, fe_, Xa, la, spec_);
        scores = std::move(pg.scores);
        for (std::size_t j = 0; j < active.size(); ++j) {
          const auto b = static_cast<Idx>(active[j]);
          next.col(static_cast<Idx>(j)) = best_pair_step(X_.col(b), E.col(b), pg.gradients[j], la[j]);
        }
      } else {
        std::vector<GradTarget> targets(active.size());
        for (std::size_t j = 0; j < active.size(); ++j) targets[j].label = la[j];
        GradientBatch gb = grad_input_batch(net_, fe_, Xa, targets, LossKind::cross_entropy, spec_);
        scores = std::move(gb.scores);
        for (std::size_t j = 0; j < active.size(); ++j) {
          const auto b = static_cast<Idx>(active[j]);
          Signal d = gb.gradient.col(static_cast<Idx>(j));
          if (dir_ == Direction::momentum) {
            const double norm = d.lpNorm<1>();
            G.col(b) = cfg_.momentum_decay * G.col(b) + (norm > 0.0 ? Signal(d / norm) : d);
            d = G.col(b);
          }
          next.col(static_cast<Idx>(j)) = advance(X_.col(b), E.col(b), d);
        }
      }

      if (reuse && k > 0) {
        std::vector<std::size_t> still;
        for (std::size_t j = 0; j < active.size(); ++j) {
          const std::size_t b = active[j];
          Candidate c = judge(X_.col(static_cast<Idx>(b)), E.col(static_cast<Idx>(b)),
                              scores.col(static_cast<Idx>(j)), labels_[b], k);
          if (!cfg_.keep_best || better(c, best[b])) best[b] = std::move(c);
          if (!(cfg_.stop_on_success && best[b].success)) {
            E.col(static_cast<Idx>(b)) = next.col(static_cast<Idx>(j));
            still.push_back(b);
          }
        }
        active = std::move(still);
      } else {
        for (std::size_t j = 0; j < active.size(); ++j) {
          E.col(static_cast<Idx>(active[j])) = next.col(static_cast<Idx>(j));
        }
        if (!reuse) evaluate(active, E, k + 1, best);
      }
    }
    return best;
  }

 private:
  Signal advance(const Signal& x, const Signal& e, const Signal& d) const {
    Signal out = clip_budget(e + step_ * sign_of(d), cfg_.eps);
    if (cfg_.clamp_each_step) out = range_project(x, out);
    return out;
  }

  // Locally linear step: the pair i != t whose candidate raises
  // score_i - score_t the most through the pipeline (lowest i on ties).
  Signal best_pair_step(const Signal& x, const Signal& e, const Eigen::MatrixXd& grads, int label) const {
    const Idx C = grads.cols();
    Eigen::MatrixXd cand(x.size(), C - 1);
    std::vector<int> cls;
    for (Idx i = 0; i < C; ++i) {
      if (i == label) continue;
      cand.col(static_cast<Idx>(cls.size())) = advance(x, e, grads.col(i));
      cls.push_back(static_cast<int>(i));
    }
    Eigen::MatrixXd imgs = cand;
    for (Idx j = 0; j < imgs.cols(); ++j) imgs.col(j) = (x + cand.col(j)).cwiseMax(0.0).cwiseMin(1.0);
    const Eigen::MatrixXd s = pipeline_scores(net_, fe_, imgs);
    Idx pick = 0;
    double best_gap = -std::numeric_limits<double>::infinity();
    for (Idx j = 0; j < s.cols(); ++j) {
      const double gap = s(cls[static_cast<std::size_t>(j)], j) - s(label, j);
      if (gap > best_gap) {
        best_gap = gap;
        pick = j;
      }
    }
    return cand.col(pick);
  }

  void evaluate(std::vector<std::size_t>& active, const Eigen::MatrixXd& E, int step,
                std::vector<Candidate>& best) const {
    if (active.empty()) return;
    Eigen::MatrixXd imgs(X_.rows(), static_cast<Idx>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto b = static_cast<Idx>(active[j]);
      imgs.col(static_cast<Idx>(j)) = (X_.col(b) + E.col(b)).cwiseMax(0.0).cwiseMin(1.0);
    }
    const Eigen::MatrixXd scores = pipeline_scores(net_, fe_, imgs);
    std::vector<std::size_t> still;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const std::size_t b = active[j];
      Candidate c = judge(X_.col(static_cast<Idx>(b)), E.col(static_cast<Idx>(b)),
                          scores.col(static_cast<Idx>(j)), labels_[b], step);
      if (!cfg_.keep_best || better(c, best[b])) best[b] = std::move(c);
      if (!(cfg_.stop_on_success && best[b].success)) still.push_back(b);
    }
    active = std::move(still);
  }

  const Network& net_;
  const FrontEndConfig* fe_;
  const Eigen::MatrixXd& X_;
  std::span<const int> labels_;
  const AttackConfig& cfg_;
  Direction dir_;
  double step_;
  int steps_;
  GradientSpec spec_;
};

std::vector<Candidate> attack_chunk(AttackKind kind, const Network& net, const FrontEndConfig* fe,
                                    const Eigen::MatrixXd& X, std::span<const int> labels,
                                    std::span<const std::uint64_t> ids, const AttackConfig& cfg) {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(X.rows(), X.cols());
  switch (kind) {
    case AttackKind::fgsm:
      return Iterator(net, fe, X, labels, cfg, Direction::gradient, cfg.eps, 1).run(zero);
    case AttackKind::fgsm_iter:
      return Iterator(net, fe, X, labels, cfg, Direction::gradient, cfg.delta, cfg.steps).run(zero);
    case AttackKind::mifgsm:
      return Iterator(net, fe, X, labels, cfg, Direction::momentum, cfg.delta, cfg.steps).run(zero);
    case AttackKind::ll:
      return Iterator(net, fe, X, labels, cfg, Direction::locally_linear, cfg.eps, 1).run(zero);
    case AttackKind::ll_iter:
      return Iterator(net, fe, X, labels, cfg, Direction::locally_linear, cfg.delta, cfg.steps).run(zero);
    case AttackKind::pgd: {
      const auto B = static_cast<std::size_t>(X.cols());
      std::vector<Candidate> best(B);
      std::vector<std::size_t> pending(B);
      std::iota(pending.begin(), pending.end(), std::size_t{0});
      for (int r = 0; r < cfg.restarts && !pending.empty(); ++r) {
        Eigen::MatrixXd Xp = gather(X, pending);
        std::vector<int> lp(pending.size());
        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(X.rows(), static_cast<Idx>(pending.size()));
        for (std::size_t j = 0; j < pending.size(); ++j) {
          lp[j] = labels[pending[j]];
          if (cfg.random_init && cfg.eps > 0.0) {
            Rng rng = make_rng(derive_seed(cfg.seed, streams::kPgdInit, ids[pending[j]]), 0,
                               static_cast<std::uint64_t>(r));
            std::uniform_real_distribution<double> u(-cfg.eps, cfg.eps);
            for (Idx i = 0; i < E.rows(); ++i) E(i, static_cast<Idx>(j)) = u(rng);
          }
        }
        const std::vector<Candidate> got =
            Iterator(net, fe, Xp, lp, cfg, Direction::gradient, cfg.delta, cfg.steps).run(std::move(E));
        std::vector<std::size_t> still;
        for (std::size_t j = 0; j < pending.size(); ++j) {
          const std::size_t b = pending[j];
          if (better(got[j], best[b])) best[b] = got[j];
          if (!(cfg.stop_on_success && best[b].success)) still.push_back(b);
        }
        pending = std::move(still);
      }
      return best;
    }
  }
  fail(ErrorKind::Internal, "unhandled attack kind");
}

AdversarialResult single(AttackKind kind, const Network& net, const FrontEndConfig* fe, const Signal& x,
                         int label, const AttackConfig& cfg, std::uint64_t id) {
  const int labels[1] = {label};
  const std::uint64_t ids[1] = {id};
  return run_attack(kind, net, fe, x, labels, ids, cfg).front();
}

}  // namespace

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "fgsm-iter" || name == "fgsm_iter" || name == "ifgsm") return AttackKind::fgsm_iter;
  if (name == "mifgsm" || name == "momentum") return AttackKind::mifgsm;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "ll") return AttackKind::ll;
  if (name == "ll-iter" || name == "ll_iter") return AttackKind::ll_iter;
  fail(ErrorKind::InvalidArgument, "unknown attack '" + std::string(name) + "'");
}

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::fgsm_iter: return "fgsm-iter";
    case AttackKind::mifgsm: return "mifgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::ll: return "ll";
    case AttackKind::ll_iter: return "ll-iter";
  }
  return "?";
}

bool is_iterative(AttackKind kind) noexcept {
  return kind == AttackKind::fgsm_iter || kind == AttackKind::mifgsm || kind == AttackKind::pgd ||
         kind == AttackKind::ll_iter;
}

void AttackConfig::validate(AttackKind kind) const {
  require(eps >= 0.0, ErrorKind::InvalidArgument, "eps must be non-negative");
  require(momentum_decay >= 0.0 && momentum_decay <= 1.0, ErrorKind::InvalidArgument,
          "momentum decay must lie in [0, 1]");
  require(grad.refine_steps >= 0, ErrorKind::InvalidArgument, "refine steps must be non-negative");
  if (is_iterative(kind)) {
    require(delta > 0.0, ErrorKind::InvalidArgument, "delta must be positive");
    require(eps == 0.0 || delta <= eps, ErrorKind::InvalidArgument, "delta must not exceed eps");
    require(steps >= 1, ErrorKind::InvalidArgument, "steps must be at least 1");
    require(restarts >= 1, ErrorKind::InvalidArgument, "restarts must be at least 1");
    require(keep_best || !stop_on_success, ErrorKind::InvalidArgument,
            "stop_on_success needs keep_best");
  }
}

Signal clip_budget(const Signal& e, double eps) { return e.cwiseMax(-eps).cwiseMin(eps); }

std::vector<AdversarialResult> run_attack(AttackKind kind, const Network& net,
                                          const FrontEndConfig* frontend,
                                          const Eigen::MatrixXd& inputs, std::span<const int> labels,
                                          std::span<const std::uint64_t> image_ids,
                                          const AttackConfig& cfg) {
  cfg.validate(kind);
  const auto B = static_cast<std::size_t>(inputs.cols());
  require(labels.size() == B && image_ids.size() == B, ErrorKind::ShapeMismatch,
          "one label and one id per input column are required");
  require(static_cast<std::size_t>(inputs.rows()) == net.input_size(), ErrorKind::ShapeMismatch,
          "inputs do not match the network");
  require((kind != AttackKind::ll && kind != AttackKind::ll_iter) || net.class_count() >= 2,
          ErrorKind::InvalidArgument, "locally linear attacks need at least two classes");

  std::vector<AdversarialResult> out;
  out.reserve(B);
  for (std::size_t begin = 0; begin < B; begin += kChunk) {
    const std::size_t n = std::min(kChunk, B - begin);
    const Eigen::MatrixXd X = inputs.middleCols(static_cast<Idx>(begin), static_cast<Idx>(n));
    const auto got = attack_chunk(kind, net, frontend, X, labels.subspan(begin, n),
                                  image_ids.subspan(begin, n), cfg);
    for (std::size_t j = 0; j < n; ++j) out.push_back(to_result(X.col(static_cast<Idx>(j)), got[j]));
  }
  return out;
}

AdversarialResult fgsm(const Network& net, const FrontEndConfig* frontend, const Signal& x, int label,
                       const AttackConfig& cfg) {
  return single(AttackKind::fgsm, net, frontend, x, label, cfg, 0);
}

AdversarialResult fgsm_iter(const Network& net, const FrontEndConfig* frontend, const Signal& x,
                            int label, const AttackConfig& cfg) {
  return single(AttackKind::fgsm_iter, net, frontend, x, label, cfg, 0);
}

AdversarialResult momentum_fgsm_iter(const Network& net, const FrontEndConfig* frontend,
                                     const Signal& x, int label, const AttackConfig& cfg) {
  return single(AttackKind::mifgsm, net, frontend, x, label, cfg, 0);
}

AdversarialResult pgd(const Network& net, const FrontEndConfig* frontend, const Signal& x, int label,
                      const AttackConfig& cfg, std::uint64_t image_id) {
  return single(AttackKind::pgd, net, frontend, x, label, cfg, image_id);
}

AdversarialResult locally_linear_attack(const Network& net, const FrontEndConfig* frontend,
                                        const Signal& x, int label, const AttackConfig& cfg) {
  return single(AttackKind::ll, net, frontend, x, label, cfg, 0);
}

AdversarialResult locally_linear_iter(const Network& net, const FrontEndConfig* frontend,
                                      const Signal& x, int label, const AttackConfig& cfg) {
  return single(AttackKind::ll_iter, net, frontend, x, label, cfg, 0);
}

}  // namespace sparsefront
