#include <gtest/gtest.h>

#include <random>

#include "sparsefront/attacks.hpp"
#include "sparsefront/error.hpp"

using namespace sparsefront;

namespace {

Signal interior(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Signal x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = u(rng);
  return x;
}

Network make_net(NetworkArch arch, std::uint64_t seed) {
  Network net(std::move(arch));
  net.initialize(seed);
  for (auto& p : net.params()) p.bias.setRandom() *= 0.1f;
  return net;
}

NetworkArch softmax_pair(int hidden) {
  NetworkArch a = NetworkArch::mlp(hidden, 3);
  a.classes = 2;
  a.layers.back() = LayerSpec::dense(2);
  return a;
}

double margin_of(const Eigen::VectorXd& s, int label) {
  double best = -INFINITY;
  for (int j = 0; j < s.size(); ++j)
    if (j != label) best = std::max(best, s[j]);
  return best - s[label];
}

FrontEndConfig coif1() {
  return FrontEndConfig::from_rho(make_basis(WaveletFamily::coif1, 2, SignalShape::grid(28, 28)), 0.035);
}

const AttackKind kAll[] = {AttackKind::fgsm, AttackKind::fgsm_iter, AttackKind::mifgsm,
                           AttackKind::pgd,  AttackKind::ll,        AttackKind::ll_iter};

void expect_same(const AdversarialResult& a, const AdversarialResult& b) {
  EXPECT_EQ(a.perturbation, b.perturbation);
  EXPECT_EQ(a.predicted, b.predicted);
  EXPECT_EQ(a.success, b.success);
  EXPECT_EQ(a.margin, b.margin);
}

AdversarialResult single_result(AttackKind kind, const Network& net, const FrontEndConfig* fe, const Signal& x,
                                int label, const AttackConfig& cfg, std::uint64_t id = 0) {
  const int labels[1] = {label};
  const std::uint64_t ids[1] = {id};
  return run_attack(kind, net, fe, x, labels, ids, cfg).front();
}

}  // namespace

TEST(Attacks, ClipBudget) {
  Signal e(5);
  e << -0.5, -0.1, 0.0, 0.15, 3.0;
  Signal want(5);
  want << -0.2, -0.1, 0.0, 0.15, 0.2;
  EXPECT_EQ(clip_budget(e, 0.2), want);
  EXPECT_EQ(clip_budget(e, 0.0), Signal::Zero(5));
}

TEST(Attacks, NamesRoundTrip) {
  for (auto k : kAll) EXPECT_EQ(parse_attack_kind(to_string(k)), k);
  EXPECT_THROW(parse_attack_kind("cw"), Error);
  EXPECT_FALSE(is_iterative(AttackKind::fgsm));
  EXPECT_TRUE(is_iterative(AttackKind::pgd));
}

TEST(Attacks, ConfigValidation) {
  AttackConfig c;
  c.delta = 0.5;
  EXPECT_THROW(c.validate(AttackKind::fgsm_iter), Error);
  EXPECT_NO_THROW(c.validate(AttackKind::fgsm));
  c = AttackConfig{};
  c.momentum_decay = 1.5;
  EXPECT_THROW(c.validate(AttackKind::mifgsm), Error);
  c = AttackConfig{};
  c.eps = -1;
  EXPECT_THROW(c.validate(AttackKind::ll), Error);
  c = AttackConfig{};
  c.keep_best = false;
  c.stop_on_success = true;
  EXPECT_THROW(c.validate(AttackKind::pgd), Error);
}

TEST(Attacks, BudgetAndRangeInvariants) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 1);
  const FrontEndConfig fe = coif1();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Signal x(784);
  for (auto& v : x) v = u(rng) < 0.5 ? 0.0 : u(rng);  // many pixels on the range boundary
  for (auto kind : kAll) {
    for (const FrontEndConfig* f : {static_cast<const FrontEndConfig*>(nullptr), &fe}) {
      AttackConfig cfg;
      cfg.eps = 0.2;
      cfg.delta = 0.05;
      cfg.steps = 10;
      cfg.restarts = 2;
      const auto r = single_result(kind, net, f, x, 1, cfg);
      EXPECT_LE(r.perturbation.cwiseAbs().maxCoeff(), cfg.eps + 1e-12) << to_string(kind);
      EXPECT_GE(r.adversarial.minCoeff(), 0.0);
      EXPECT_LE(r.adversarial.maxCoeff(), 1.0);
      EXPECT_LT((r.adversarial - x - r.perturbation).cwiseAbs().maxCoeff(), 1e-15);
      const Eigen::VectorXd s = pipeline_scores(net, f, r.adversarial);
      EXPECT_EQ(r.predicted, argmax(s));
      EXPECT_EQ(r.success, r.predicted != 1);
      EXPECT_NEAR(r.margin, margin_of(s, 1), 1e-4);
    }
  }
}

TEST(Attacks, ZeroBudgetLeavesInputUnchanged) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 2);
  const Signal x = interior(784, 4);
  const int clean = argmax(pipeline_scores(net, nullptr, x));
  for (auto kind : kAll) {
    AttackConfig cfg;
    cfg.eps = 0.0;
    cfg.steps = 3;
    const auto r = single_result(kind, net, nullptr, x, clean, cfg);
    EXPECT_EQ(r.perturbation, Signal::Zero(784)) << to_string(kind);
    EXPECT_EQ(r.predicted, clean);
    EXPECT_FALSE(r.success);
  }
}

TEST(Attacks, AttacksNeverIncreaseLossMargin) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 5);
  const FrontEndConfig fe = coif1();
  for (int t = 0; t < 4; ++t) {
    const Signal x = interior(784, 50 + static_cast<std::uint64_t>(t));
    const Eigen::VectorXd s = pipeline_scores(net, &fe, x);
    const int label = argmax(s);
    for (auto kind : {AttackKind::fgsm_iter, AttackKind::mifgsm, AttackKind::pgd, AttackKind::ll_iter}) {
      AttackConfig cfg;
      cfg.eps = 0.05;
      cfg.delta = 0.01;
      cfg.steps = 10;
      cfg.random_init = false;
      const auto r = single_result(kind, net, &fe, x, label, cfg);
      EXPECT_GE(r.margin, margin_of(s, label) - 1e-5) << to_string(kind);
    }
  }
}

TEST(Attacks, LargeBudgetFlipsUndefendedLinearizedNet) {
  // With eps large relative to the logit gap every attack should succeed.
  const Network net = make_net(NetworkArch::mlp(16, 4), 6);
  const Signal x = interior(784, 7);
  const int label = argmax(pipeline_scores(net, nullptr, x));
  for (auto kind : kAll) {
    AttackConfig cfg;
    cfg.eps = 0.3;
    cfg.delta = 0.05;
    cfg.steps = 20;
    EXPECT_TRUE(single_result(kind, net, nullptr, x, label, cfg).success) << to_string(kind);
  }
}

TEST(Attacks, ReductionIdentities) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 8);
  const FrontEndConfig fe = coif1();
  for (auto mode : {GradMode::bpda_identity, GradMode::projection, GradMode::iterated_projection}) {
    for (int t = 0; t < 3; ++t) {
      const Signal x = interior(784, 90 + static_cast<std::uint64_t>(t));
      const int label = argmax(pipeline_scores(net, &fe, x));
      AttackConfig cfg;
      cfg.eps = 0.1;
      cfg.delta = 0.02;
      cfg.steps = 8;
      cfg.grad.mode = mode;
      const auto base = fgsm_iter(net, &fe, x, label, cfg);

      AttackConfig mi = cfg;
      mi.momentum_decay = 0.0;
      expect_same(momentum_fgsm_iter(net, &fe, x, label, mi), base);

      AttackConfig pg = cfg;
      pg.restarts = 1;
      pg.random_init = false;
      expect_same(pgd(net, &fe, x, label, pg, 12345), base);

      AttackConfig one = cfg;
      one.steps = 1;
      one.delta = one.eps;
      expect_same(locally_linear_iter(net, &fe, x, label, one), locally_linear_attack(net, &fe, x, label, cfg));
      expect_same(fgsm_iter(net, &fe, x, label, one), fgsm(net, &fe, x, label, cfg));
    }
  }
}

TEST(Attacks, Deterministic) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 9);
  const FrontEndConfig fe = coif1();
  const Signal x = interior(784, 3);
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.delta = 0.02;
  cfg.steps = 5;
  cfg.restarts = 3;
  cfg.grad.mode = GradMode::iterated_projection;
  expect_same(pgd(net, &fe, x, 2, cfg, 7), pgd(net, &fe, x, 2, cfg, 7));
  EXPECT_NE(pgd(net, &fe, x, 2, cfg, 7).perturbation, pgd(net, &fe, x, 2, cfg, 8).perturbation);
  // Batched and single-image runs take the same steps; single-precision
  // scores may differ in the last bits because the matrix kernels differ.
  Eigen::MatrixXd X(784, 3);
  for (int j = 0; j < 3; ++j) X.col(j) = interior(784, 30 + static_cast<std::uint64_t>(j));
  const std::vector<int> labels{0, 1, 2};
  const std::vector<std::uint64_t> ids{4, 5, 6};
  const auto batch = run_attack(AttackKind::pgd, net, &fe, X, labels, ids, cfg);
  for (std::size_t j = 0; j < 3; ++j) {
    const auto one = pgd(net, &fe, X.col(static_cast<Eigen::Index>(j)), labels[j], cfg, ids[j]);
    EXPECT_EQ(batch[j].perturbation, one.perturbation);
    EXPECT_EQ(batch[j].predicted, one.predicted);
    EXPECT_NEAR(batch[j].margin, one.margin, 1e-4);
  }
}

TEST(Attacks, StopOnSuccessKeepsOutcome) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 10);
  for (int t = 0; t < 5; ++t) {
    const Signal x = interior(784, 200 + static_cast<std::uint64_t>(t));
    const int label = argmax(pipeline_scores(net, nullptr, x));
    AttackConfig cfg;
    cfg.eps = 0.05;
    cfg.delta = 0.005;
    cfg.steps = 20;
    const auto full = fgsm_iter(net, nullptr, x, label, cfg);
    cfg.stop_on_success = true;
    const auto early = fgsm_iter(net, nullptr, x, label, cfg);
    EXPECT_EQ(full.success, early.success);
    EXPECT_LE(early.steps_used, full.steps_used);
  }
}

TEST(Attacks, FinalIterateMode) {
  const Network net = make_net(NetworkArch::mlp(16, 4), 12);
  const FrontEndConfig fe = coif1();
  for (int t = 0; t < 5; ++t) {
    const Signal x = interior(784, 500 + static_cast<std::uint64_t>(t));
    const int label = argmax(pipeline_scores(net, &fe, x));
    AttackConfig cfg;
    cfg.eps = 0.1;
    cfg.delta = 0.01;
    cfg.steps = 12;
    cfg.keep_best = false;
    const auto last = fgsm_iter(net, &fe, x, label, cfg);
    EXPECT_EQ(last.steps_used, cfg.steps);
    // The final iterate of n steps is where n - 1 steps plus one more land.
    AttackConfig shorter = cfg;
    shorter.steps = cfg.steps - 1;
    const auto prev = fgsm_iter(net, &fe, x, label, shorter);
    EXPECT_LE((last.perturbation - prev.perturbation).cwiseAbs().maxCoeff(), cfg.delta + 1e-12);
    cfg.keep_best = true;
    EXPECT_GE(fgsm_iter(net, &fe, x, label, cfg).margin, last.margin);
  }
}

TEST(Attacks, BinarySigmoidFgsmMatchesSemiWhiteDirection) {
  const Network net = make_net(NetworkArch::mlp(10, 2), 11);
  for (int t = 0; t < 10; ++t) {
    const Signal x = interior(784, 300 + static_cast<std::uint64_t>(t));
    const int label = t % 2;
    const LocalLinearModel lm = local_linear(net, x);
    // Positive label: the attack lowers the logit, so it moves against w_eq.
    const double s = label == 1 ? 1.0 : -1.0;
    AttackConfig cfg;
    cfg.eps = 0.05;
    const auto f = fgsm(net, nullptr, x, label, cfg);
    const auto ll = locally_linear_attack(net, nullptr, x, label, cfg);
    for (Eigen::Index i = 0; i < 784; ++i) {
      const double w = lm.w_eq(i, 0);
      if (w == 0.0) continue;
      const double want = -s * (w > 0 ? 1.0 : -1.0);
      ASSERT_EQ(f.perturbation[i] > 0 ? 1.0 : -1.0, want) << i;
      ASSERT_EQ(ll.perturbation[i], f.perturbation[i]) << i;
    }
  }
}

TEST(Attacks, TwoClassSoftmaxFgsmEqualsLocallyLinear) {
  const Network net = make_net(softmax_pair(12), 12);
  for (int t = 0; t < 5; ++t) {
    const Signal x = interior(784, 400 + static_cast<std::uint64_t>(t));
    AttackConfig cfg;
    cfg.eps = 0.05;
    const auto f = fgsm(net, nullptr, x, t % 2, cfg);
    const auto ll = locally_linear_attack(net, nullptr, x, t % 2, cfg);
    EXPECT_EQ(f.perturbation, ll.perturbation);
  }
}

TEST(Attacks, LocallyLinearPicksMostDamagingPair) {
  const Network net = make_net(NetworkArch::mlp(16, 5), 13);
  const Signal x = interior(784, 17);
  const int label = argmax(pipeline_scores(net, nullptr, x));
  AttackConfig cfg;
  cfg.eps = 0.02;
  const auto r = locally_linear_attack(net, nullptr, x, label, cfg);
  // Oracle: try every one-vs-label sign direction and keep the best margin.
  double best = -INFINITY;
  const LocalLinearModel lm = local_linear(net, x);
  for (int i = 0; i < 5; ++i) {
    if (i == label) continue;
    const Signal d = lm.w_eq.col(i) - lm.w_eq.col(label);
    const Signal e = cfg.eps * d.array().sign().matrix();
    const Signal adv = (x + e).cwiseMax(0.0).cwiseMin(1.0);
    best = std::max(best, margin_of(pipeline_scores(net, nullptr, adv), label));
  }
  EXPECT_NEAR(r.margin, best, 1e-4);
}
