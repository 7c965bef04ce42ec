#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sparsefront/error.hpp"
#include "sparsefront/harness.hpp"
#include "test_support.hpp"

using namespace sparsefront;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse_text(const std::string& text) {
  std::istringstream in(text);
  return ExperimentConfig::parse(in);
}

ErrorKind parse_kind(const std::string& text) {
  try {
    parse_text(text).validate();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kSmall = R"(# tiny binary experiment
[experiment]
name = tiny
seed = 3
histogram_bins = 5
flip_statistics = true

[data]
pair = 3,7
train_limit = 400
test_limit = 40

[model]
kind = mlp
hidden = 10
epochs = 2
batch = 32
lr = 0.05
checkpoint_dir = CKPT

[frontend]
family = db5
levels = 2
rho = 0.03

[attack.fgsm]
kind = fgsm
eps = 0.1
grad_modes = bpda1,proj

[attack.zero]
kind = fgsm-iter
eps = 0
delta = 0.01
steps = 3

[attack.pgd]
kind = pgd
eps = 0.1
delta = 0.02
steps = 4
restarts = 2
grad_modes = bpda1,proj,iterproj
)";

std::string small_config(const fs::path& ckpt) {
  std::string s = kSmall;
  s.replace(s.find("CKPT"), 4, ckpt.string());
  return s;
}

}  // namespace

TEST(Harness, ParsesSectionsAndDefaults) {
  const auto cfg = parse_text(kSmall);
  EXPECT_EQ(cfg.name, "tiny");
  EXPECT_EQ(cfg.seed, 3u);
  ASSERT_TRUE(cfg.task.pair.has_value());
  EXPECT_EQ(*cfg.task.pair, (std::pair<int, int>{3, 7}));
  EXPECT_EQ(cfg.model.kind, "mlp");
  EXPECT_EQ(cfg.model.hyper.epochs, 2);
  EXPECT_EQ(cfg.frontend.family, "db5");
  ASSERT_EQ(cfg.attacks.size(), 3u);
  EXPECT_EQ(cfg.attacks[2].cfg.restarts, 2);
  EXPECT_EQ(cfg.attacks[2].modes.size(), 3u);
  EXPECT_EQ(cfg.attacks[1].modes, std::vector<GradMode>{GradMode::bpda_identity});
  EXPECT_TRUE(cfg.attacks[0].linear_clip);
  EXPECT_FALSE(parse_text("[attack.a]\nkind = fgsm\nclip = false\n").attacks[0].linear_clip);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.frontend.tag(), "db5-L2-rho0.03");
}

TEST(Harness, ConfigErrors) {
  EXPECT_EQ(parse_kind("[model]\nkind = resnet\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[model]\nkindd = mlp\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[bogus]\nx = 1\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[experiment]\nseed = many\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[attack.a]\nkind = fgsm-iter\neps = 0.1\ndelta = 0.5\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[model]\nkind = linear\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[data]\npair = 3,7\n[model]\nkind = linear\n[attack.a]\nkind = pgd\n"),
            ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[attack.a]\nkind = fgsm\ngrad_modes = magic\n"), ErrorKind::InvalidArgument);
  EXPECT_EQ(parse_kind("[frontend]\nfamily = coif1\nrho = 0\n"), ErrorKind::InvalidArgument);
}

TEST(Harness, HashIgnoresFormattingButNotValues) {
  const auto a = parse_text(kSmall);
  std::string spaced = kSmall;
  spaced.insert(0, "; leading comment\n\n");
  EXPECT_EQ(parse_text(spaced).hash(), a.hash());
  std::string changed = kSmall;
  changed.replace(changed.find("eps = 0.1"), 9, "eps = 0.2");
  EXPECT_NE(parse_text(changed).hash(), a.hash());
  EXPECT_EQ(a.hash(), fnv1a(a.canonical()));
}

TEST(Harness, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Harness, HistogramDensity) {
  const std::vector<double> s{0.0, 0.1, 0.2, 0.2, 0.9, 1.0};
  const Histogram h = emit_histogram(s, 4, true);
  ASSERT_EQ(h.heights.size(), 4u);
  double mass = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    mass += h.heights[i] * h.width;
    n += h.counts[i];
  }
  EXPECT_NEAR(mass, 1.0, 1e-12);
  EXPECT_EQ(n, s.size());
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{4, 0, 0, 2}));
  const Histogram raw = emit_histogram(s, 4, false);
  EXPECT_EQ(raw.heights[0], 4.0);
}

TEST(Harness, HistogramConstantSamples) {
  const Histogram h = emit_histogram({5.0, 5.0, 5.0}, 2, true);
  EXPECT_NEAR(h.lo, 4.5, 1e-12);
  EXPECT_NEAR(h.width, 0.5, 1e-12);
  EXPECT_NEAR((h.heights[0] + h.heights[1]) * h.width, 1.0, 1e-12);
  EXPECT_THROW(emit_histogram({}, 3, true), Error);
}

TEST(Harness, SvgChartIsWellFormed) {
  std::ostringstream out;
  write_line_chart_svg(out, "acc <vs> eps", "eps", "accuracy", {{"a&b", {0.0, 0.1}, {90.0, 50.0}}});
  const std::string s = out.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  EXPECT_NE(s.find("&lt;vs&gt;"), std::string::npos);
  EXPECT_NE(s.find("a&amp;b"), std::string::npos);
}

TEST(Harness, SmallExperimentEndToEnd) {
  REQUIRE_MNIST();
  const fs::path root = fs::temp_directory_path() / "sf_harness_e2e";
  fs::remove_all(root);
  auto cfg = parse_text(small_config(root / "ckpt"));
  cfg.task.data_root = sparsefront::testing::mnist_dir();
  cfg.output_dir = root / "w1";
  const Report r1 = run_experiment(cfg);
  EXPECT_TRUE(r1.complete);
  EXPECT_EQ(r1.config_hash, cfg.hash());

  // A zero budget reproduces clean accuracy in both arms.
  for (const std::string arm : {"none", "defended"}) {
    EXPECT_EQ(r1.accuracy(arm, "zero"), r1.accuracy(arm, "clean")) << arm;
    EXPECT_LE(r1.accuracy(arm, "pgd"), r1.accuracy(arm, "clean"));
  }
  // The per-image worst case is never above any single mode.
  for (const std::string mode : {"bpda1", "proj", "iterproj"})
    EXPECT_LE(r1.accuracy("defended", "pgd", "worst"), r1.accuracy("defended", "pgd", mode));
  EXPECT_LE(r1.accuracy("defended", "pgd", "min"), r1.accuracy("defended", "pgd", "bpda1"));

  for (const char* f : {"report.csv", "provenance.txt", "defended_pgd_iterproj.csv"})
    EXPECT_TRUE(fs::exists(cfg.output_dir / f)) << f;
  const std::string prov = slurp(cfg.output_dir / "provenance.txt");
  EXPECT_NE(prov.find("status=complete"), std::string::npos);

  // Rerunning with cached checkpoints and more workers gives identical files.
  cfg.output_dir = root / "w2";
  cfg.workers = 2;
  run_experiment(cfg);
  for (const auto& entry : fs::directory_iterator(root / "w1")) {
    const auto name = entry.path().filename();
    if (name == "provenance.txt") continue;
    EXPECT_EQ(slurp(entry.path()), slurp(root / "w2" / name)) << name;
  }
  fs::remove_all(root);
}

TEST(Harness, SweepWritesTable) {
  REQUIRE_MNIST();
  const fs::path root = fs::temp_directory_path() / "sf_harness_sweep";
  fs::remove_all(root);
  auto cfg = parse_text(small_config(root / "ckpt"));
  cfg.task.data_root = sparsefront::testing::mnist_dir();
  cfg.task.test_limit = 16;
  cfg.attacks.resize(1);
  cfg.output_dir = root / "out";
  const SweepResult s = sweep(cfg, SweepAxis::eps, {0.0, 0.2});
  ASSERT_EQ(s.reports.size(), 2u);
  EXPECT_GE(s.reports[0].accuracy("none", "fgsm"), s.reports[1].accuracy("none", "fgsm"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "sweep.csv"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "sweep.svg"));
  fs::remove_all(root);
}
