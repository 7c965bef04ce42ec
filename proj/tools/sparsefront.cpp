// Command-line front end: train, attack, evaluate, sweep, theory, sparsify.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sparsefront/attacks.hpp"
#include "sparsefront/error.hpp"
#include "sparsefront/harness.hpp"
#include "sparsefront/theory.hpp"

namespace fs = std::filesystem;
using namespace sparsefront;

namespace {

struct FrontEndArgs {
  std::string family = "none";
  int levels = 2;
  double rho = 0.035;

  std::optional<FrontEndConfig> build() const {
    if (family == "none") return std::nullopt;
    return FrontEndSpec{family, levels, rho}.build(28, 28);
  }
};

void add_frontend_flags(CLI::App* cmd, FrontEndArgs& fe) {
  cmd->add_option("--frontend", fe.family, "Wavelet family (haar, db5, coif1) or none");
  cmd->add_option("--levels", fe.levels, "Decomposition levels");
  cmd->add_option("--rho", fe.rho, "Sparsity level K/N");
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidArgument, "bad grid value '" + item + "'");
    }
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_grid(text)) out.push_back(static_cast<std::size_t>(v));
  return out;
}

Dataset test_slice(const fs::path& root, std::size_t offset, std::size_t limit,
                   const std::optional<std::pair<int, int>>& pair) {
  Dataset ds = load_mnist_split(root, "t10k");
  if (pair) ds = select_pair(ds, pair->first, pair->second);
  offset = std::min(offset, ds.size());
  std::size_t count = ds.size() - offset;
  if (limit > 0) count = std::min(count, limit);
  require(count > 0, ErrorKind::EmptyInput, "empty test selection");
  Dataset out = ds;
  out.images = ds.images.middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(count));
  out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(offset),
                    ds.labels.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return out;
}

std::optional<std::pair<int, int>> parse_pair(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto comma = text.find(',');
  require(comma != std::string::npos, ErrorKind::InvalidArgument, "pair must be 'd1,d2'");
  return std::make_pair(std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1)));
}

void print_report(const Report& r) {
  std::printf("%-10s %-14s %-10s %9s\n", "arm", "attack", "grad_mode", "accuracy");
  for (const AccuracyRow& row : r.rows) {
    std::printf("%-10s %-14s %-10s %8.2f%%\n", row.arm.c_str(), row.attack.c_str(), row.grad_mode.c_str(),
                row.accuracy);
  }
}

// Desk-scale configs use 100-step iterative attacks and 10 PGD restarts.
void apply_paper_scale(ExperimentConfig& cfg) {
  for (AttackSpec& a : cfg.attacks) {
    if (a.kind == "pgd") a.cfg.restarts = 100;
    if (a.kind == "fgsm-iter" || a.kind == "mifgsm") a.cfg.steps = 1000;
  }
}

void write_pgm(const fs::path& path, const Signal& x, std::size_t rows, std::size_t cols) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = std::clamp(x[static_cast<Eigen::Index>(r * cols + c)], 0.0, 1.0);
      out << static_cast<int>(std::lround(v * 255.0)) << (c + 1 == cols ? '\n' : ' ');
    }
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Sparsifying front ends against l-infinity adversarial attacks"};
  app.require_subcommand(1);
  std::string data_dir;
  app.add_option("--data", data_dir, "MNIST directory (default: $SPARSEFRONT_DATA or data/mnist)");
  app.fallthrough();
  auto root = [&] { return data_dir.empty() ? data_root() : fs::path(data_dir); };
  auto say = [](const std::string& s) { std::cerr << s << '\n'; };

  // train
  auto* train = app.add_subcommand("train", "Train a model and save a checkpoint");
  std::string model_kind = "cnn4", pair_text, out_path;
  int hidden = 10;
  NetworkHyper hyper;
  LinearHyper linear;
  std::size_t train_limit = 0;
  FrontEndArgs train_fe;
  train->add_option("--model", model_kind, "cnn4, mlp or linear")->check(CLI::IsMember({"cnn4", "mlp", "linear"}));
  train->add_option("--pair", pair_text, "Binary digit pair d1,d2");
  train->add_option("--hidden", hidden, "Hidden units of the mlp");
  train->add_option("--epochs", hyper.epochs, "Training epochs");
  train->add_option("--batch", hyper.batch_size, "Minibatch size");
  train->add_option("--lr", hyper.learning_rate, "Learning rate");
  train->add_option("--lr-decay", hyper.lr_decay, "Per-epoch learning-rate factor");
  train->add_option("--seed", hyper.seed, "Seed");
  train->add_option("--train-limit", train_limit, "Use only the first N training images");
  train->add_option("--out", out_path, "Checkpoint path")->required();
  add_frontend_flags(train, train_fe);
  train->callback([&] {
    const auto pair = parse_pair(pair_text);
    Dataset tr = load_mnist_split(root(), "train");
    Dataset te = load_mnist_split(root(), "t10k");
    if (pair) {
      tr = select_pair(tr, pair->first, pair->second);
      te = select_pair(te, pair->first, pair->second);
    }
    if (train_limit > 0) tr = head(tr, train_limit);
    const auto fe = train_fe.build();
    const FrontEndConfig* fep = fe ? &*fe : nullptr;
    if (model_kind == "linear") {
      require(pair.has_value(), ErrorKind::InvalidArgument, "linear models need --pair");
      linear.seed = hyper.seed;
      const LinearTrainResult r = train_linear(tr, linear, fep);
      save_linear(r.model, out_path);
      std::printf("train_accuracy=%.2f test_accuracy=%.2f\n", r.train_accuracy,
                  linear_accuracy(r.model, te, fep));
      return;
    }
    const NetworkArch arch = model_kind == "cnn4" ? NetworkArch::cnn4() : NetworkArch::mlp(hidden, pair ? 2 : 10);
    const NetworkTrainResult r = train_network(arch, tr, fep, hyper, [](const EpochStats& s) {
      std::fprintf(stderr, "epoch %d loss %.4f acc %.2f%% (%.1fs)\n", s.epoch, s.loss, s.accuracy, s.seconds);
    });
    save_network(r.network, out_path);
    std::printf("test_accuracy=%.2f\n", network_accuracy(r.network, te, fep));
  });

  // attack
  auto* attack = app.add_subcommand("attack", "Attack a network checkpoint and emit a per-image CSV");
  std::string ckpt, attack_kind = "fgsm", grad_mode = "bpda1", csv_path, attack_pair;
  AttackConfig acfg;
  std::size_t offset = 0, limit = 100;
  FrontEndArgs attack_fe;
  attack->add_option("--checkpoint", ckpt, "Network checkpoint (.sfnn)")->required();
  attack->add_option("--attack", attack_kind, "fgsm, fgsm-iter, mifgsm, pgd, ll, ll-iter")
      ->check(CLI::IsMember({"fgsm", "fgsm-iter", "mifgsm", "pgd", "ll", "ll-iter"}));
  attack->add_option("--eps", acfg.eps, "l-infinity budget");
  attack->add_option("--delta", acfg.delta, "Per-iteration budget");
  attack->add_option("--steps", acfg.steps, "Iterations");
  attack->add_option("--restarts", acfg.restarts, "PGD random restarts");
  attack->add_option("--momentum", acfg.momentum_decay, "Momentum decay");
  attack->add_option("--grad-mode", grad_mode, "bpda1, proj or iterproj")
      ->check(CLI::IsMember({"bpda1", "proj", "iterproj"}));
  attack->add_option("--seed", acfg.seed, "Attack seed");
  attack->add_option("--pair", attack_pair, "Binary digit pair d1,d2 (for binary networks)");
  attack->add_option("--offset", offset, "First test image");
  attack->add_option("--limit", limit, "Number of test images (0 = all)");
  attack->add_option("--out", csv_path, "Per-image CSV (default: stdout)");
  add_frontend_flags(attack, attack_fe);
  attack->callback([&] {
    const Network net = load_network(ckpt);
    const Dataset ds = test_slice(root(), offset, limit, parse_pair(attack_pair));
    const auto fe = attack_fe.build();
    acfg.grad.mode = parse_grad_mode(grad_mode);
    const Eigen::MatrixXd X = ds.images.cast<double>();
    std::vector<std::uint64_t> ids(ds.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = offset + i;
    const auto results =
        run_attack(parse_attack_kind(attack_kind), net, fe ? &*fe : nullptr, X, ds.labels, ids, acfg);
    std::ostringstream out;
    out << "index,true,pred,success,linf,support_overlap\n";
    std::size_t correct = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const AdversarialResult& r = results[i];
      correct += r.success ? 0 : 1;
      out << offset + i << ',' << ds.labels[i] << ',' << r.predicted << ',' << (r.success ? 1 : 0) << ','
          << r.perturbation.lpNorm<Eigen::Infinity>() << ',';
      if (fe) out << support_overlap(*fe, ds.image(i), r.adversarial);
      out << '\n';
    }
    if (csv_path.empty()) {
      std::cout << out.str();
    } else {
      std::ofstream f(csv_path);
      require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + csv_path);
      f << out.str();
    }
    std::fprintf(stderr, "accuracy=%.2f (%zu/%zu)\n", 100.0 * static_cast<double>(correct) / results.size(),
                 correct, results.size());
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Run an experiment config and write its report");
  std::string config_path, output_override;
  bool paper_scale = false;
  long long test_limit = -1;
  unsigned workers = 0;
  evaluate->add_option("--config", config_path, "Experiment config (INI)")->required();
  evaluate->add_option("--output", output_override, "Override the output directory");
  evaluate->add_option("--test-limit", test_limit, "Override the number of test images (0 = all)");
  evaluate->add_option("--workers", workers, "Worker threads");
  evaluate->add_flag("--paper-scale", paper_scale, "100 PGD restarts and 1000-step iterative FGSM variants");
  auto load_config = [&] {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    if (!data_dir.empty()) cfg.task.data_root = data_dir;
    if (!output_override.empty()) cfg.output_dir = output_override;
    if (test_limit >= 0) cfg.task.test_limit = static_cast<std::size_t>(test_limit);
    if (workers > 0) cfg.workers = workers;
    if (paper_scale) apply_paper_scale(cfg);
    return cfg;
  };
  evaluate->callback([&] {
    const Report r = run_experiment(load_config(), say);
    print_report(r);
  });

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep rho or eps and write sweep.csv / sweep.svg");
  std::string axis = "eps", grid_text;
  sweep_cmd->add_option("--config", config_path, "Experiment config (INI)")->required();
  sweep_cmd->add_option("--axis", axis, "rho or eps")->check(CLI::IsMember({"rho", "eps"}));
  sweep_cmd->add_option("--grid", grid_text, "Comma-separated values")->required();
  sweep_cmd->add_option("--output", output_override, "Override the output directory");
  sweep_cmd->add_option("--test-limit", test_limit, "Override the number of test images (0 = all)");
  sweep_cmd->add_flag("--paper-scale", paper_scale, "100 PGD restarts and 1000-step iterative FGSM variants");
  sweep_cmd->callback([&] {
    const ExperimentConfig cfg = load_config();
    const SweepResult res = sweep(cfg, parse_sweep_axis(axis), parse_grid(grid_text), say);
    std::printf("%s", (cfg.output_dir / "sweep.csv").string().c_str());
    std::printf("\n");
  });

  // theory
  auto* theory = app.add_subcommand("theory", "Monte-Carlo checks of the scaling results");
  std::string experiment = "semiwhite", dist = "gaussian", family = "haar", grid_arg, theory_out;
  double scale = 1.0, eps = 0.01, bias_scale = 0.015;
  std::size_t trials = 200, n = 1024, hidden_units = 100;
  std::uint64_t theory_seed = 1;
  unsigned theory_workers = 1;
  theory->add_option("--experiment", experiment, "baseline, semiwhite, white or relu-flip")
      ->check(CLI::IsMember({"baseline", "semiwhite", "white", "relu-flip"}));
  theory->add_option("--dist", dist, "gaussian, uniform or rademacher");
  theory->add_option("--scale", scale, "Gaussian sigma or uniform half-width");
  theory->add_option("--family", family, "Wavelet family for the basis");
  theory->add_option("--n", n, "Signal dimension (1D line)");
  theory->add_option("--grid", grid_arg, "N grid (baseline), K grid (semiwhite/white) or delta grid (relu-flip)");
  theory->add_option("--trials", trials, "Monte-Carlo trials per cell");
  theory->add_option("--eps", eps, "Attack budget");
  theory->add_option("--hidden", hidden_units, "ReLU layer width (relu-flip)");
  theory->add_option("--bias-scale", bias_scale, "|b_i| / ||w_i||_1 (relu-flip)");
  theory->add_option("--seed", theory_seed, "Seed");
  theory->add_option("--workers", theory_workers, "Worker threads");
  theory->add_option("--out", theory_out, "CSV path (default: stdout)");
  theory->callback([&] {
    const WeightEnsemble ens{parse_weight_distribution(dist), scale, theory_seed};
    const TheoryOptions opt{theory_workers};
    ScalingReport rep;
    if (experiment == "baseline") {
      rep = mc_baseline_scaling(ens, grid_arg.empty() ? std::vector<std::size_t>{256, 1024, 4096} : parse_sizes(grid_arg),
                                trials, eps, opt);
    } else if (experiment == "relu-flip") {
      ReluLayerSpec spec;
      spec.N = n;
      spec.M = hidden_units;
      spec.weights = ens;
      spec.bias_scale = bias_scale;
      rep = mc_relu_flip(spec, grid_arg.empty() ? std::vector<double>{0.001, 0.005, 0.01} : parse_grid(grid_arg),
                         trials, opt);
    } else {
      const WaveletBasis basis = make_basis(parse_wavelet_family(family), std::min(2, max_levels(SignalShape::line(n))),
                                            SignalShape::line(n));
      const auto ks = grid_arg.empty() ? std::vector<std::size_t>{16, 64, 256} : parse_sizes(grid_arg);
      rep = experiment == "semiwhite" ? mc_semiwhite_scaling(ens, basis, ks, trials, eps, opt)
                                      : mc_white_bound(ens, basis, ks, trials, eps, opt);
    }
    if (theory_out.empty()) {
      rep.write_csv(std::cout);
    } else {
      std::ofstream f(theory_out);
      require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + theory_out);
      rep.write_csv(f);
    }
  });

  // sparsify
  auto* sparsify_cmd = app.add_subcommand("sparsify", "Sparsify one test image and write PGM files");
  std::size_t index = 0;
  std::string prefix = "image";
  FrontEndArgs sp_fe{"coif1", 2, 0.035};
  sparsify_cmd->add_option("--index", index, "Test image index");
  sparsify_cmd->add_option("--prefix", prefix, "Output prefix for <prefix>_orig.pgm and <prefix>_sparse.pgm");
  add_frontend_flags(sparsify_cmd, sp_fe);
  sparsify_cmd->callback([&] {
    const Dataset ds = load_mnist_split(root(), "t10k");
    require(index < ds.size(), ErrorKind::IndexOutOfRange, "test index out of range");
    const auto fe = sp_fe.build();
    require(fe.has_value(), ErrorKind::InvalidArgument, "sparsify needs a front end");
    const Signal x = ds.image(index);
    SupportSet S;
    const Signal z = sparsify(*fe, x, S);
    write_pgm(prefix + "_orig.pgm", x, ds.rows, ds.cols);
    write_pgm(prefix + "_sparse.pgm", z, ds.rows, ds.cols);
    const SnrReport snr = snr_check(*fe, x, 0.0);
    std::printf("label=%d K=%zu relative_error=%.4f lambda=%.4g gamma=%.4g\n", ds.labels[index], fe->K,
                (z - x).norm() / std::max(1e-300, x.norm()), snr.lambda, snr.gamma);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: kind=%s message=\"%s\"\n", std::string(to_string(e.kind())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: kind=Internal message=\"%s\"\n", e.what());
    return 2;
  }
}
