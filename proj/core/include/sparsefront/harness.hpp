#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sparsefront/attacks.hpp"
#include "sparsefront/linear.hpp"
#include "sparsefront/network.hpp"

namespace sparsefront {

struct FrontEndSpec {
  /// Wavelet family name, or "none".
  std::string family = "none";
  int levels = 2;
  double rho = 0.035;

  bool enabled() const { return family != "none"; }
  FrontEndConfig build(std::size_t rows, std::size_t cols) const;
  /// "coif1-L2-rho0.035" or "none".
  std::string tag() const;
};

struct ModelSpec {
  /// cnn4, mlp or linear.
  std::string kind = "cnn4";
  int hidden = 10;
  NetworkHyper hyper;
  LinearHyper linear;
  /// Trained models are cached here and reused when present.
  std::filesystem::path checkpoint_dir = "checkpoints";
};

struct TaskSpec {
  /// Binary digit pair (negative, positive); multiclass when unset.
  std::optional<std::pair<int, int>> pair;
  std::size_t train_limit = 0;  // 0 keeps every training image
  std::size_t test_offset = 0;
  std::size_t test_limit = 0;  // 0 keeps every test image
  std::filesystem::path data_root;
};

/// One attack row. Network attacks use `cfg` and run once per gradient mode
/// in `modes` against the defended pipeline. Linear attacks are semi-white,
/// white and white-iter.
struct AttackSpec {
  std::string name;
  std::string kind;
  AttackConfig cfg;
  std::vector<GradMode> modes{GradMode::bpda_identity};
  int linear_iters = 10;
  /// Linear attacks only: clamp x + e to [0, 1] before classifying.
  bool linear_clip = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  TaskSpec task;
  ModelSpec model;
  FrontEndSpec frontend;
  /// Also evaluate a model trained and attacked without the front end.
  bool compare_undefended = true;
  /// Retrain the defended model on sparsified images.
  bool retrain = true;
  std::vector<AttackSpec> attacks;
  std::filesystem::path output_dir = "results";
  unsigned workers = 1;
  int histogram_bins = 20;
  /// Switch-flip statistics per attacked image (network models only).
  bool flip_statistics = false;

  /// INI text: [section] headers and key = value lines, ';' or '#' comments.
  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Canonical key = value listing used for the config hash.
  std::string canonical() const;
  std::uint64_t hash() const;
  void validate() const;
};

struct AccuracyRow {
  std::string arm;     // none or defended
  std::string attack;  // attack name, or "clean"
  /// A gradient mode, "worst" (per-image worst case over modes) or "min"
  /// (the least accurate single mode).
  std::string grad_mode;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::string per_image_csv;
};

struct Report {
  std::string name;
  std::uint64_t config_hash = 0;
  std::vector<AccuracyRow> rows;
  std::vector<std::string> histograms;
  /// Model file used by each arm.
  std::map<std::string, std::filesystem::path> checkpoints;
  bool complete = false;

  /// Throws InvalidArgument when the cell does not exist.
  double accuracy(const std::string& arm, const std::string& attack,
                  const std::string& grad_mode = "worst") const;
  void write_csv(std::ostream& out) const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains or loads the model(s), runs every attack and writes report.csv,
/// per-image CSVs, histograms and provenance.txt into cfg.output_dir. On
/// failure the partial report is flushed with status=failed and the error is
/// rethrown.
Report run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

enum class SweepAxis { rho, eps };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis axis) noexcept;

struct SweepResult {
  SweepAxis axis = SweepAxis::eps;
  std::vector<double> values;
  std::vector<Report> reports;
};

/// One experiment per grid value (subdirectory per point), plus sweep.csv
/// (axis value, arm, attack, accuracy) and sweep.svg in cfg.output_dir.
SweepResult sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& grid,
                  const ProgressFn& progress = {});

struct Histogram {
  double lo = 0.0;
  double width = 1.0;
  std::vector<std::size_t> counts;
  std::vector<double> heights;
};

/// Equal-width bins over [min, max]; heights are densities when `density`
/// is set (sum of height * width is 1), raw counts otherwise. Constant
/// samples use a unit interval centred on the value.
Histogram emit_histogram(const std::vector<double>& samples, int bins, bool density);
void write_histogram_csv(const Histogram& h, std::ostream& out);

struct ChartSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static SVG line chart.
void write_line_chart_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<ChartSeries>& series);

/// FNV-1a 64-bit.
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace sparsefront
