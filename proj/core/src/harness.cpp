#include "sparsefront/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "parallel.hpp"
#include "sparsefront/error.hpp"

namespace sparsefront {

namespace {

namespace fs = std::filesystem;
using Idx = Eigen::Index;

constexpr const char* kVersion = "0.1.0";
// Attack chunk size in run_attack; shards are aligned to it so results do not
// depend on the worker count.
constexpr std::size_t kShardAlign = 32;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Typed access to one INI section; every key must be consumed.
class Section {
 public:
  Section(const boost::property_tree::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (tree_ == nullptr) return std::nullopt;
    auto child = tree_->get_child_optional(boost::property_tree::ptree::path_type(key, '\0'));
    if (!child) return std::nullopt;
    return child->data();
  }
  std::string str(const std::string& key, const std::string& fallback) {
    return raw(key).value_or(fallback);
  }
  double real(const std::string& key, double fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used == v->size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, where(key) + ": expected a number, got '" + *v + "'");
  }
  long long integer(const std::string& key, long long fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const long long i = std::stoll(*v, &used);
      if (used == v->size()) return i;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, where(key) + ": expected an integer, got '" + *v + "'");
  }
  bool boolean(const std::string& key, bool fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    fail(ErrorKind::InvalidArgument, where(key) + ": expected true or false, got '" + *v + "'");
  }
  void finish() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, child] : *tree_) {
      require(used_.count(key) > 0, ErrorKind::InvalidArgument, "unknown config key " + where(key));
    }
  }

 private:
  std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

  const boost::property_tree::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

bool is_linear_attack(const std::string& kind) {
  return kind == "semi-white" || kind == "white" || kind == "white-iter";
}

std::string modes_string(const std::vector<GradMode>& modes) {
  std::string s;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (i > 0) s += ',';
    s += to_string(modes[i]);
  }
  return s;
}

struct Arm {
  std::string name;
  std::optional<FrontEndConfig> frontend;
  const FrontEndConfig* fe() const { return frontend ? &*frontend : nullptr; }
};

struct Data {
  Dataset train;
  Dataset test;
};

Data load_data(const ExperimentConfig& cfg) {
  const fs::path root = cfg.task.data_root.empty() ? data_root() : cfg.task.data_root;
  Data d;
  d.train = load_mnist_split(root, "train");
  d.test = load_mnist_split(root, "t10k");
  if (cfg.task.pair) {
    d.train = select_pair(d.train, cfg.task.pair->first, cfg.task.pair->second);
    d.test = select_pair(d.test, cfg.task.pair->first, cfg.task.pair->second);
  }
  if (cfg.task.train_limit > 0) d.train = head(d.train, cfg.task.train_limit);
  const std::size_t offset = std::min(cfg.task.test_offset, d.test.size());
  std::size_t count = d.test.size() - offset;
  if (cfg.task.test_limit > 0) count = std::min(count, cfg.task.test_limit);
  require(count > 0, ErrorKind::EmptyInput, "test selection is empty");
  Dataset t;
  t.rows = d.test.rows;
  t.cols = d.test.cols;
  t.split = d.test.split;
  t.pair = d.test.pair;
  t.images = d.test.images.middleCols(static_cast<Idx>(offset), static_cast<Idx>(count));
  t.labels.assign(d.test.labels.begin() + static_cast<std::ptrdiff_t>(offset),
                  d.test.labels.begin() + static_cast<std::ptrdiff_t>(offset + count));
  d.test = std::move(t);
  return d;
}

std::string model_file(const ExperimentConfig& cfg, const Arm& arm, const Dataset& train) {
  const ModelSpec& m = cfg.model;
  std::ostringstream key;
  key << m.kind << '|' << m.hidden << '|' << train.checksum() << '|';
  if (m.kind == "linear") {
    key << m.linear.learning_rate << '|' << m.linear.epochs << '|' << m.linear.regularization << '|'
        << m.linear.seed;
  } else {
    key << m.hyper.epochs << '|' << m.hyper.batch_size << '|' << m.hyper.learning_rate << '|'
        << m.hyper.momentum << '|' << m.hyper.lr_decay << '|' << m.hyper.weight_decay << '|'
        << m.hyper.seed;
  }
  std::string name = m.kind;
  if (m.kind == "mlp") name += "-h" + std::to_string(m.hidden);
  name += cfg.task.pair ? "-p" + std::to_string(cfg.task.pair->first) + "v" + std::to_string(cfg.task.pair->second)
                        : std::string("-mc");
  const bool sparse = arm.frontend && cfg.retrain;
  name += "-" + (sparse ? cfg.frontend.tag() : std::string("none"));
  name += "-" + hex64(fnv1a(key.str())).substr(8);
  return name + (m.kind == "linear" ? ".sflm" : ".sfnn");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

struct ImageRecord {
  int label = 0;
  int predicted = 0;
  bool success = false;
  double linf = 0.0;
  std::optional<std::size_t> overlap;
  std::optional<double> flip_fraction;
  double margin = 0.0;
};

std::string per_image_csv(const std::vector<ImageRecord>& recs, std::size_t offset) {
  std::ostringstream out;
  out << "index,true,pred,success,linf,support_overlap\n";
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const ImageRecord& r = recs[i];
    out << offset + i << ',' << r.label << ',' << r.predicted << ',' << (r.success ? 1 : 0) << ','
        << fmt(r.linf) << ',';
    if (r.overlap) out << *r.overlap;
    out << '\n';
  }
  return out.str();
}

std::size_t count_correct(const std::vector<ImageRecord>& recs) {
  return static_cast<std::size_t>(std::count_if(recs.begin(), recs.end(), [](const ImageRecord& r) {
    return !r.success;
  }));
}

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, const ProgressFn& progress) : cfg_(cfg), progress_(progress) {}

  Report run() {
    report_.name = cfg_.name;
    report_.config_hash = cfg_.hash();
    fs::create_directories(cfg_.output_dir);
    try {
      execute();
      report_.complete = true;
    } catch (const std::exception& e) {
      flush("failed", e.what());
      throw;
    }
    flush("complete", "");
    return report_;
  }

 private:
  void log(const std::string& msg) const {
    if (progress_) progress_(msg);
  }

  void execute() {
    data_ = load_data(cfg_);
    provenance_.emplace_back("data.train_checksum", hex64(data_.train.checksum()));
    provenance_.emplace_back("data.test_checksum", hex64(data_.test.checksum()));
    provenance_.emplace_back("data.test_count", std::to_string(data_.test.size()));
    log("loaded " + std::to_string(data_.train.size()) + " training and " +
        std::to_string(data_.test.size()) + " test images");

    std::vector<Arm> arms;
    if (cfg_.compare_undefended || !cfg_.frontend.enabled()) arms.push_back({"none", std::nullopt});
    if (cfg_.frontend.enabled()) {
      arms.push_back({"defended", cfg_.frontend.build(data_.train.rows, data_.train.cols)});
    }
    for (const Arm& arm : arms) run_arm(arm);
  }

  void run_arm(const Arm& arm) {
    const fs::path dir = cfg_.model.checkpoint_dir;
    fs::create_directories(dir);
    const fs::path ckpt = dir / model_file(cfg_, arm, data_.train);
    provenance_.emplace_back("checkpoint." + arm.name, ckpt.string());
    report_.checkpoints[arm.name] = ckpt;
    const FrontEndConfig* train_fe = cfg_.retrain ? arm.fe() : nullptr;

    if (cfg_.model.kind == "linear") {
      LinearModel model;
      if (fs::exists(ckpt)) {
        model = load_linear(ckpt);
        log("[" + arm.name + "] loaded " + ckpt.string());
      } else {
        model = train_linear(data_.train, cfg_.model.linear, train_fe).model;
        save_linear(model, ckpt);
        log("[" + arm.name + "] trained linear model -> " + ckpt.string());
      }
      clean_row(arm, [&](const Signal& x) { return model.predict_class(x); });
      for (const AttackSpec& a : cfg_.attacks) linear_attack(arm, model, a);
      return;
    }

    Network net = [&] {
      if (fs::exists(ckpt)) {
        log("[" + arm.name + "] loaded " + ckpt.string());
        return load_network(ckpt);
      }
      NetworkArch arch = cfg_.model.kind == "cnn4"
                             ? NetworkArch::cnn4()
                             : NetworkArch::mlp(cfg_.model.hidden, cfg_.task.pair ? 2 : 10);
      log("[" + arm.name + "] training " + cfg_.model.kind + " for " +
          std::to_string(cfg_.model.hyper.epochs) + " epochs");
      NetworkTrainResult r = train_network(arch, data_.train, train_fe, cfg_.model.hyper,
                                           [&](const EpochStats& s) {
                                             log("  epoch " + std::to_string(s.epoch) + " loss " +
                                                 fmt(s.loss) + " acc " + fmt_fixed(s.accuracy, 2) +
                                                 " (" + fmt_fixed(s.seconds, 1) + "s)");
                                           });
      save_network(r.network, ckpt);
      return std::move(r.network);
    }();
    clean_row(arm, [&](const Signal& x) { return net.predict(x); });
    for (const AttackSpec& a : cfg_.attacks) network_attack(arm, net, a);
  }

  Signal defend(const Arm& arm, const Signal& x) const {
    return arm.frontend ? sparsify(*arm.frontend, x) : x;
  }

  template <class Predict>
  void clean_row(const Arm& arm, Predict&& predict) {
    std::vector<ImageRecord> recs(data_.test.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      recs[i].label = data_.test.labels[i];
      recs[i].predicted = predict(defend(arm, data_.test.image(i)));
      recs[i].success = recs[i].predicted != recs[i].label;
    }
    add_row(arm.name, "clean", "none", recs);
  }

  void add_row(const std::string& arm, const std::string& attack, const std::string& mode,
               const std::vector<ImageRecord>& recs) {
    AccuracyRow row;
    row.arm = arm;
    row.attack = attack;
    row.grad_mode = mode;
    row.total = recs.size();
    row.correct = count_correct(recs);
    row.accuracy = 100.0 * static_cast<double>(row.correct) / static_cast<double>(row.total);
    row.per_image_csv = arm + "_" + attack + "_" + mode + ".csv";
    write_text(cfg_.output_dir / row.per_image_csv, per_image_csv(recs, cfg_.task.test_offset));
    log("[" + arm + "] " + attack + " (" + mode + "): " + fmt_fixed(row.accuracy, 2) + "%");
    report_.rows.push_back(std::move(row));
  }

  void add_min_row(const std::string& arm, const std::string& attack, std::size_t first_row) {
    const auto begin = report_.rows.begin() + static_cast<std::ptrdiff_t>(first_row);
    const auto it = std::min_element(begin, report_.rows.end(), [](const AccuracyRow& a, const AccuracyRow& b) {
      return a.accuracy < b.accuracy;
    });
    AccuracyRow row = *it;
    row.arm = arm;
    row.attack = attack;
    row.grad_mode = "min";
    report_.rows.push_back(std::move(row));
  }

  void histogram(const std::string& name, const std::vector<double>& samples) {
    if (samples.empty()) return;
    const Histogram h = emit_histogram(samples, cfg_.histogram_bins, true);
    std::ostringstream out;
    write_histogram_csv(h, out);
    write_text(cfg_.output_dir / name, out.str());
    report_.histograms.push_back(name);
  }

  void linear_attack(const Arm& arm, const LinearModel& model, const AttackSpec& a) {
    std::vector<ImageRecord> recs(data_.test.size());
    std::vector<double> overlaps;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const Signal x = data_.test.image(i);
      const int t = data_.test.labels[i];
      Signal e;
      if (a.kind == "semi-white" || !arm.frontend) {
        e = attack_linear_baseline(model, x, t, a.cfg.eps);
      } else if (a.kind == "white") {
        e = attack_linear_white(model, *arm.frontend, x, t, a.cfg.eps);
      } else {
        e = attack_linear_white_iterated(model, *arm.frontend, x, t, a.cfg.eps, a.linear_iters);
      }
      const Signal xa = a.linear_clip ? Signal((x + e).cwiseMax(0.0).cwiseMin(1.0)) : Signal(x + e);
      ImageRecord& r = recs[i];
      r.label = t;
      r.predicted = model.predict_class(defend(arm, xa));
      r.success = r.predicted != t;
      r.linf = (xa - x).lpNorm<Eigen::Infinity>();
      if (arm.frontend) {
        r.overlap = support_overlap(*arm.frontend, x, xa);
        overlaps.push_back(static_cast<double>(*r.overlap));
      }
    }
    add_row(arm.name, a.name, "worst", recs);
    histogram(arm.name + "_" + a.name + "_support_overlap.csv", overlaps);
  }

  std::vector<AdversarialResult> attack_all(AttackKind kind, const Network& net, const FrontEndConfig* fe,
                                            const AttackConfig& ac) const {
    const std::size_t n = data_.test.size();
    const Eigen::MatrixXd X = data_.test.images.cast<double>();
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = cfg_.task.test_offset + i;
    const std::span<const int> labels(data_.test.labels);

    const std::size_t workers = std::max(1u, cfg_.workers);
    std::size_t shard = (n + workers - 1) / workers;
    shard = (shard + kShardAlign - 1) / kShardAlign * kShardAlign;
    const std::size_t shards = (n + shard - 1) / shard;
    std::vector<std::vector<AdversarialResult>> parts(shards);
    detail::parallel_for(shards, static_cast<unsigned>(workers), [&](std::size_t s) {
      const std::size_t begin = s * shard;
      const std::size_t count = std::min(shard, n - begin);
      parts[s] = run_attack(kind, net, fe, X.middleCols(static_cast<Idx>(begin), static_cast<Idx>(count)),
                            labels.subspan(begin, count), std::span<const std::uint64_t>(ids).subspan(begin, count),
                            ac);
    });
    std::vector<AdversarialResult> all;
    all.reserve(n);
    for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(all));
    return all;
  }

  void network_attack(const Arm& arm, const Network& net, const AttackSpec& a) {
    const AttackKind kind = parse_attack_kind(a.kind);
    // Without a front end all gradient modes coincide.
    const std::vector<GradMode> modes =
        arm.frontend ? a.modes : std::vector<GradMode>{GradMode::bpda_identity};
    const std::size_t n = data_.test.size();
    const std::size_t first_row = report_.rows.size();
    std::vector<ImageRecord> worst(n);
    for (std::size_t i = 0; i < n; ++i) {
      worst[i].label = data_.test.labels[i];
      worst[i].margin = -std::numeric_limits<double>::infinity();
    }

    for (GradMode mode : modes) {
      AttackConfig ac = a.cfg;
      ac.grad.mode = mode;
      const std::vector<AdversarialResult> results = attack_all(kind, net, arm.fe(), ac);
      std::vector<ImageRecord> recs(n);
      for (std::size_t i = 0; i < n; ++i) {
        const AdversarialResult& res = results[i];
        ImageRecord& r = recs[i];
        r.label = data_.test.labels[i];
        r.predicted = res.predicted;
        r.success = res.success;
        r.margin = res.margin;
        r.linf = res.perturbation.lpNorm<Eigen::Infinity>();
        const Signal x = data_.test.image(i);
        if (arm.frontend) r.overlap = support_overlap(*arm.frontend, x, res.adversarial);
        if (cfg_.flip_statistics) {
          const Signal zx = defend(arm, x);
          r.flip_fraction = flip_count(net, zx, defend(arm, res.adversarial) - zx).fraction();
        }
        ImageRecord& w = worst[i];
        if ((r.success && !w.success) || (r.success == w.success && r.margin > w.margin)) w = r;
      }
      add_row(arm.name, a.name, std::string(to_string(mode)), recs);
    }
    if (modes.size() > 1) add_min_row(arm.name, a.name, first_row);
    add_row(arm.name, a.name, "worst", worst);

    std::vector<double> overlaps;
    std::vector<double> flips;
    for (const ImageRecord& r : worst) {
      if (r.overlap) overlaps.push_back(static_cast<double>(*r.overlap));
      if (r.flip_fraction) flips.push_back(*r.flip_fraction);
    }
    histogram(arm.name + "_" + a.name + "_support_overlap.csv", overlaps);
    histogram(arm.name + "_" + a.name + "_flip_fraction.csv", flips);
  }

  void flush(const std::string& status, const std::string& error) {
    std::ostringstream csv;
    report_.write_csv(csv);
    write_text(cfg_.output_dir / "report.csv", csv.str());

    std::ostringstream p;
    p << "name=" << cfg_.name << '\n';
    p << "status=" << status << '\n';
    if (!error.empty()) p << "error=" << error << '\n';
    p << "version=" << kVersion << '\n';
    p << "config_hash=" << hex64(report_.config_hash) << '\n';
    p << "seed.experiment=" << cfg_.seed << '\n';
    p << "seed.network=" << cfg_.model.hyper.seed << '\n';
    p << "seed.linear=" << cfg_.model.linear.seed << '\n';
    for (const AttackSpec& a : cfg_.attacks) p << "seed.attack." << a.name << '=' << a.cfg.seed << '\n';
    for (const auto& [k, v] : provenance_) p << k << '=' << v << '\n';
    p << "\n[config]\n" << cfg_.canonical();
    write_text(cfg_.output_dir / "provenance.txt", p.str());
  }

  const ExperimentConfig& cfg_;
  const ProgressFn& progress_;
  Data data_;
  Report report_;
  std::vector<std::pair<std::string, std::string>> provenance_;
};

}  // namespace

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

FrontEndConfig FrontEndSpec::build(std::size_t rows, std::size_t cols) const {
  require(enabled(), ErrorKind::InvalidArgument, "front end is disabled");
  return FrontEndConfig::from_rho(make_basis(parse_wavelet_family(family), levels, SignalShape::grid(rows, cols)),
                                  rho);
}

std::string FrontEndSpec::tag() const {
  if (!enabled()) return "none";
  return family + "-L" + std::to_string(levels) + "-rho" + fmt(rho);
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  // Accept '#' comments alongside the ';' comments the INI reader knows.
  std::ostringstream filtered;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    filtered << line << '\n';
  }
  boost::property_tree::ptree pt;
  try {
    std::istringstream text(filtered.str());
    boost::property_tree::ini_parser::read_ini(text, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::InvalidArgument, std::string("config: ") + e.what());
  }

  auto section_tree = [&](const std::string& name) -> const boost::property_tree::ptree* {
    auto it = pt.find(name);
    return it == pt.not_found() ? nullptr : &it->second;
  };

  ExperimentConfig cfg;
  {
    Section s(section_tree("experiment"), "experiment");
    cfg.name = s.str("name", cfg.name);
    cfg.seed = static_cast<std::uint64_t>(s.integer("seed", 1));
    cfg.output_dir = s.str("output", cfg.output_dir.string());
    cfg.workers = static_cast<unsigned>(s.integer("workers", 1));
    cfg.compare_undefended = s.boolean("compare_undefended", true);
    cfg.retrain = s.boolean("retrain", true);
    cfg.histogram_bins = static_cast<int>(s.integer("histogram_bins", cfg.histogram_bins));
    cfg.flip_statistics = s.boolean("flip_statistics", false);
    s.finish();
  }
  {
    Section s(section_tree("data"), "data");
    cfg.task.data_root = s.str("root", "");
    const std::string pair = s.str("pair", "");
    if (!pair.empty()) {
      const auto digits = split_list(pair);
      require(digits.size() == 2, ErrorKind::InvalidArgument, "[data] pair must be 'd1,d2'");
      cfg.task.pair = std::make_pair(std::stoi(digits[0]), std::stoi(digits[1]));
    }
    cfg.task.train_limit = static_cast<std::size_t>(s.integer("train_limit", 0));
    cfg.task.test_offset = static_cast<std::size_t>(s.integer("test_offset", 0));
    cfg.task.test_limit = static_cast<std::size_t>(s.integer("test_limit", 0));
    s.finish();
  }
  {
    Section s(section_tree("model"), "model");
    ModelSpec& m = cfg.model;
    m.kind = s.str("kind", m.kind);
    m.hidden = static_cast<int>(s.integer("hidden", m.hidden));
    m.checkpoint_dir = s.str("checkpoint_dir", m.checkpoint_dir.string());
    const auto model_seed = static_cast<std::uint64_t>(s.integer("seed", static_cast<long long>(cfg.seed)));
    m.hyper.seed = model_seed;
    m.linear.seed = model_seed;
    m.hyper.epochs = static_cast<int>(s.integer("epochs", m.hyper.epochs));
    m.hyper.batch_size = static_cast<int>(s.integer("batch", m.hyper.batch_size));
    m.hyper.learning_rate = s.real("lr", m.hyper.learning_rate);
    m.hyper.momentum = s.real("momentum", m.hyper.momentum);
    m.hyper.lr_decay = s.real("lr_decay", m.hyper.lr_decay);
    m.hyper.weight_decay = s.real("weight_decay", m.hyper.weight_decay);
    m.linear.learning_rate = s.real("linear_lr", m.linear.learning_rate);
    m.linear.epochs = static_cast<int>(s.integer("linear_epochs", m.linear.epochs));
    m.linear.regularization = s.real("regularization", m.linear.regularization);
    s.finish();
  }
  {
    Section s(section_tree("frontend"), "frontend");
    cfg.frontend.family = s.str("family", cfg.frontend.family);
    cfg.frontend.levels = static_cast<int>(s.integer("levels", cfg.frontend.levels));
    cfg.frontend.rho = s.real("rho", cfg.frontend.rho);
    s.finish();
  }
  for (const auto& [name, tree] : pt) {
    if (name.rfind("attack.", 0) != 0) {
      require(name == "experiment" || name == "data" || name == "model" || name == "frontend",
              ErrorKind::InvalidArgument, "unknown config section [" + name + "]");
      continue;
    }
    Section s(&tree, name);
    AttackSpec a;
    a.name = name.substr(7);
    require(!a.name.empty(), ErrorKind::InvalidArgument, "attack sections need a name");
    a.kind = s.str("kind", a.name);
    AttackConfig& c = a.cfg;
    c.eps = s.real("eps", c.eps);
    c.delta = s.real("delta", c.delta);
    c.steps = static_cast<int>(s.integer("steps", c.steps));
    c.restarts = static_cast<int>(s.integer("restarts", c.restarts));
    c.momentum_decay = s.real("momentum", c.momentum_decay);
    c.seed = static_cast<std::uint64_t>(s.integer("seed", static_cast<long long>(cfg.seed)));
    c.random_init = s.boolean("random_init", c.random_init);
    c.clamp_each_step = s.boolean("clamp_each_step", c.clamp_each_step);
    c.stop_on_success = s.boolean("stop_on_success", c.stop_on_success);
    c.keep_best = s.boolean("keep_best", c.keep_best);
    c.grad.refine_steps = static_cast<int>(s.integer("refine_steps", c.grad.refine_steps));
    c.grad.probe_budget = s.real("probe", c.grad.probe_budget);
    c.grad.exact = s.boolean("exact", c.grad.exact);
    const std::string modes = s.str("grad_modes", "bpda1");
    a.modes.clear();
    for (const std::string& m : split_list(modes)) a.modes.push_back(parse_grad_mode(m));
    a.linear_iters = static_cast<int>(s.integer("iters", a.linear_iters));
    a.linear_clip = s.boolean("clip", a.linear_clip);
    s.finish();
    cfg.attacks.push_back(std::move(a));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + path.string());
  return parse(in);
}

void ExperimentConfig::validate() const {
  require(model.kind == "cnn4" || model.kind == "mlp" || model.kind == "linear", ErrorKind::InvalidArgument,
          "model kind must be cnn4, mlp or linear");
  require(model.kind != "linear" || task.pair.has_value(), ErrorKind::InvalidArgument,
          "linear models need a binary digit pair");
  require(workers >= 1, ErrorKind::InvalidArgument, "workers must be at least 1");
  require(histogram_bins >= 1, ErrorKind::InvalidArgument, "histogram bins must be at least 1");
  if (frontend.enabled()) {
    parse_wavelet_family(frontend.family);
    require(frontend.rho > 0.0 && frontend.rho <= 1.0 && frontend.rho * 784.0 >= 1.0,
            ErrorKind::InvalidArgument, "rho must satisfy rho * 784 >= 1 and rho <= 1");
  }
  std::set<std::string> names;
  for (const AttackSpec& a : attacks) {
    require(names.insert(a.name).second, ErrorKind::InvalidArgument, "duplicate attack " + a.name);
    require(!a.modes.empty(), ErrorKind::InvalidArgument, "attack " + a.name + " has no gradient modes");
    if (model.kind == "linear") {
      require(is_linear_attack(a.kind), ErrorKind::InvalidArgument,
              "linear models support semi-white, white and white-iter attacks, not " + a.kind);
      require(a.cfg.eps >= 0.0 && a.linear_iters >= 1, ErrorKind::InvalidArgument,
              "invalid linear attack " + a.name);
    } else {
      a.cfg.validate(parse_attack_kind(a.kind));
    }
  }
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream o;
  o << "experiment.name=" << name << '\n'
    << "experiment.seed=" << seed << '\n'
    << "experiment.compare_undefended=" << compare_undefended << '\n'
    << "experiment.retrain=" << retrain << '\n'
    << "experiment.histogram_bins=" << histogram_bins << '\n'
    << "experiment.flip_statistics=" << flip_statistics << '\n'
    << "data.pair=" << (task.pair ? std::to_string(task.pair->first) + "," + std::to_string(task.pair->second) : "")
    << '\n'
    << "data.train_limit=" << task.train_limit << '\n'
    << "data.test_offset=" << task.test_offset << '\n'
    << "data.test_limit=" << task.test_limit << '\n'
    << "model.kind=" << model.kind << '\n'
    << "model.hidden=" << model.hidden << '\n'
    << "model.seed=" << model.hyper.seed << '\n'
    << "model.epochs=" << model.hyper.epochs << '\n'
    << "model.batch=" << model.hyper.batch_size << '\n'
    << "model.lr=" << fmt(model.hyper.learning_rate) << '\n'
    << "model.momentum=" << fmt(model.hyper.momentum) << '\n'
    << "model.lr_decay=" << fmt(model.hyper.lr_decay) << '\n'
    << "model.weight_decay=" << fmt(model.hyper.weight_decay) << '\n'
    << "model.linear_lr=" << fmt(model.linear.learning_rate) << '\n'
    << "model.linear_epochs=" << model.linear.epochs << '\n'
    << "model.regularization=" << fmt(model.linear.regularization) << '\n'
    << "frontend.family=" << frontend.family << '\n'
    << "frontend.levels=" << frontend.levels << '\n'
    << "frontend.rho=" << fmt(frontend.rho) << '\n';
  for (const AttackSpec& a : attacks) {
    const std::string p = "attack." + a.name + ".";
    o << p << "kind=" << a.kind << '\n'
      << p << "eps=" << fmt(a.cfg.eps) << '\n'
      << p << "delta=" << fmt(a.cfg.delta) << '\n'
      << p << "steps=" << a.cfg.steps << '\n'
      << p << "restarts=" << a.cfg.restarts << '\n'
      << p << "momentum=" << fmt(a.cfg.momentum_decay) << '\n'
      << p << "seed=" << a.cfg.seed << '\n'
      << p << "random_init=" << a.cfg.random_init << '\n'
      << p << "clamp_each_step=" << a.cfg.clamp_each_step << '\n'
      << p << "stop_on_success=" << a.cfg.stop_on_success << '\n'
      << p << "keep_best=" << a.cfg.keep_best << '\n'
      << p << "refine_steps=" << a.cfg.grad.refine_steps << '\n'
      << p << "probe=" << fmt(a.cfg.grad.probe_budget) << '\n'
      << p << "exact=" << a.cfg.grad.exact << '\n'
      << p << "grad_modes=" << modes_string(a.modes) << '\n'
      << p << "iters=" << a.linear_iters << '\n'
      << p << "clip=" << a.linear_clip << '\n';
  }
  return o.str();
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical()); }

double Report::accuracy(const std::string& arm, const std::string& attack, const std::string& grad_mode) const {
  for (const AccuracyRow& r : rows) {
    // Clean accuracy has a single row whatever mode is asked for.
    if (r.arm == arm && r.attack == attack && (r.grad_mode == grad_mode || attack == "clean")) return r.accuracy;
  }
  fail(ErrorKind::InvalidArgument, "no report cell " + arm + "/" + attack + "/" + grad_mode);
}

void Report::write_csv(std::ostream& out) const {
  out << "arm,attack,grad_mode,correct,total,accuracy,per_image_csv,config_hash\n";
  for (const AccuracyRow& r : rows) {
    out << r.arm << ',' << r.attack << ',' << r.grad_mode << ',' << r.correct << ',' << r.total << ','
        << fmt_fixed(r.accuracy, 4) << ',' << r.per_image_csv << ',' << hex64(config_hash) << '\n';
  }
}

Report run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  return Runner(cfg, progress).run();
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "rho") return SweepAxis::rho;
  if (name == "eps") return SweepAxis::eps;
  fail(ErrorKind::InvalidArgument, "sweep axis must be rho or eps");
}

std::string_view to_string(SweepAxis axis) noexcept { return axis == SweepAxis::rho ? "rho" : "eps"; }

SweepResult sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& grid,
                  const ProgressFn& progress) {
  require(!grid.empty(), ErrorKind::EmptyInput, "sweep grid is empty");
  require(axis != SweepAxis::rho || cfg.frontend.enabled(), ErrorKind::InvalidArgument,
          "a rho sweep needs a front end");
  SweepResult result;
  result.axis = axis;
  const std::string axis_name(to_string(axis));
  for (double v : grid) {
    ExperimentConfig point = cfg;
    if (axis == SweepAxis::rho) {
      point.frontend.rho = v;
      // The undefended arm does not depend on rho; evaluate it once.
      point.compare_undefended = cfg.compare_undefended && result.reports.empty();
    } else {
      for (AttackSpec& a : point.attacks) {
        a.cfg.eps = v;
        if (v > 0.0) a.cfg.delta = std::min(a.cfg.delta, v);
      }
    }
    point.output_dir = cfg.output_dir / (axis_name + "-" + fmt(v));
    if (progress) progress(axis_name + " = " + fmt(v));
    result.values.push_back(v);
    result.reports.push_back(run_experiment(point, progress));
  }

  std::ostringstream csv;
  csv << axis_name << ",arm,attack,accuracy\n";
  std::map<std::string, ChartSeries> series;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < result.values.size(); ++i) {
    for (const AccuracyRow& r : result.reports[i].rows) {
      if (r.grad_mode != "worst" && r.attack != "clean") continue;
      csv << fmt(result.values[i]) << ',' << r.arm << ',' << r.attack << ',' << fmt_fixed(r.accuracy, 4) << '\n';
      const std::string label = r.arm + " " + r.attack;
      if (!series.count(label)) order.push_back(label);
      ChartSeries& s = series[label];
      s.label = label;
      s.x.push_back(result.values[i]);
      s.y.push_back(r.accuracy);
    }
  }
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "sweep.csv", csv.str());
  std::vector<ChartSeries> ordered;
  for (const auto& label : order) ordered.push_back(series[label]);
  std::ostringstream svg;
  write_line_chart_svg(svg, cfg.name + ": accuracy vs " + axis_name, axis_name, "accuracy (%)", ordered);
  write_text(cfg.output_dir / "sweep.svg", svg.str());
  return result;
}

Histogram emit_histogram(const std::vector<double>& samples, int bins, bool density) {
  require(bins >= 1, ErrorKind::InvalidArgument, "histogram needs at least one bin");
  require(!samples.empty(), ErrorKind::EmptyInput, "histogram of no samples");
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  double lo = *mn;
  double hi = *mx;
  require(std::isfinite(lo) && std::isfinite(hi), ErrorKind::InvalidArgument, "non-finite histogram sample");
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.lo = lo;
  h.width = (hi - lo) / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double s : samples) {
    auto b = static_cast<long long>(std::floor((s - lo) / h.width));
    b = std::clamp<long long>(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  const double n = static_cast<double>(samples.size());
  h.heights.resize(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    h.heights[i] = density ? static_cast<double>(h.counts[i]) / (n * h.width) : static_cast<double>(h.counts[i]);
  }
  return h;
}

void write_histogram_csv(const Histogram& h, std::ostream& out) {
  out << "bin_lo,bin_hi,count,height\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double a = h.lo + h.width * static_cast<double>(i);
    out << fmt(a) << ',' << fmt(a + h.width) << ',' << h.counts[i] << ',' << fmt(h.heights[i]) << '\n';
  }
}

namespace {

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_line_chart_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<ChartSeries>& series) {
  constexpr double W = 720, H = 440, left = 70, right = 200, top = 40, bottom = 60;
  const double pw = W - left - right;
  const double ph = H - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = 0.0, y1 = 100.0;
  for (const ChartSeries& s : series) {
    for (double x : s.x) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
    for (double y : s.y) {
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0.0;
    x1 = 1.0;
  }
  if (x1 == x0) x1 = x0 + 1.0;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    out << "<line x1=\"" << px(xv) << "\" y1=\"" << top + ph << "\" x2=\"" << px(xv) << "\" y2=\"" << top + ph + 5
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fmt(xv)
        << "</text>\n";
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << left + pw << "\" y2=\"" << py(yv)
        << "\" stroke=\"#dddddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
      << "</text>\n";
  out << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << top + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % std::size(palette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      out << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    out << "\"/>\n";
    const double ly = top + 14.0 + 18.0 * static_cast<double>(s);
    out << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\""
        << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << xml_escape(series[s].label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace sparsefront
