#include "sparsefront/linear.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "sparsefront/error.hpp"
#include "sparsefront/rng.hpp"

namespace sparsefront {

namespace {

constexpr char kLinearMagic[4] = {'S', 'F', 'L', 'M'};
constexpr std::uint32_t kLinearVersion = 1;

}  // namespace

Signal sign_of(const Signal& v) {
  return v.unaryExpr([](double a) { return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0); });
}

LinearTrainResult train_linear(const Dataset& train_set, const LinearHyper& hyper,
                               const FrontEndConfig* frontend) {
  const std::size_t n = train_set.size();
  const std::size_t positives =
      static_cast<std::size_t>(std::count(train_set.labels.begin(), train_set.labels.end(), 1));
  require(positives > 0 && positives < n, ErrorKind::EmptyClass,
          "linear training needs examples of both classes");
  require(hyper.epochs >= 1 && hyper.learning_rate > 0.0, ErrorKind::InvalidArgument,
          "invalid linear hyperparameters");

  const auto dim = static_cast<Eigen::Index>(train_set.pixels());
  Eigen::MatrixXd X(dim, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    Signal x = train_set.image(i);
    X.col(static_cast<Eigen::Index>(i)) = frontend != nullptr ? sparsify(*frontend, x) : x;
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = train_set.labels[i] == 1 ? 1.0 : -1.0;

  LinearModel model;
  model.w = Eigen::VectorXd::Zero(dim);
  if (train_set.pair) {
    model.label_neg = static_cast<std::uint8_t>(train_set.pair->first);
    model.label_pos = static_cast<std::uint8_t>(train_set.pair->second);
  }

  Rng rng = make_rng(hyper.seed, streams::kLinearTraining);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double lr = hyper.learning_rate;
  const double reg = hyper.regularization;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    for (std::size_t i : order) {
      const auto col = static_cast<Eigen::Index>(i);
      const double margin = y[i] * (model.w.dot(X.col(col)) + model.b);
      model.w *= (1.0 - lr * reg);
      if (margin < 1.0) {
        model.w.noalias() += (lr * y[i]) * X.col(col);
        model.b += lr * y[i];
        loss += 1.0 - margin;
      }
    }
    loss = loss / static_cast<double>(n) + 0.5 * reg * model.w.squaredNorm();
    require(std::isfinite(loss), ErrorKind::NonFiniteLoss,
            "hinge loss became non-finite in epoch " + std::to_string(epoch));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = model.w.dot(X.col(static_cast<Eigen::Index>(i))) + model.b;
    if ((s > 0.0 ? 1 : 0) == train_set.labels[i]) ++correct;
  }
  return {std::move(model), 100.0 * static_cast<double>(correct) / static_cast<double>(n)};
}

double linear_accuracy(const LinearModel& model, const Dataset& ds, const FrontEndConfig* frontend) {
  require(ds.size() > 0, ErrorKind::EmptyInput, "accuracy over an empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Signal x = ds.image(i);
    if (frontend != nullptr) x = sparsify(*frontend, x);
    if (model.predict_class(x) == ds.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

double attack_direction(int true_class) { return true_class == 0 ? 1.0 : -1.0; }

Signal attack_linear_baseline(const LinearModel& model, const Signal& x, int true_class, double eps) {
  require(eps >= 0.0, ErrorKind::InvalidArgument, "attack budget must be non-negative");
  require(x.size() == model.w.size(), ErrorKind::ShapeMismatch, "input does not match model");
  return (attack_direction(true_class) * eps) * sign_of(model.w);
}

Signal attack_linear_white(const LinearModel& model, const FrontEndConfig& cfg, const Signal& x,
                           int true_class, double eps) {
  require(eps >= 0.0, ErrorKind::InvalidArgument, "attack budget must be non-negative");
  const Signal projected = project(cfg.basis, support(cfg, x), model.w);
  return (attack_direction(true_class) * eps) * sign_of(projected);
}

Signal attack_linear_white_iterated(const LinearModel& model, const FrontEndConfig& cfg,
                                    const Signal& x, int true_class, double eps, int iters) {
  require(iters >= 1, ErrorKind::InvalidArgument, "iterated attack needs iters >= 1");
  Signal e = attack_linear_baseline(model, x, true_class, eps);
  const double scale = attack_direction(true_class) * eps;
  for (int i = 0; i < iters; ++i) {
    e = scale * sign_of(project(cfg.basis, support(cfg, x + e), model.w));
  }
  return e;
}

DistortionReport distortions(const LinearModel& model, const FrontEndConfig& cfg, const Signal& x,
                             double eps) {
  require(eps >= 0.0, ErrorKind::InvalidArgument, "attack budget must be non-negative");
  const SupportSet S = support(cfg, x);
  const Eigen::VectorXd w_coeffs = cfg.basis.forward(model.w);
  Eigen::VectorXd kept = Eigen::VectorXd::Zero(w_coeffs.size());
  const Eigen::VectorXd& l1 = cfg.basis.l1_norms();
  double bound = 0.0;
  for (std::size_t k : S.indices()) {
    const auto i = static_cast<Eigen::Index>(k);
    kept[i] = w_coeffs[i];
    bound += std::abs(w_coeffs[i]) * l1[i];
  }
  const Signal projected = cfg.basis.inverse(kept);

  DistortionReport r;
  r.delta0 = eps * model.w.lpNorm<1>();
  r.delta_sw = eps * std::abs(sign_of(model.w).dot(projected));
  r.delta_w = eps * projected.lpNorm<1>();
  r.white_bound = eps * bound;
  if (r.delta_w > r.white_bound * (1.0 + 1e-9) + 1e-12) {
    fail(ErrorKind::Internal, "white-box distortion exceeds its triangle-inequality bound");
  }
  return r;
}

void save_linear(const LinearModel& model, const std::filesystem::path& path) {
  detail::Writer out(path.string());
  out.bytes(kLinearMagic, 4);
  out.put<std::uint32_t>(kLinearVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(model.w.size()));
  for (Eigen::Index i = 0; i < model.w.size(); ++i) out.put<double>(model.w[i]);
  out.put<double>(model.b);
  out.put<std::uint8_t>(model.label_neg);
  out.put<std::uint8_t>(model.label_pos);
  out.finish(path.string());
}

LinearModel load_linear(const std::filesystem::path& path) {
  detail::Reader in(path.string());
  char magic[4];
  in.bytes(magic, 4);
  require(std::equal(magic, magic + 4, kLinearMagic), ErrorKind::BadMagic,
          path.string() + ": not a linear model checkpoint");
  const auto version = in.get<std::uint32_t>();
  require(version == kLinearVersion, ErrorKind::BadMagic,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto n = in.get<std::uint32_t>();
  LinearModel model;
  model.w.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) model.w[i] = in.get<double>();
  model.b = in.get<double>();
  model.label_neg = in.get<std::uint8_t>();
  model.label_pos = in.get<std::uint8_t>();
  return model;
}

}  // namespace sparsefront
