#include "sparsefront/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "binary_io.hpp"
#include "sparsefront/error.hpp"
#include "sparsefront/linear.hpp"
#include "sparsefront/rng.hpp"

namespace sparsefront {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using Idx = Eigen::Index;

constexpr char kNetworkMagic[4] = {'S', 'F', 'N', 'N'};
constexpr std::uint32_t kNetworkVersion = 1;

// Parameters seen at scalar type T. Float networks are used in place; the
// double path works on converted copies.
template <class T>
class ParamRef {
 public:
  explicit ParamRef(const Network& net) : net_(net) {
    if constexpr (!std::is_same_v<T, float>) {
      for (const auto& p : net.params()) {
        weights_.push_back(p.weight.template cast<T>());
        biases_.push_back(p.bias.template cast<T>());
      }
    }
  }
  const Mat<T>& weight(int slot) const {
    if constexpr (std::is_same_v<T, float>) {
      return net_.params()[static_cast<std::size_t>(slot)].weight;
    } else {
      return weights_[static_cast<std::size_t>(slot)];
    }
  }
  const Vec<T>& bias(int slot) const {
    if constexpr (std::is_same_v<T, float>) {
      return net_.params()[static_cast<std::size_t>(slot)].bias;
    } else {
      return biases_[static_cast<std::size_t>(slot)];
    }
  }

 private:
  const Network& net_;
  std::vector<Mat<T>> weights_;
  std::vector<Vec<T>> biases_;
};

// What the backward pass needs from a forward pass. Activations and patches
// are only kept when parameter gradients are requested.
template <class T>
struct Trace {
  std::vector<Mat<T>> inputs;   // dense layers
  std::vector<Mat<T>> patches;  // conv layers, (positions * batch) x (channels * k * k)
  std::vector<Mat<T>> gates;    // relu: 0/1, dropout: 0 or 1/(1-p)
  std::vector<Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>> argmax;
  Idx batch = 0;
};

struct ParamGrads {
  std::vector<Eigen::MatrixXf> weight;
  std::vector<Eigen::VectorXf> bias;
};

template <class T>
Mat<T> im2col(const Mat<T>& X, const TensorShape& in, int k) {
  const int ho = in.height - k + 1;
  const int wo = in.width - k + 1;
  const Idx positions = static_cast<Idx>(ho) * wo;
  Mat<T> cols(positions * X.cols(), static_cast<Idx>(in.channels) * k * k);
  for (Idx b = 0; b < X.cols(); ++b) {
    const T* img = X.col(b).data();
    for (int c = 0; c < in.channels; ++c) {
      const T* plane = img + static_cast<Idx>(c) * in.height * in.width;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* dst = cols.col((static_cast<Idx>(c) * k + ky) * k + kx).data() + b * positions;
          for (int oy = 0; oy < ho; ++oy) {
            const T* src = plane + static_cast<Idx>(oy + ky) * in.width + kx;
            for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = src[ox];
          }
        }
      }
    }
  }
  return cols;
}

template <class T>
Mat<T> col2im(const Mat<T>& dcols, const TensorShape& in, int k, Idx batch) {
  const int ho = in.height - k + 1;
  const int wo = in.width - k + 1;
  const Idx positions = static_cast<Idx>(ho) * wo;
  Mat<T> dX = Mat<T>::Zero(static_cast<Idx>(in.size()), batch);
  for (Idx b = 0; b < batch; ++b) {
    T* img = dX.col(b).data();
    for (int c = 0; c < in.channels; ++c) {
      T* plane = img + static_cast<Idx>(c) * in.height * in.width;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T* src = dcols.col((static_cast<Idx>(c) * k + ky) * k + kx).data() + b * positions;
          for (int oy = 0; oy < ho; ++oy) {
            T* dst = plane + static_cast<Idx>(oy + ky) * in.width + kx;
            for (int ox = 0; ox < wo; ++ox) dst[ox] += src[oy * wo + ox];
          }
        }
      }
    }
  }
  return dX;
}

enum class Mode { inference, train };

// Forward pass over a batch (one column per sample). `trace` may be null.
template <class T>
Mat<T> run_forward(const Network& net, const ParamRef<T>& params, Mat<T> A, Trace<T>* trace,
                   Mode mode, bool keep_activations, Rng* dropout_rng) {
  const NetworkArch& arch = net.arch();
  require(static_cast<std::size_t>(A.rows()) == arch.input.size(), ErrorKind::ShapeMismatch,
          "input has " + std::to_string(A.rows()) + " values, network expects " +
              std::to_string(arch.input.size()));
  const std::size_t n_layers = arch.layers.size();
  if (trace != nullptr) {
    trace->inputs.assign(n_layers, {});
    trace->patches.assign(n_layers, {});
    trace->gates.assign(n_layers, {});
    trace->argmax.assign(n_layers, {});
    trace->batch = A.cols();
  }
  const Idx batch = A.cols();
  TensorShape shape = arch.input;
  const std::vector<TensorShape> shapes = arch.layer_shapes();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerSpec& spec = arch.layers[l];
    const TensorShape out = shapes[l];
    switch (spec.kind) {
      case LayerKind::dense: {
        const int slot = net.param_index(l);
        Mat<T> Y = params.weight(slot) * A;
        Y.colwise() += params.bias(slot);
        if (trace != nullptr && keep_activations) trace->inputs[l] = std::move(A);
        A = std::move(Y);
        break;
      }
      case LayerKind::conv: {
        const int slot = net.param_index(l);
        Mat<T> cols = im2col(A, shape, spec.kernel);
        Mat<T> Yt = cols * params.weight(slot).transpose();
        Yt.rowwise() += params.bias(slot).transpose();
        const Idx positions = static_cast<Idx>(out.height) * out.width;
        Mat<T> Y(static_cast<Idx>(out.size()), batch);
        for (Idx b = 0; b < batch; ++b) {
          Eigen::Map<Mat<T>>(Y.col(b).data(), positions, out.channels) =
              Yt.middleRows(b * positions, positions);
        }
        if (trace != nullptr && keep_activations) trace->patches[l] = std::move(cols);
        A = std::move(Y);
        break;
      }
      case LayerKind::relu: {
        Mat<T> gate = (A.array() > T(0)).template cast<T>().matrix();
        A = A.cwiseProduct(gate);
        if (trace != nullptr) trace->gates[l] = std::move(gate);
        break;
      }
      case LayerKind::maxpool: {
        const int s = spec.window;
        Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> arg(static_cast<Idx>(out.size()),
                                                                         batch);
        Mat<T> Y(static_cast<Idx>(out.size()), batch);
        for (Idx b = 0; b < batch; ++b) {
          const T* img = A.col(b).data();
          for (int c = 0; c < out.channels; ++c) {
            for (int oy = 0; oy < out.height; ++oy) {
              for (int ox = 0; ox < out.width; ++ox) {
                std::int32_t best = -1;
                T best_v = T(0);
                for (int dy = 0; dy < s; ++dy) {
                  for (int dx = 0; dx < s; ++dx) {
                    const auto idx = static_cast<std::int32_t>(
                        (c * shape.height + oy * s + dy) * shape.width + ox * s + dx);
                    if (best < 0 || img[idx] > best_v) {
                      best = idx;
                      best_v = img[idx];
                    }
                  }
                }
                const Idx o = (static_cast<Idx>(c) * out.height + oy) * out.width + ox;
                Y(o, b) = best_v;
                arg(o, b) = best;
              }
            }
          }
        }
        if (trace != nullptr) trace->argmax[l] = std::move(arg);
        A = std::move(Y);
        break;
      }
      case LayerKind::dropout: {
        if (mode == Mode::train && spec.rate > 0.0) {
          std::bernoulli_distribution keep(1.0 - spec.rate);
          const T scale = T(1.0 / (1.0 - spec.rate));
          Mat<T> gate(A.rows(), A.cols());
          for (Idx i = 0; i < gate.size(); ++i) gate.data()[i] = keep(*dropout_rng) ? scale : T(0);
          A = A.cwiseProduct(gate);
          if (trace != nullptr) trace->gates[l] = std::move(gate);
        }
        break;
      }
    }
    shape = out;
  }
  return A;
}

// Reverse pass. `dOut` has batch * replicas columns; column j uses the
// switches of sample j / replicas. Parameter gradients need replicas == 1.
template <class T>
Mat<T> run_backward(const Network& net, const ParamRef<T>& params, const Trace<T>& trace,
                    Mat<T> dA, Idx replicas, ParamGrads* grads) {
  const NetworkArch& arch = net.arch();
  const std::vector<TensorShape> shapes = arch.layer_shapes();
  const Idx cols = dA.cols();
  require(cols == trace.batch * replicas, ErrorKind::ShapeMismatch, "cogradient batch mismatch");
  for (std::size_t l = arch.layers.size(); l-- > 0;) {
    const LayerSpec& spec = arch.layers[l];
    const TensorShape in = l == 0 ? arch.input : shapes[l - 1];
    const TensorShape out = shapes[l];
    switch (spec.kind) {
      case LayerKind::dense: {
        const int slot = net.param_index(l);
        if (grads != nullptr) {
          if constexpr (std::is_same_v<T, float>) {
            grads->weight[static_cast<std::size_t>(slot)].noalias() = dA * trace.inputs[l].transpose();
            grads->bias[static_cast<std::size_t>(slot)] = dA.rowwise().sum();
          }
        }
        if (l == 0 && grads != nullptr) return {};
        dA = params.weight(slot).transpose() * dA;
        break;
      }
      case LayerKind::conv: {
        const int slot = net.param_index(l);
        const Idx positions = static_cast<Idx>(out.height) * out.width;
        Mat<T> dYt(positions * cols, out.channels);
        for (Idx j = 0; j < cols; ++j) {
          dYt.middleRows(j * positions, positions) =
              Eigen::Map<const Mat<T>>(dA.col(j).data(), positions, out.channels);
        }
        if (grads != nullptr) {
          if constexpr (std::is_same_v<T, float>) {
            grads->weight[static_cast<std::size_t>(slot)].noalias() = dYt.transpose() * trace.patches[l];
            grads->bias[static_cast<std::size_t>(slot)] = dYt.colwise().sum().transpose();
          }
        }
        if (l == 0 && grads != nullptr) return {};
        Mat<T> dcols = dYt * params.weight(slot);
        dA = col2im(dcols, in, spec.kernel, cols);
        break;
      }
      case LayerKind::relu: {
        const Mat<T>& gate = trace.gates[l];
        for (Idx j = 0; j < cols; ++j) dA.col(j) = dA.col(j).cwiseProduct(gate.col(j / replicas));
        break;
      }
      case LayerKind::maxpool: {
        const auto& arg = trace.argmax[l];
        Mat<T> dX = Mat<T>::Zero(static_cast<Idx>(in.size()), cols);
        for (Idx j = 0; j < cols; ++j) {
          const Idx b = j / replicas;
          for (Idx o = 0; o < dA.rows(); ++o) dX(arg(o, b), j) += dA(o, j);
        }
        dA = std::move(dX);
        break;
      }
      case LayerKind::dropout: {
        const Mat<T>& gate = trace.gates[l];
        if (gate.size() > 0) {
          for (Idx j = 0; j < cols; ++j) dA.col(j) = dA.col(j).cwiseProduct(gate.col(j / replicas));
        }
        break;
      }
    }
  }
  return dA;
}

// Applies the affine maps selected by a frozen switch pattern (sample 0 of
// `trace`) to x.
Vec<double> frozen_forward(const Network& net, const ParamRef<double>& params,
                           const Trace<double>& trace, Vec<double> a) {
  const NetworkArch& arch = net.arch();
  const std::vector<TensorShape> shapes = arch.layer_shapes();
  TensorShape shape = arch.input;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& spec = arch.layers[l];
    switch (spec.kind) {
      case LayerKind::dense: {
        const int slot = net.param_index(l);
        a = params.weight(slot) * a + params.bias(slot);
        break;
      }
      case LayerKind::conv: {
        const int slot = net.param_index(l);
        Mat<double> A = a;
        Mat<double> Yt = im2col(A, shape, spec.kernel) * params.weight(slot).transpose();
        Yt.rowwise() += params.bias(slot).transpose();
        a = Eigen::Map<const Vec<double>>(Yt.data(), Yt.size());
        break;
      }
      case LayerKind::relu:
        a = a.cwiseProduct(trace.gates[l].col(0));
        break;
      case LayerKind::maxpool: {
        Vec<double> y(trace.argmax[l].rows());
        for (Idx o = 0; o < y.size(); ++o) y[o] = a[trace.argmax[l](o, 0)];
        a = std::move(y);
        break;
      }
      case LayerKind::dropout:
        break;
    }
    shape = shapes[l];
  }
  return a;
}

Mat<double> scores_from_logits(const NetworkArch& arch, const Mat<double>& logits) {
  if (arch.head == HeadKind::softmax) return logits;
  Mat<double> s(2, logits.cols());
  s.row(0).setZero();
  s.row(1) = logits.row(0);
  return s;
}

// Score-space cogradient -> logit-space cogradient.
template <class T>
Mat<T> scores_cograd_to_logits(const NetworkArch& arch, const Mat<double>& dscores) {
  if (arch.head == HeadKind::softmax) return dscores.cast<T>();
  return dscores.row(1).cast<T>();
}

void check_label(const Network& net, int label) {
  require(label >= 0 && label < net.class_count(), ErrorKind::InvalidLabel,
          "label " + std::to_string(label) + " outside [0, " + std::to_string(net.class_count()) + ")");
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::InvalidArgument, "bad integer for " + what + ": '" + s + "'");
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::InvalidArgument, "bad number for " + what + ": '" + s + "'");
}

// Gradient through the front end for one column, given g_z at z = sparsify(x).
Signal frontend_gradient(const FrontEndConfig& cfg, const Signal& x, const SupportSet& S,
                         const Signal& g_z, const GradientSpec& spec) {
  switch (spec.mode) {
    case GradMode::bpda_identity:
      return g_z;
    case GradMode::projection:
      return project(cfg.basis, S, g_z);
    case GradMode::iterated_projection: {
      if (spec.probe_budget <= 0.0 || spec.refine_steps < 1) return project(cfg.basis, S, g_z);
      Signal e = spec.probe_budget * sign_of(g_z);
      SupportSet current = S;
      for (int i = 0; i < spec.refine_steps; ++i) {
        current = support(cfg, x + e);
        e = spec.probe_budget * sign_of(project(cfg.basis, current, g_z));
      }
      return project(cfg.basis, current, g_z);
    }
  }
  return g_z;
}

struct PreparedInputs {
  Eigen::MatrixXd z;
  std::vector<SupportSet> supports;
};

PreparedInputs prepare(const FrontEndConfig* frontend, const Eigen::MatrixXd& inputs) {
  PreparedInputs p;
  if (frontend == nullptr) {
    p.z = inputs;
    return p;
  }
  require(static_cast<std::size_t>(inputs.rows()) == frontend->dimension(), ErrorKind::ShapeMismatch,
          "input does not match the front-end dimension");
  p.z.resize(inputs.rows(), inputs.cols());
  p.supports.resize(static_cast<std::size_t>(inputs.cols()));
  for (Idx b = 0; b < inputs.cols(); ++b) {
    p.z.col(b) = sparsify(*frontend, inputs.col(b), p.supports[static_cast<std::size_t>(b)]);
  }
  return p;
}

// Logits and input cogradient at z for score-space cogradients built by
// `make_cograd(scores) -> (classes x batch*replicas)`.
template <class T, class MakeCograd>
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> network_pullback(const Network& net,
                                                             const Eigen::MatrixXd& z, Idx replicas,
                                                             MakeCograd&& make_cograd) {
  ParamRef<T> params(net);
  Trace<T> trace;
  const Mat<T> logits = run_forward<T>(net, params, z.cast<T>(), &trace, Mode::inference, false, nullptr);
  Eigen::MatrixXd scores = scores_from_logits(net.arch(), logits.template cast<double>());
  const Eigen::MatrixXd dscores = make_cograd(scores);
  Mat<T> dz = run_backward<T>(net, params, trace, scores_cograd_to_logits<T>(net.arch(), dscores),
                              replicas, nullptr);
  return {dz.template cast<double>(), std::move(scores)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture

NetworkArch NetworkArch::cnn4(double dropout) {
  NetworkArch a;
  a.input = {1, 28, 28};
  a.layers = {LayerSpec::conv(20, 5), LayerSpec::relu(),        LayerSpec::maxpool(2),
              LayerSpec::conv(40, 5), LayerSpec::relu(),        LayerSpec::maxpool(2),
              LayerSpec::dense(1000), LayerSpec::relu(),        LayerSpec::dropout(dropout),
              LayerSpec::dense(1000), LayerSpec::relu(),        LayerSpec::dropout(dropout),
              LayerSpec::dense(10)};
  a.head = HeadKind::softmax;
  a.classes = 10;
  return a;
}

NetworkArch NetworkArch::mlp(int hidden, int classes) {
  require(hidden >= 1 && classes >= 2, ErrorKind::InvalidArgument, "invalid mlp dimensions");
  NetworkArch a;
  a.input = {1, 28, 28};
  a.head = classes == 2 ? HeadKind::sigmoid : HeadKind::softmax;
  a.classes = classes;
  a.layers = {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(a.logit_count())};
  return a;
}

std::vector<TensorShape> NetworkArch::layer_shapes() const {
  require(input.size() > 0, ErrorKind::ShapeMismatch, "empty input shape");
  require(!layers.empty() && layers.back().kind == LayerKind::dense, ErrorKind::ShapeMismatch,
          "the last layer must be dense and produce the logits");
  std::vector<TensorShape> shapes;
  TensorShape s = input;
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerKind::conv:
        require(l.units >= 1 && l.kernel >= 1 && l.kernel <= s.height && l.kernel <= s.width,
                ErrorKind::ShapeMismatch, "convolution kernel does not fit its input");
        s = {l.units, s.height - l.kernel + 1, s.width - l.kernel + 1};
        break;
      case LayerKind::maxpool:
        require(l.window >= 1 && l.window <= s.height && l.window <= s.width, ErrorKind::ShapeMismatch,
                "max-pool window does not fit its input");
        s = {s.channels, s.height / l.window, s.width / l.window};
        break;
      case LayerKind::dense:
        require(l.units >= 1, ErrorKind::ShapeMismatch, "dense layer needs at least one unit");
        s = {l.units, 1, 1};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::dropout:
        require(l.rate >= 0.0 && l.rate < 1.0, ErrorKind::InvalidArgument, "dropout rate must lie in [0, 1)");
        break;
    }
    shapes.push_back(s);
  }
  require(static_cast<int>(s.size()) == logit_count(), ErrorKind::ShapeMismatch,
          "final layer width " + std::to_string(s.size()) + " does not match the head (" +
              std::to_string(logit_count()) + " logits)");
  return shapes;
}

std::string NetworkArch::descriptor() const {
  std::ostringstream out;
  out << "input=" << input.channels << 'x' << input.height << 'x' << input.width << '\n';
  out << "layers=";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (i > 0) out << ',';
    switch (l.kind) {
      case LayerKind::conv: out << "conv:" << l.units << ':' << l.kernel; break;
      case LayerKind::maxpool: out << "maxpool:" << l.window; break;
      case LayerKind::dense: out << "dense:" << l.units; break;
      case LayerKind::relu: out << "relu"; break;
      case LayerKind::dropout: out << "dropout:" << l.rate; break;
    }
  }
  out << '\n';
  out << "head=" << (head == HeadKind::softmax ? "softmax" : "sigmoid") << ':' << classes << '\n';
  return out.str();
}

NetworkArch NetworkArch::parse(std::string_view descriptor) {
  NetworkArch arch;
  arch.layers.clear();
  bool have_layers = false;
  bool have_head = false;
  for (const std::string& raw : split(std::string(descriptor), '\n')) {
    if (raw.empty() || raw[0] == '#') continue;
    const auto eq = raw.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidArgument, "bad descriptor line: " + raw);
    const std::string key = trim(raw.substr(0, eq));
    const std::string value = trim(raw.substr(eq + 1));
    if (key == "input") {
      const auto dims = split(value, 'x');
      require(dims.size() == 3, ErrorKind::InvalidArgument, "input must be CxHxW");
      arch.input = {parse_int(dims[0], "input"), parse_int(dims[1], "input"), parse_int(dims[2], "input")};
    } else if (key == "layers") {
      have_layers = true;
      for (const std::string& item : split(value, ',')) {
        const auto f = split(item, ':');
        const std::string& name = f[0];
        auto arg = [&](std::size_t i) -> const std::string& {
          require(f.size() > i, ErrorKind::InvalidArgument, "layer '" + item + "' is missing arguments");
          return f[i];
        };
        if (name == "conv") {
          arch.layers.push_back(LayerSpec::conv(parse_int(arg(1), item), parse_int(arg(2), item)));
        } else if (name == "maxpool") {
          arch.layers.push_back(LayerSpec::maxpool(parse_int(arg(1), item)));
        } else if (name == "dense") {
          arch.layers.push_back(LayerSpec::dense(parse_int(arg(1), item)));
        } else if (name == "relu") {
          arch.layers.push_back(LayerSpec::relu());
        } else if (name == "dropout") {
          arch.layers.push_back(LayerSpec::dropout(parse_double(arg(1), item)));
        } else {
          fail(ErrorKind::UnsupportedLayer, "layer '" + name + "' is not piecewise linear or not supported");
        }
      }
    } else if (key == "head") {
      have_head = true;
      const auto f = split(value, ':');
      require(f.size() == 2, ErrorKind::InvalidArgument, "head must be softmax:L or sigmoid:2");
      if (f[0] == "softmax") {
        arch.head = HeadKind::softmax;
      } else if (f[0] == "sigmoid") {
        arch.head = HeadKind::sigmoid;
      } else {
        fail(ErrorKind::UnsupportedLayer, "unknown head '" + f[0] + "'");
      }
      arch.classes = parse_int(f[1], "head");
      require(arch.classes >= 2, ErrorKind::InvalidArgument, "a head needs at least two classes");
      require(arch.head == HeadKind::softmax || arch.classes == 2, ErrorKind::InvalidArgument,
              "a sigmoid head is binary");
    } else {
      fail(ErrorKind::InvalidArgument, "unknown descriptor key '" + key + "'");
    }
  }
  require(have_layers && have_head, ErrorKind::InvalidArgument, "descriptor needs layers and head");
  arch.layer_shapes();
  return arch;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(NetworkArch arch) : arch_(std::move(arch)) {
  const std::vector<TensorShape> shapes = arch_.layer_shapes();
  TensorShape in = arch_.input;
  for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
    const LayerSpec& spec = arch_.layers[l];
    if (spec.kind == LayerKind::dense) {
      param_slot_.push_back(static_cast<int>(params_.size()));
      params_.push_back({Eigen::MatrixXf::Zero(spec.units, static_cast<Idx>(in.size())),
                         Eigen::VectorXf::Zero(spec.units)});
    } else if (spec.kind == LayerKind::conv) {
      param_slot_.push_back(static_cast<int>(params_.size()));
      params_.push_back({Eigen::MatrixXf::Zero(spec.units, static_cast<Idx>(in.channels) * spec.kernel * spec.kernel),
                         Eigen::VectorXf::Zero(spec.units)});
    } else {
      param_slot_.push_back(-1);
    }
    in = shapes[l];
  }
}

std::size_t Network::relu_units() const {
  const std::vector<TensorShape> shapes = arch_.layer_shapes();
  std::size_t n = 0;
  for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
    if (arch_.layers[l].kind == LayerKind::relu) n += shapes[l].size();
  }
  return n;
}

void Network::initialize(std::uint64_t seed) {
  Rng rng = make_rng(seed, streams::kNetworkInit);
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Eigen::MatrixXf& W = params_[p].weight;
    const double fan_in = static_cast<double>(W.cols());
    // The logit layer gets unit gain; hidden layers get the ReLU gain of 2.
    const double gain = p + 1 == params_.size() ? 1.0 : 2.0;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    for (Idx i = 0; i < W.size(); ++i) W.data()[i] = static_cast<float>(dist(rng));
    params_[p].bias.setZero();
  }
  meta.seed = seed;
}

bool Network::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const LayerParams& p) {
    return p.weight.allFinite() && p.bias.allFinite();
  });
}

Eigen::MatrixXd Network::logits(const Eigen::MatrixXd& inputs) const {
  ParamRef<float> params(*this);
  return run_forward<float>(*this, params, inputs.cast<float>(), nullptr, Mode::inference, false, nullptr)
      .cast<double>();
}

Eigen::MatrixXd Network::logits_exact(const Eigen::MatrixXd& inputs) const {
  ParamRef<double> params(*this);
  return run_forward<double>(*this, params, inputs, nullptr, Mode::inference, false, nullptr);
}

Eigen::MatrixXd Network::class_scores(const Eigen::MatrixXd& inputs) const {
  return scores_from_logits(arch_, logits(inputs));
}

Eigen::VectorXd Network::forward(const Signal& x) const { return logits(x); }

Eigen::VectorXd Network::probabilities(const Signal& x) const {
  return softmax(class_scores(x).col(0));
}

int Network::predict(const Signal& x) const { return argmax(class_scores(x).col(0)); }

Eigen::MatrixXd logits_to_scores(const NetworkArch& arch, const Eigen::MatrixXd& logits) {
  return scores_from_logits(arch, logits);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
  const double m = scores.maxCoeff();
  Eigen::VectorXd p = (scores.array() - m).exp().matrix();
  return p / p.sum();
}

int argmax(const Eigen::VectorXd& v) {
  require(v.size() > 0, ErrorKind::EmptyInput, "argmax of an empty vector");
  Idx best = 0;
  for (Idx i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Training

Dataset sparsify_dataset(const Dataset& ds, const FrontEndConfig& frontend) {
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.images.col(static_cast<Idx>(i)) = sparsify(frontend, ds.image(i)).cast<float>();
  }
  return out;
}

NetworkTrainResult train_network(const NetworkArch& arch, const Dataset& train_set,
                                 const FrontEndConfig* frontend, const NetworkHyper& hyper,
                                 const EpochCallback& on_epoch) {
  require(train_set.size() > 0, ErrorKind::EmptyInput, "training set is empty");
  require(hyper.epochs >= 1 && hyper.batch_size >= 1 && hyper.learning_rate > 0.0,
          ErrorKind::InvalidArgument, "invalid training hyperparameters");
  Network net(arch);
  require(train_set.pixels() == net.input_size(), ErrorKind::ShapeMismatch,
          "training images do not match the network input");
  for (int label : train_set.labels) check_label(net, label);
  net.initialize(hyper.seed);
  net.meta.epochs = hyper.epochs;
  if (frontend != nullptr) {
    std::ostringstream f;
    f << to_string(frontend->basis.family()) << ':' << frontend->basis.levels() << ':' << frontend->rho;
    net.meta.frontend = f.str();
  }

  const Eigen::MatrixXf X = frontend != nullptr ? sparsify_dataset(train_set, *frontend).images
                                                : train_set.images;
  const std::size_t n = train_set.size();
  const auto n_params = net.params().size();
  ParamGrads grads;
  std::vector<LayerParams> velocity;
  for (const auto& p : net.params()) {
    grads.weight.push_back(Eigen::MatrixXf::Zero(p.weight.rows(), p.weight.cols()));
    grads.bias.push_back(Eigen::VectorXf::Zero(p.bias.size()));
    velocity.push_back({Eigen::MatrixXf::Zero(p.weight.rows(), p.weight.cols()),
                        Eigen::VectorXf::Zero(p.bias.size())});
  }

  Rng shuffle_rng = make_rng(hyper.seed, streams::kNetworkShuffle);
  Rng dropout_rng = make_rng(hyper.seed, streams::kDropout);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  ParamRef<float> params(net);
  const bool sigmoid = arch.head == HeadKind::sigmoid;
  double lr = hyper.learning_rate;

  std::vector<EpochStats> history;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(hyper.batch_size));
      const auto B = static_cast<Idx>(end - begin);
      Eigen::MatrixXf Xb(X.rows(), B);
      for (Idx j = 0; j < B; ++j) Xb.col(j) = X.col(static_cast<Idx>(order[begin + static_cast<std::size_t>(j)]));

      Trace<float> trace;
      const Eigen::MatrixXf logits =
          run_forward<float>(net, params, std::move(Xb), &trace, Mode::train, true, &dropout_rng);
      Eigen::MatrixXf dlogits(logits.rows(), B);
      for (Idx j = 0; j < B; ++j) {
        const int label = train_set.labels[order[begin + static_cast<std::size_t>(j)]];
        if (sigmoid) {
          const double y = logits(0, j);
          const double p = 1.0 / (1.0 + std::exp(-y));
          // log(1 + e^{-|y|}) + max(y, 0) - label * y
          loss_sum += std::log1p(std::exp(-std::abs(y))) + std::max(y, 0.0) - label * y;
          dlogits(0, j) = static_cast<float>(p - label);
          if ((y > 0.0 ? 1 : 0) == label) ++correct;
        } else {
          const Eigen::VectorXd s = logits.col(j).cast<double>();
          const double m = s.maxCoeff();
          const double lse = m + std::log((s.array() - m).exp().sum());
          loss_sum += lse - s[label];
          Eigen::VectorXd p = (s.array() - lse).exp().matrix();
          p[label] -= 1.0;
          dlogits.col(j) = p.cast<float>();
          if (argmax(s) == label) ++correct;
        }
      }
      dlogits /= static_cast<float>(B);
      run_backward<float>(net, params, trace, std::move(dlogits), 1, &grads);

      const auto mom = static_cast<float>(hyper.momentum);
      const auto step = static_cast<float>(lr);
      const auto wd = static_cast<float>(hyper.weight_decay);
      for (std::size_t p = 0; p < n_params; ++p) {
        LayerParams& P = net.params()[p];
        velocity[p].weight = mom * velocity[p].weight - step * (grads.weight[p] + wd * P.weight);
        velocity[p].bias = mom * velocity[p].bias - step * grads.bias[p];
        P.weight += velocity[p].weight;
        P.bias += velocity[p].bias;
      }
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.loss = loss_sum / static_cast<double>(n);
    stats.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    require(std::isfinite(stats.loss) && net.all_finite(), ErrorKind::NonFiniteLoss,
            "training loss became non-finite in epoch " + std::to_string(stats.epoch));
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    lr *= hyper.lr_decay;
  }
  return {std::move(net), std::move(history)};
}

double network_accuracy(const Network& net, const Dataset& ds, const FrontEndConfig* frontend,
                        std::vector<int>* predictions) {
  require(ds.size() > 0, ErrorKind::EmptyInput, "accuracy over an empty dataset");
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  if (predictions != nullptr) predictions->assign(ds.size(), -1);
  for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
    const std::size_t end = std::min(ds.size(), begin + kChunk);
    const Eigen::MatrixXd X =
        ds.images.middleCols(static_cast<Idx>(begin), static_cast<Idx>(end - begin)).cast<double>();
    const Eigen::MatrixXd scores = pipeline_scores(net, frontend, X);
    for (std::size_t i = begin; i < end; ++i) {
      const int pred = argmax(scores.col(static_cast<Idx>(i - begin)));
      if (predictions != nullptr) (*predictions)[i] = pred;
      if (pred == ds.labels[i]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Local linearity

std::size_t SwitchState::relu_units() const {
  std::size_t n = 0;
  for (const auto& r : relu) n += r.size();
  return n;
}

namespace {

SwitchState switches_from_trace(const NetworkArch& arch, const Trace<double>& trace) {
  SwitchState s;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    if (arch.layers[l].kind == LayerKind::relu) {
      const auto& g = trace.gates[l];
      std::vector<std::uint8_t> bits(static_cast<std::size_t>(g.rows()));
      for (Idx i = 0; i < g.rows(); ++i) bits[static_cast<std::size_t>(i)] = g(i, 0) > 0.0 ? 1 : 0;
      s.relu.push_back(std::move(bits));
    } else if (arch.layers[l].kind == LayerKind::maxpool) {
      const auto& a = trace.argmax[l];
      s.pool_argmax.emplace_back(a.data(), a.data() + a.rows());
    }
  }
  return s;
}

}  // namespace

SwitchState switch_states(const Network& net, const Signal& x) {
  ParamRef<double> params(net);
  Trace<double> trace;
  run_forward<double>(net, params, x, &trace, Mode::inference, false, nullptr);
  return switches_from_trace(net.arch(), trace);
}

LocalLinearModel local_linear(const Network& net, const Signal& x) {
  ParamRef<double> params(net);
  Trace<double> trace;
  run_forward<double>(net, params, x, &trace, Mode::inference, false, nullptr);
  const Idx L = net.logit_count();
  LocalLinearModel m;
  m.w_eq = run_backward<double>(net, params, trace, Mat<double>::Identity(L, L), L, nullptr);
  // The frozen map at the origin is the constant term.
  m.b_eq = -frozen_forward(net, params, trace, Vec<double>::Zero(x.size()));
  m.switches = switches_from_trace(net.arch(), trace);
  return m;
}

FlipCount flip_count(const SwitchState& a, const SwitchState& b) {
  require(a.relu.size() == b.relu.size(), ErrorKind::ShapeMismatch, "switch states differ in layout");
  FlipCount c;
  for (std::size_t l = 0; l < a.relu.size(); ++l) {
    require(a.relu[l].size() == b.relu[l].size(), ErrorKind::ShapeMismatch, "switch states differ in layout");
    for (std::size_t i = 0; i < a.relu[l].size(); ++i) c.flipped += a.relu[l][i] != b.relu[l][i] ? 1 : 0;
    c.total += a.relu[l].size();
  }
  return c;
}

FlipCount flip_count(const Network& net, const Signal& x, const Signal& e) {
  require(x.size() == e.size(), ErrorKind::ShapeMismatch, "perturbation does not match input");
  return flip_count(switch_states(net, x), switch_states(net, x + e));
}

// ---------------------------------------------------------------------------
// Input gradients

GradMode parse_grad_mode(std::string_view name) {
  if (name == "bpda1" || name == "bpda_identity" || name == "identity") return GradMode::bpda_identity;
  if (name == "proj" || name == "projection") return GradMode::projection;
  if (name == "iterproj" || name == "iterated_projection") return GradMode::iterated_projection;
  fail(ErrorKind::InvalidArgument, "unknown gradient mode '" + std::string(name) + "'");
}

std::string_view to_string(GradMode mode) noexcept {
  switch (mode) {
    case GradMode::bpda_identity: return "bpda1";
    case GradMode::projection: return "proj";
    case GradMode::iterated_projection: return "iterproj";
  }
  return "?";
}

Eigen::MatrixXd pipeline_scores(const Network& net, const FrontEndConfig* frontend,
                                const Eigen::MatrixXd& inputs) {
  if (frontend == nullptr) return net.class_scores(inputs);
  return net.class_scores(prepare(frontend, inputs).z);
}

GradientBatch grad_input_batch(const Network& net, const FrontEndConfig* frontend,
                               const Eigen::MatrixXd& inputs, std::span<const GradTarget> targets,
                               LossKind loss, const GradientSpec& spec) {
  require(static_cast<std::size_t>(inputs.cols()) == targets.size(), ErrorKind::ShapeMismatch,
          "one gradient target per input column is required");
  for (const GradTarget& t : targets) {
    check_label(net, t.label);
    if (loss == LossKind::logit_diff) {
      check_label(net, t.other);
      require(t.other != t.label, ErrorKind::InvalidLabel, "logit difference needs two distinct classes");
    }
  }
  const PreparedInputs prep = prepare(frontend, inputs);
  auto make_cograd = [&](const Eigen::MatrixXd& scores) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(scores.rows(), scores.cols());
    for (Idx b = 0; b < scores.cols(); ++b) {
      const GradTarget& t = targets[static_cast<std::size_t>(b)];
      if (loss == LossKind::cross_entropy) {
        d.col(b) = softmax(scores.col(b));
        d(t.label, b) -= 1.0;
      } else {
        d(t.other, b) = 1.0;
        d(t.label, b) = -1.0;
      }
    }
    return d;
  };
  auto [g_z, scores] = spec.exact ? network_pullback<double>(net, prep.z, 1, make_cograd)
                                  : network_pullback<float>(net, prep.z, 1, make_cograd);
  GradientBatch out;
  out.scores = std::move(scores);
  if (frontend == nullptr) {
    out.gradient = std::move(g_z);
    return out;
  }
  out.gradient.resize(g_z.rows(), g_z.cols());
  for (Idx b = 0; b < g_z.cols(); ++b) {
    out.gradient.col(b) = frontend_gradient(*frontend, inputs.col(b), prep.supports[static_cast<std::size_t>(b)],
                                            g_z.col(b), spec);
  }
  return out;
}

Signal grad_input(const Network& net, const FrontEndConfig* frontend, const Signal& x,
                  GradTarget target, LossKind loss, const GradientSpec& spec) {
  const GradTarget targets[1] = {target};
  return grad_input_batch(net, frontend, x, targets, loss, spec).gradient.col(0);
}

PairGradients pair_gradients(const Network& net, const FrontEndConfig* frontend,
                             const Eigen::MatrixXd& inputs, std::span<const int> labels,
                             const GradientSpec& spec) {
  require(static_cast<std::size_t>(inputs.cols()) == labels.size(), ErrorKind::ShapeMismatch,
          "one label per input column is required");
  for (int label : labels) check_label(net, label);
  const Idx C = net.class_count();
  const PreparedInputs prep = prepare(frontend, inputs);
  auto make_cograd = [&](const Eigen::MatrixXd& scores) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(C, scores.cols() * C);
    for (Idx b = 0; b < scores.cols(); ++b) {
      const int t = labels[static_cast<std::size_t>(b)];
      for (Idx i = 0; i < C; ++i) {
        if (i == t) continue;
        d(i, b * C + i) = 1.0;
        d(t, b * C + i) = -1.0;
      }
    }
    return d;
  };
  auto [g_z, scores] = spec.exact ? network_pullback<double>(net, prep.z, C, make_cograd)
                                  : network_pullback<float>(net, prep.z, C, make_cograd);
  PairGradients out;
  out.scores = std::move(scores);
  out.gradients.resize(static_cast<std::size_t>(inputs.cols()));
  for (Idx b = 0; b < inputs.cols(); ++b) {
    Eigen::MatrixXd G = g_z.middleCols(b * C, C);
    if (frontend != nullptr) {
      const int t = labels[static_cast<std::size_t>(b)];
      for (Idx i = 0; i < C; ++i) {
        if (i == t) continue;
        G.col(i) = frontend_gradient(*frontend, inputs.col(b), prep.supports[static_cast<std::size_t>(b)],
                                     G.col(i), spec);
      }
    }
    out.gradients[static_cast<std::size_t>(b)] = std::move(G);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ostringstream text;
  text << net.arch().descriptor();
  text << "seed=" << net.meta.seed << '\n';
  text << "epochs=" << net.meta.epochs << '\n';
  text << "frontend=" << net.meta.frontend << '\n';
  const std::string descriptor = text.str();

  detail::Writer out(path.string());
  out.bytes(kNetworkMagic, 4);
  out.put<std::uint32_t>(kNetworkVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(descriptor.size()));
  out.bytes(descriptor.data(), descriptor.size());
  for (const LayerParams& p : net.params()) {
    out.put<std::uint32_t>(2);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(p.weight.rows()));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(p.weight.cols()));
    for (Idx r = 0; r < p.weight.rows(); ++r) {
      for (Idx c = 0; c < p.weight.cols(); ++c) out.put<float>(p.weight(r, c));
    }
    out.put<std::uint32_t>(1);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(p.bias.size()));
    for (Idx i = 0; i < p.bias.size(); ++i) out.put<float>(p.bias[i]);
  }
  out.finish(path.string());
}

Network load_network(const std::filesystem::path& path) {
  detail::Reader in(path.string());
  char magic[4];
  in.bytes(magic, 4);
  require(std::equal(magic, magic + 4, kNetworkMagic), ErrorKind::BadMagic,
          path.string() + ": not a network checkpoint");
  const auto version = in.get<std::uint32_t>();
  require(version == kNetworkVersion, ErrorKind::BadMagic,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const std::string descriptor = in.string(in.get<std::uint32_t>());

  std::string arch_text;
  TrainingMeta meta;
  for (const std::string& line : split(descriptor, '\n')) {
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? line : line.substr(0, eq);
    const std::string value = eq == std::string::npos ? std::string() : line.substr(eq + 1);
    if (key == "seed") {
      meta.seed = std::stoull(value);
    } else if (key == "epochs") {
      meta.epochs = parse_int(value, "epochs");
    } else if (key == "frontend") {
      meta.frontend = value;
    } else if (!line.empty()) {
      arch_text += line + '\n';
    }
  }
  Network net(NetworkArch::parse(arch_text));
  net.meta = meta;
  for (LayerParams& p : net.params()) {
    require(in.get<std::uint32_t>() == 2, ErrorKind::CountMismatch, path.string() + ": bad weight rank");
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    require(rows == p.weight.rows() && cols == p.weight.cols(), ErrorKind::CountMismatch,
            path.string() + ": weight shape does not match the architecture");
    for (Idx r = 0; r < p.weight.rows(); ++r) {
      for (Idx c = 0; c < p.weight.cols(); ++c) p.weight(r, c) = in.get<float>();
    }
    require(in.get<std::uint32_t>() == 1, ErrorKind::CountMismatch, path.string() + ": bad bias rank");
    require(in.get<std::uint32_t>() == p.bias.size(), ErrorKind::CountMismatch,
            path.string() + ": bias shape does not match the architecture");
    for (Idx i = 0; i < p.bias.size(); ++i) p.bias[i] = in.get<float>();
  }
  require(in.at_end(), ErrorKind::CountMismatch, path.string() + ": trailing bytes after parameters");
  require(net.all_finite(), ErrorKind::InvalidArgument, path.string() + ": non-finite parameters");
  return net;
}

}  // namespace sparsefront
