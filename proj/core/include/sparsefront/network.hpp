#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsefront/dataset.hpp"
#include "sparsefront/frontend.hpp"

namespace sparsefront {

enum class LayerKind { conv, maxpool, dense, relu, dropout };
enum class HeadKind { softmax, sigmoid };

struct TensorShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;   // feature maps (conv) or width (dense)
  int kernel = 0;  // conv kernel size
  int window = 0;  // max-pool window (stride equals window)
  double rate = 0.0;

  static LayerSpec conv(int maps, int kernel) { return {LayerKind::conv, maps, kernel, 0, 0.0}; }
  static LayerSpec maxpool(int window) { return {LayerKind::maxpool, 0, 0, window, 0.0}; }
  static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 0, 0.0}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0.0}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, 0, rate}; }
};

/// Layer stack ending in a dense layer that produces the head's logits: L
/// logits for a softmax head, a single logit for a sigmoid head. Convolutions
/// are stride-1 "valid"; max-pooling is non-overlapping.
struct NetworkArch {
  TensorShape input{1, 28, 28};
  std::vector<LayerSpec> layers;
  HeadKind head = HeadKind::softmax;
  int classes = 10;

  /// conv20-5x5, pool, conv40-5x5, pool, FC1000, FC1000 (dropout), softmax(10).
  static NetworkArch cnn4(double dropout = 0.5);
  /// One hidden ReLU layer followed by a sigmoid (classes == 2) or softmax head.
  static NetworkArch mlp(int hidden, int classes = 2);

  int logit_count() const noexcept { return head == HeadKind::sigmoid ? 1 : classes; }
  /// Output shape of every layer; throws ShapeMismatch when shapes do not chain.
  std::vector<TensorShape> layer_shapes() const;
  std::string descriptor() const;
  /// Unknown layer names raise UnsupportedLayer.
  static NetworkArch parse(std::string_view descriptor);
};

struct LayerParams {
  Eigen::MatrixXf weight;  // dense: out x in; conv: maps x (in_channels * k * k)
  Eigen::VectorXf bias;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  /// "family:levels:rho" of the front end used on training inputs, or empty.
  std::string frontend;
};

class Network {
 public:
  explicit Network(NetworkArch arch);

  const NetworkArch& arch() const noexcept { return arch_; }
  std::vector<LayerParams>& params() noexcept { return params_; }
  const std::vector<LayerParams>& params() const noexcept { return params_; }
  /// Parameter slot of layer i, or -1 for parameter-free layers.
  int param_index(std::size_t layer) const { return param_slot_[layer]; }

  std::size_t input_size() const noexcept { return arch_.input.size(); }
  int logit_count() const noexcept { return arch_.logit_count(); }
  int class_count() const noexcept { return arch_.classes; }
  std::size_t relu_units() const;

  /// He-normal weights, zero biases.
  void initialize(std::uint64_t seed);
  bool all_finite() const;

  /// Inference logits, one column per input column (single precision math).
  Eigen::MatrixXd logits(const Eigen::MatrixXd& inputs) const;
  /// Inference logits with every operation in double precision.
  Eigen::MatrixXd logits_exact(const Eigen::MatrixXd& inputs) const;

  /// Per-class scores: the logits for a softmax head, [0, y] for a sigmoid head.
  Eigen::MatrixXd class_scores(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd forward(const Signal& x) const;
  /// Softmax over class scores.
  Eigen::VectorXd probabilities(const Signal& x) const;
  int predict(const Signal& x) const;

  TrainingMeta meta;

 private:
  NetworkArch arch_;
  std::vector<LayerParams> params_;
  std::vector<int> param_slot_;
};

/// Maps logits to class scores (identity for softmax, [0, y] for sigmoid).
Eigen::MatrixXd logits_to_scores(const NetworkArch& arch, const Eigen::MatrixXd& logits);
Eigen::VectorXd softmax(const Eigen::VectorXd& scores);
/// argmax with the lowest index winning ties.
int argmax(const Eigen::VectorXd& v);

// ---------------------------------------------------------------------------
// Training

struct NetworkHyper {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Multiplies the learning rate after every epoch.
  double lr_decay = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

struct NetworkTrainResult {
  Network network;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Seeded minibatch SGD with momentum; cross-entropy over softmax or sigmoid.
NetworkTrainResult train_network(const NetworkArch& arch, const Dataset& train_set,
                                 const FrontEndConfig* frontend, const NetworkHyper& hyper,
                                 const EpochCallback& on_epoch = {});

/// Clean accuracy in percent, applying the front end when given.
double network_accuracy(const Network& net, const Dataset& ds, const FrontEndConfig* frontend,
                        std::vector<int>* predictions = nullptr);

/// Copy of `ds` with every image replaced by its sparsified version.
Dataset sparsify_dataset(const Dataset& ds, const FrontEndConfig& frontend);

// ---------------------------------------------------------------------------
// Local linearity

/// ReLU on/off indicators (on iff pre-activation > 0) and max-pool argmax
/// positions (lowest index on ties), in layer order.
struct SwitchState {
  std::vector<std::vector<std::uint8_t>> relu;
  std::vector<std::vector<std::int32_t>> pool_argmax;

  std::size_t relu_units() const;
  friend bool operator==(const SwitchState&, const SwitchState&) = default;
};

/// logit_i(x) = w_eq.col(i) . x - b_eq[i] while the switch state is unchanged.
struct LocalLinearModel {
  Eigen::MatrixXd w_eq;
  Eigen::VectorXd b_eq;
  SwitchState switches;

  double logit(int i, const Signal& x) const { return w_eq.col(i).dot(x) - b_eq[i]; }
};

SwitchState switch_states(const Network& net, const Signal& x);
/// Composes the affine maps selected by switch_states(x) in double precision.
LocalLinearModel local_linear(const Network& net, const Signal& x);

struct FlipCount {
  std::size_t flipped = 0;
  std::size_t total = 0;
  double fraction() const { return total ? static_cast<double>(flipped) / static_cast<double>(total) : 0.0; }
};

FlipCount flip_count(const Network& net, const Signal& x, const Signal& e);
FlipCount flip_count(const SwitchState& a, const SwitchState& b);

// ---------------------------------------------------------------------------
// Input gradients

enum class LossKind { cross_entropy, logit_diff };
enum class GradMode { bpda_identity, projection, iterated_projection };

GradMode parse_grad_mode(std::string_view name);
std::string_view to_string(GradMode mode) noexcept;

/// How the attack differentiates through the front end.
struct GradientSpec {
  GradMode mode = GradMode::bpda_identity;
  /// Support refinements for iterated_projection.
  int refine_steps = 20;
  /// Perturbation size used to probe the support during refinement.
  double probe_budget = 0.0;
  /// Run the network in double precision.
  bool exact = false;
};

/// cross_entropy: J = -log p_label. logit_diff: J = score_other - score_label.
struct GradTarget {
  int label = 0;
  int other = -1;
};

struct GradientBatch {
  /// d J / d x, one column per input column.
  Eigen::MatrixXd gradient;
  /// Class scores of the defended pipeline at the inputs.
  Eigen::MatrixXd scores;
};

GradientBatch grad_input_batch(const Network& net, const FrontEndConfig* frontend,
                               const Eigen::MatrixXd& inputs, std::span<const GradTarget> targets,
                               LossKind loss, const GradientSpec& spec);

Signal grad_input(const Network& net, const FrontEndConfig* frontend, const Signal& x,
                  GradTarget target, LossKind loss, const GradientSpec& spec);

/// For each input column b and class i, d(score_i - score_label_b)/dx at
/// column b, returned as gradients[b].col(i) (zero for i == label_b), plus the
/// pipeline class scores at the inputs.
struct PairGradients {
  std::vector<Eigen::MatrixXd> gradients;
  Eigen::MatrixXd scores;
};

PairGradients pair_gradients(const Network& net, const FrontEndConfig* frontend,
                             const Eigen::MatrixXd& inputs, std::span<const int> labels,
                             const GradientSpec& spec);

/// Class scores of the pipeline: network(sparsify(x)) when a front end is given.
Eigen::MatrixXd pipeline_scores(const Network& net, const FrontEndConfig* frontend,
                                const Eigen::MatrixXd& inputs);

// ---------------------------------------------------------------------------
// Checkpoints: "SFNN", u32 version, u32 length + descriptor text (arch and
// training metadata), then each parameterized layer as weight and bias
// tensors: u32 rank, u32 dims..., little-endian f32 values (row-major).

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace sparsefront
