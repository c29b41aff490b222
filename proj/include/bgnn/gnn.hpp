#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bgnn/dataset.hpp"
#include "bgnn/graph.hpp"
#include "bgnn/matrix.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

enum class GnnKind { GCN, GAT, AGNN, APPNP, FCNN };

std::string_view to_string(GnnKind kind);
/// Case-insensitive; throws ConfigError for unknown names.
GnnKind parse_gnn_kind(std::string_view name);

struct GnnConfig {
  GnnKind kind = GnnKind::GCN;
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 64;
  std::size_t out_dim = 1;
  double dropout = 0.0;
  /// GAT: hidden_dim is split evenly across heads.
  std::size_t heads = 8;
  std::size_t out_heads = 1;
  /// GAT: add a linear skip term x W_res to each attention layer.
  bool residual = false;
  /// APPNP teleport probability and propagation steps.
  double alpha = 0.1;
  std::size_t propagation_steps = 10;
  /// Dense layers in the FCNN model.
  std::size_t fcnn_layers = 2;
  /// Dense ELU layers placed in front of the graph layers.
  std::size_t pre_layers = 0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  nlohmann::json to_json() const;
  static GnnConfig from_json(const nlohmann::json& j);
};

/// Optional outputs captured during a forward pass.
struct ForwardTrace {
  /// Activations of the first hidden layer, n x width.
  Matrix hidden;
  /// First attention layer coefficients, |E| x heads (GAT and AGNN only).
  Matrix attention;
};

class GnnModel {
 public:
  GnnModel() = default;
  /// Glorot-uniform weights and zero biases drawn from config.seed.
  explicit GnnModel(GnnConfig config);

  const GnnConfig& config() const noexcept { return config_; }
  std::span<const Tensor> parameters() const noexcept { return params_; }
  std::span<const std::string> parameter_names() const noexcept { return names_; }
  /// Parameter by name; throws ConfigError if absent.
  const Tensor& parameter(std::string_view name) const;
  /// Number of training forward passes run so far (keys dropout masks).
  std::uint64_t steps() const noexcept { return step_; }

  /// n x out_dim output. Dropout is active only when `training`.
  Tensor forward(Tape& tape, const Graph& graph, const Tensor& x, bool training, ForwardTrace* trace = nullptr);
  /// Inference pass without gradients.
  Matrix predict(const Graph& graph, const Matrix& x, ForwardTrace* trace = nullptr) const;

  /// Independent copy of the parameters and step counter.
  GnnModel clone() const;
  /// Copies parameter values from `other`, which must share the configuration.
  void assign(const GnnModel& other);

  nlohmann::json to_json() const;
  static GnnModel from_json(const nlohmann::json& j);

 private:
  Tensor& add_param(std::string name, std::size_t rows, std::size_t cols, bool zero);
  Tensor dense(Tape& tape, const Tensor& x, std::size_t layer) const;

  GnnConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::uint64_t step_ = 0;
};

/// MSE for regression, softmax cross-entropy for classification, over `rows`.
Tensor task_loss(Tape& tape, const Tensor& pred, const TargetVector& targets, std::span<const std::size_t> rows);

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Matrix> param_grads;
  /// Empty unless the feature tensor requires gradients.
  Matrix feature_grad;
};

/// One forward/backward pass. Gradients are also left on the tensors.
LossAndGrads loss_and_grads(GnnModel& model, const Graph& graph, const Tensor& x, const TargetVector& targets,
                            std::span<const std::size_t> rows, bool training = true);

struct OptimizerConfig {
  enum class Kind { Adam, Sgd };
  Kind kind = Kind::Adam;
  double lr = 0.01;
};

/// Parameter optimizer whose state persists between calls.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});
  void step(std::span<const Tensor> params);
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  Adam adam_;
};

struct TrainStepsResult {
  /// Loss before each step.
  std::vector<double> losses;
};

/// l full-batch steps. When optimize_features is set, x (which must require
/// gradients) is updated in place by plain SGD with rate feature_lr.
TrainStepsResult train_steps(GnnModel& model, const Graph& graph, Tensor& x, const TargetVector& targets,
                             std::span<const std::size_t> rows, std::size_t l, Optimizer& optimizer,
                             double feature_lr, bool optimize_features);

}  // namespace bgnn
