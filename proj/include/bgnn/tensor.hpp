#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bgnn/matrix.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

/// Shared handle to a value/gradient pair. Copies alias the same storage, so a
/// parameter held by a model and referenced from a tape is one object; use
/// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  std::size_t rows() const noexcept { return node_->value.rows(); }
  std::size_t cols() const noexcept { return node_->value.cols(); }

  const Matrix& value() const noexcept { return node_->value; }
  /// Mutable access for optimizers and feature updates.
  Matrix& mutable_value() const noexcept { return node_->value; }
  double item() const;

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool on) const noexcept { node_->requires_grad = on; }

  bool has_grad() const noexcept { return node_->has_grad; }
  /// Gradient; throws ContractError when none has been accumulated.
  const Matrix& grad() const;
  /// Gradient buffer, allocated as zeros on first use.
  Matrix& grad_buffer() const;
  void zero_grad() const;
  void clear_grad() const noexcept;

  Tensor clone() const;
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Define-by-run reverse-mode tape. Operations that touch at least one
/// requires_grad input are recorded; backward() replays them once in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_out)>;

  Tape() = default;
  /// A non-recording tape evaluates operations without tracking gradients.
  explicit Tape(bool recording) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Wraps `value` as the output of an operation on `inputs`.
  Tensor record(std::string_view op, std::vector<Tensor> inputs, Matrix value, BackwardFn backward);

  /// Populates gradients of every requires_grad tensor reachable from `loss`.
  /// `loss` must be a 1x1 output of this tape; a tape can be replayed once.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }
  /// Number of backward rules executed by the last backward() call.
  std::size_t visited() const noexcept { return visited_; }

 private:
  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
  bool recording_ = true;
  std::size_t visited_ = 0;
};

// Differentiable operations. Index spans name rows of the node/edge tensors;
// `dst`/`src` are per-edge endpoint lists of length |E|.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// x[m x n] + bias[1 x n] broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& x, double factor);
/// x * s where s is a learnable 1x1 tensor.
Tensor mul_scalar(Tape& tape, const Tensor& x, const Tensor& s);
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
/// Gather rows; repeated indices are allowed and their gradients accumulate.
Tensor select_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows);
Tensor sum(Tape& tape, const Tensor& x);

Tensor elu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, double negative_slope);
/// Inverted dropout. Identity when `training` is false or p == 0.
Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, CounterRng& rng);
/// Divides every row by its L2 norm (rows of norm below eps are scaled by 1/eps).
Tensor row_normalize(Tape& tape, const Tensor& x, double eps = 1e-12);

/// out[v] = sum of messages[e] over edges e with dst[e] == v.
Tensor scatter_sum(Tape& tape, const Tensor& messages, std::span<const std::size_t> dst, std::size_t n);
/// Per-column softmax of logits[|E| x H] within each destination segment.
Tensor segment_softmax(Tape& tape, const Tensor& logits, std::span<const std::size_t> dst, std::size_t n);
/// out[v, head block h] = sum_e weights[e, h] * x[src[e], head block h] over edges into v.
/// Fused gather / edge-weight / scatter_sum; x is n x (heads*F), weights |E| x heads.
Tensor weighted_aggregate(Tape& tape, const Tensor& x, const Tensor& weights,
                          std::span<const std::size_t> src, std::span<const std::size_t> dst,
                          std::size_t heads);
/// out[v, h] = <x[v, head block h], a[0, head block h]>.
Tensor head_dot(Tape& tape, const Tensor& x, const Tensor& a, std::size_t heads);
/// Averages the head blocks of x[n x heads*F] into n x F.
Tensor head_mean(Tape& tape, const Tensor& x, std::size_t heads);
/// out[e] = <a[src[e]], b[dst[e]]>, shape |E| x 1.
Tensor edge_dot(Tape& tape, const Tensor& a, const Tensor& b, std::span<const std::size_t> src,
                std::span<const std::size_t> dst);

/// Mean squared error over the listed rows and all columns.
Tensor mse_loss(Tape& tape, const Tensor& pred, const Matrix& target, std::span<const std::size_t> rows);
/// Mean negative log-softmax probability of the true class over the listed rows.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels,
                             std::span<const std::size_t> rows);

/// Throws NumericError naming `where` if the value (or gradient, when present) is not finite.
void check_finite(const Tensor& t, std::string_view where);

/// value <- value - lr * grad for every tensor that has a gradient.
void sgd_step(std::span<const Tensor> params, double lr);

/// Adam with bias correction. Moment buffers are keyed by position in the
/// parameter list, so the same list must be passed on every step.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<const Tensor> params);
  double lr() const noexcept { return lr_; }
  std::int64_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace bgnn
