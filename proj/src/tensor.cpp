#include "bgnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bgnn/errors.hpp"

namespace bgnn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": " + a.value().shape_string() + " vs " + b.value().shape_string());
  }
}

void require_indices(std::span<const std::size_t> idx, std::size_t bound, std::string_view op) {
  for (std::size_t i : idx) {
    if (i >= bound) {
      throw IndexError(std::string(op) + ": index " + std::to_string(i) + " >= " + std::to_string(bound));
    }
  }
}

std::size_t head_width(const Tensor& x, std::size_t heads, std::string_view op) {
  if (heads == 0 || x.cols() % heads != 0) {
    throw ShapeError(std::string(op) + ": " + std::to_string(x.cols()) + " columns not divisible into " +
                     std::to_string(heads) + " heads");
  }
  return x.cols() / heads;
}

// Calls fn(grad_buffer) only when t participates in differentiation.
template <typename Fn>
void accumulate(const Tensor& t, Fn&& fn) {
  if (t.requires_grad()) fn(t.grad_buffer());
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor(Matrix(1, 1, v), requires_grad); }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item: tensor is " + value().shape_string());
  return value()(0, 0);
}

const Matrix& Tensor::grad() const {
  if (!node_->has_grad) throw ContractError("grad: no gradient has been accumulated");
  return node_->grad;
}

Matrix& Tensor::grad_buffer() const {
  if (!node_->has_grad) {
    node_->grad = Matrix(rows(), cols());
    node_->has_grad = true;
  }
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_->has_grad) node_->grad.fill(0.0);
}

void Tensor::clear_grad() const noexcept {
  node_->grad = Matrix();
  node_->has_grad = false;
}

Tensor Tensor::clone() const {
  Tensor copy(node_->value, node_->requires_grad);
  if (node_->has_grad) {
    copy.node_->grad = node_->grad;
    copy.node_->has_grad = true;
  }
  return copy;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::record(std::string_view op, std::vector<Tensor> inputs, Matrix value, BackwardFn backward) {
  const bool needs_grad = recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  Tensor out(std::move(value), needs_grad);
  if (needs_grad) {
    if (consumed_) throw ContractError("Tape::record: tape already replayed");
    entries_.push_back(Entry{std::string(op), std::move(inputs), out, std::move(backward)});
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("Tape::backward: called twice on the same recording");
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("Tape::backward: loss must be a 1x1 scalar");
  }
  auto produced = std::find_if(entries_.rbegin(), entries_.rend(),
                               [&](const Entry& e) { return e.output.same_node(loss); });
  if (produced == entries_.rend()) {
    throw ContractError("Tape::backward: loss was not produced by this tape");
  }
  consumed_ = true;
  visited_ = 0;
  loss.grad_buffer().fill(1.0);
  for (auto it = produced; it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
    ++visited_;
  }
}

// ---------------------------------------------------------------------------
// Dense algebra

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.value().shape_string() + " x " + b.value().shape_string());
  }
  return tape.record("matmul", {a, b}, bgnn::matmul(a.value(), b.value()), [a, b](const Matrix& g) {
    accumulate(a, [&](Matrix& ga) { ga.add_in_place(bgnn::matmul(g, transpose(b.value()))); });
    accumulate(b, [&](Matrix& gb) { gb.add_in_place(bgnn::matmul(transpose(a.value()), g)); });
  });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value();
  out.add_in_place(b.value());
  return tape.record("add", {a, b}, std::move(out), [a, b](const Matrix& g) {
    accumulate(a, [&](Matrix& ga) { ga.add_in_place(g); });
    accumulate(b, [&](Matrix& gb) { gb.add_in_place(g); });
  });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  return tape.record("sub", {a, b}, std::move(out), [a, b](const Matrix& g) {
    accumulate(a, [&](Matrix& ga) { ga.add_in_place(g); });
    accumulate(b, [&](Matrix& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] -= g.data()[i];
    });
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  return tape.record("mul", {a, b}, std::move(out), [a, b](const Matrix& g) {
    accumulate(a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * b.value().data()[i];
    });
    accumulate(b, [&](Matrix& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * a.value().data()[i];
    });
  });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_bias: " + x.value().shape_string() + " + " + bias.value().shape_string());
  }
  Matrix out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias.value()(0, c);
  }
  return tape.record("add_bias", {x, bias}, std::move(out), [x, bias](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) { gx.add_in_place(g); });
    accumulate(bias, [&](Matrix& gb) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    });
  });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Matrix out = x.value();
  for (double& v : out.values()) v *= factor;
  return tape.record("scale", {x}, std::move(out), [x, factor](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += factor * g.data()[i];
    });
  });
}

Tensor mul_scalar(Tape& tape, const Tensor& x, const Tensor& s) {
  const double factor = s.item();
  Matrix out = x.value();
  for (double& v : out.values()) v *= factor;
  return tape.record("mul_scalar", {x, s}, std::move(out), [x, s](const Matrix& g) {
    const double f = s.value()(0, 0);
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += f * g.data()[i];
    });
    accumulate(s, [&](Matrix& gs) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g.data()[i] * x.value().data()[i];
      gs(0, 0) += acc;
    });
  });
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: " + a.value().shape_string() + " | " + b.value().shape_string());
  }
  return tape.record("concat_cols", {a, b}, hconcat(a.value(), b.value()), [a, b](const Matrix& g) {
    const std::size_t ca = a.cols();
    accumulate(a, [&](Matrix& ga) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
    });
    accumulate(b, [&](Matrix& gb) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < gb.cols(); ++c) gb(r, c) += g(r, ca + c);
    });
  });
}

Tensor select_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows) {
  require_indices(rows, x.rows(), "select_rows");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record("select_rows", {x}, bgnn::select_rows(x.value(), rows), [x, idx = std::move(idx)](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto dst = gx.row(idx[i]);
        auto src = g.row(i);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    });
  });
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return tape.record("sum", {x}, Matrix(1, 1, total), [x](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (double& v : gx.values()) v += g(0, 0);
    });
  });
}

// ---------------------------------------------------------------------------
// Activations

Tensor elu(Tape& tape, const Tensor& x) {
  Matrix out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : std::expm1(v);
  return tape.record("elu", {x}, std::move(out), [x](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x.value().data()[i];
        gx.data()[i] += g.data()[i] * (v > 0.0 ? 1.0 : std::exp(v));
      }
    });
  });
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double negative_slope) {
  Matrix out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : negative_slope * v;
  return tape.record("leaky_relu", {x}, std::move(out), [x, negative_slope](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t i = 0; i < g.size(); ++i)
        gx.data()[i] += g.data()[i] * (x.value().data()[i] > 0.0 ? 1.0 : negative_slope);
    });
  });
}

Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (double& m : mask.values()) m = rng.uniform() >= p ? keep_scale : 0.0;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= mask.data()[i];
  return tape.record("dropout", {x}, std::move(out), [x, mask = std::move(mask)](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i] * mask.data()[i];
    });
  });
}

Tensor row_normalize(Tape& tape, const Tensor& x, double eps) {
  const std::size_t n = x.rows();
  std::vector<double> denom(n);
  Matrix out = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (double v : out.row(r)) sq += v * v;
    denom[r] = std::max(std::sqrt(sq), eps);
    for (double& v : out.row(r)) v /= denom[r];
  }
  Matrix y = out;
  return tape.record("row_normalize", {x}, std::move(out),
                     [x, eps, denom = std::move(denom), y = std::move(y)](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto yr = y.row(r);
        const auto gr = g.row(r);
        auto out_r = gx.row(r);
        if (denom[r] <= eps) {
          for (std::size_t c = 0; c < gr.size(); ++c) out_r[c] += gr[c] / eps;
          continue;
        }
        double dot = 0.0;
        for (std::size_t c = 0; c < gr.size(); ++c) dot += yr[c] * gr[c];
        for (std::size_t c = 0; c < gr.size(); ++c) out_r[c] += (gr[c] - yr[c] * dot) / denom[r];
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Graph segment primitives

Tensor scatter_sum(Tape& tape, const Tensor& messages, std::span<const std::size_t> dst, std::size_t n) {
  if (dst.size() != messages.rows()) {
    throw ShapeError("scatter_sum: " + std::to_string(dst.size()) + " destinations for " +
                     std::to_string(messages.rows()) + " messages");
  }
  require_indices(dst, n, "scatter_sum");
  const std::size_t d = messages.cols();
  Matrix out(n, d);
  for (std::size_t e = 0; e < dst.size(); ++e) {
    const double* m = messages.value().data() + e * d;
    double* o = out.data() + dst[e] * d;
    for (std::size_t c = 0; c < d; ++c) o[c] += m[c];
  }
  std::vector<std::size_t> idx(dst.begin(), dst.end());
  return tape.record("scatter_sum", {messages}, std::move(out), [messages, idx = std::move(idx)](const Matrix& g) {
    accumulate(messages, [&](Matrix& gm) {
      const std::size_t d = gm.cols();
      for (std::size_t e = 0; e < idx.size(); ++e) {
        const double* src = g.data() + idx[e] * d;
        double* o = gm.data() + e * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += src[c];
      }
    });
  });
}

Tensor segment_softmax(Tape& tape, const Tensor& logits, std::span<const std::size_t> dst, std::size_t n) {
  if (dst.size() != logits.rows()) {
    throw ShapeError("segment_softmax: " + std::to_string(dst.size()) + " destinations for " +
                     std::to_string(logits.rows()) + " logits");
  }
  require_indices(dst, n, "segment_softmax");
  const std::size_t heads = logits.cols();
  const Matrix& z = logits.value();
  Matrix seg_max(n, heads, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < dst.size(); ++e)
    for (std::size_t h = 0; h < heads; ++h) seg_max(dst[e], h) = std::max(seg_max(dst[e], h), z(e, h));
  Matrix out(z.rows(), heads);
  Matrix seg_sum(n, heads);
  for (std::size_t e = 0; e < dst.size(); ++e) {
    for (std::size_t h = 0; h < heads; ++h) {
      out(e, h) = std::exp(z(e, h) - seg_max(dst[e], h));
      seg_sum(dst[e], h) += out(e, h);
    }
  }
  for (std::size_t e = 0; e < dst.size(); ++e)
    for (std::size_t h = 0; h < heads; ++h) out(e, h) /= seg_sum(dst[e], h);

  Matrix y = out;
  std::vector<std::size_t> idx(dst.begin(), dst.end());
  return tape.record("segment_softmax", {logits}, std::move(out),
                     [logits, n, y = std::move(y), idx = std::move(idx)](const Matrix& g) {
    accumulate(logits, [&](Matrix& gz) {
      const std::size_t heads = y.cols();
      Matrix dot(n, heads);
      for (std::size_t e = 0; e < idx.size(); ++e)
        for (std::size_t h = 0; h < heads; ++h) dot(idx[e], h) += y(e, h) * g(e, h);
      for (std::size_t e = 0; e < idx.size(); ++e)
        for (std::size_t h = 0; h < heads; ++h) gz(e, h) += y(e, h) * (g(e, h) - dot(idx[e], h));
    });
  });
}

Tensor weighted_aggregate(Tape& tape, const Tensor& x, const Tensor& weights, std::span<const std::size_t> src,
                          std::span<const std::size_t> dst, std::size_t heads) {
  const std::size_t width = head_width(x, heads, "weighted_aggregate");
  if (src.size() != dst.size() || weights.rows() != src.size() || weights.cols() != heads) {
    throw ShapeError("weighted_aggregate: weights " + weights.value().shape_string() + " for " +
                     std::to_string(src.size()) + " edges and " + std::to_string(heads) + " heads");
  }
  require_indices(src, x.rows(), "weighted_aggregate");
  require_indices(dst, x.rows(), "weighted_aggregate");
  const std::size_t d = x.cols();
  Matrix out(x.rows(), d);
  const Matrix& xv = x.value();
  const Matrix& wv = weights.value();
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double* xs = xv.data() + src[e] * d;
    double* o = out.data() + dst[e] * d;
    for (std::size_t h = 0; h < heads; ++h) {
      const double w = wv(e, h);
      for (std::size_t f = h * width; f < (h + 1) * width; ++f) o[f] += w * xs[f];
    }
  }
  std::vector<std::size_t> s(src.begin(), src.end()), t(dst.begin(), dst.end());
  return tape.record("weighted_aggregate", {x, weights}, std::move(out),
                     [x, weights, heads, width, s = std::move(s), t = std::move(t)](const Matrix& g) {
    const std::size_t d = x.cols();
    accumulate(x, [&](Matrix& gx) {
      const Matrix& wv = weights.value();
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* gd = g.data() + t[e] * d;
        double* o = gx.data() + s[e] * d;
        for (std::size_t h = 0; h < heads; ++h) {
          const double w = wv(e, h);
          for (std::size_t f = h * width; f < (h + 1) * width; ++f) o[f] += w * gd[f];
        }
      }
    });
    accumulate(weights, [&](Matrix& gw) {
      const Matrix& xv = x.value();
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* gd = g.data() + t[e] * d;
        const double* xs = xv.data() + s[e] * d;
        for (std::size_t h = 0; h < heads; ++h) {
          double acc = 0.0;
          for (std::size_t f = h * width; f < (h + 1) * width; ++f) acc += xs[f] * gd[f];
          gw(e, h) += acc;
        }
      }
    });
  });
}

Tensor head_dot(Tape& tape, const Tensor& x, const Tensor& a, std::size_t heads) {
  const std::size_t width = head_width(x, heads, "head_dot");
  if (a.rows() != 1 || a.cols() != x.cols()) {
    throw ShapeError("head_dot: attention vector " + a.value().shape_string() + " for " + x.value().shape_string());
  }
  Matrix out(x.rows(), heads);
  for (std::size_t v = 0; v < x.rows(); ++v) {
    const auto xr = x.value().row(v);
    for (std::size_t h = 0; h < heads; ++h) {
      double acc = 0.0;
      for (std::size_t f = h * width; f < (h + 1) * width; ++f) acc += xr[f] * a.value()(0, f);
      out(v, h) = acc;
    }
  }
  return tape.record("head_dot", {x, a}, std::move(out), [x, a, heads, width](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t v = 0; v < gx.rows(); ++v)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t f = h * width; f < (h + 1) * width; ++f) gx(v, f) += g(v, h) * a.value()(0, f);
    });
    accumulate(a, [&](Matrix& ga) {
      for (std::size_t v = 0; v < g.rows(); ++v)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t f = h * width; f < (h + 1) * width; ++f) ga(0, f) += g(v, h) * x.value()(v, f);
    });
  });
}

Tensor head_mean(Tape& tape, const Tensor& x, std::size_t heads) {
  const std::size_t width = head_width(x, heads, "head_mean");
  Matrix out(x.rows(), width);
  const double inv = 1.0 / static_cast<double>(heads);
  for (std::size_t v = 0; v < x.rows(); ++v)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t f = 0; f < width; ++f) out(v, f) += inv * x.value()(v, h * width + f);
  return tape.record("head_mean", {x}, std::move(out), [x, heads, width, inv](const Matrix& g) {
    accumulate(x, [&](Matrix& gx) {
      for (std::size_t v = 0; v < g.rows(); ++v)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t f = 0; f < width; ++f) gx(v, h * width + f) += inv * g(v, f);
    });
  });
}

Tensor edge_dot(Tape& tape, const Tensor& a, const Tensor& b, std::span<const std::size_t> src,
                std::span<const std::size_t> dst) {
  if (a.cols() != b.cols() || src.size() != dst.size()) {
    throw ShapeError("edge_dot: " + a.value().shape_string() + " vs " + b.value().shape_string());
  }
  require_indices(src, a.rows(), "edge_dot");
  require_indices(dst, b.rows(), "edge_dot");
  const std::size_t d = a.cols();
  Matrix out(src.size(), 1);
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double* pa = a.value().data() + src[e] * d;
    const double* pb = b.value().data() + dst[e] * d;
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += pa[c] * pb[c];
    out(e, 0) = acc;
  }
  std::vector<std::size_t> s(src.begin(), src.end()), t(dst.begin(), dst.end());
  return tape.record("edge_dot", {a, b}, std::move(out), [a, b, s = std::move(s), t = std::move(t)](const Matrix& g) {
    const std::size_t d = a.cols();
    accumulate(a, [&](Matrix& ga) {
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* pb = b.value().data() + t[e] * d;
        double* o = ga.data() + s[e] * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += g(e, 0) * pb[c];
      }
    });
    accumulate(b, [&](Matrix& gb) {
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* pa = a.value().data() + s[e] * d;
        double* o = gb.data() + t[e] * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += g(e, 0) * pa[c];
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Losses

Tensor mse_loss(Tape& tape, const Tensor& pred, const Matrix& target, std::span<const std::size_t> rows) {
  if (!pred.value().same_shape(target)) {
    throw ShapeError("mse_loss: pred " + pred.value().shape_string() + " vs target " + target.shape_string());
  }
  if (rows.empty()) throw ContractError("mse_loss: empty row mask");
  require_indices(rows, pred.rows(), "mse_loss");
  const double count = static_cast<double>(rows.size() * pred.cols());
  double total = 0.0;
  for (std::size_t r : rows) {
    for (std::size_t c = 0; c < pred.cols(); ++c) {
      const double diff = pred.value()(r, c) - target(r, c);
      total += diff * diff;
    }
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record("mse_loss", {pred}, Matrix(1, 1, total / count),
                     [pred, target, count, idx = std::move(idx)](const Matrix& g) {
    accumulate(pred, [&](Matrix& gp) {
      const double f = 2.0 * g(0, 0) / count;
      for (std::size_t r : idx)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += f * (pred.value()(r, c) - target(r, c));
    });
  });
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels,
                             std::span<const std::size_t> rows) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  if (rows.empty()) throw ContractError("softmax_cross_entropy: empty row mask");
  require_indices(rows, logits.rows(), "softmax_cross_entropy");
  const std::size_t classes = logits.cols();
  Matrix probs(rows.size(), classes);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int label = labels[rows[i]];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    const auto z = logits.value().row(rows[i]);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) probs(i, c) = std::exp(z[c] - zmax - log_denom);
    total -= z[label] - zmax - log_denom;
  }
  const double count = static_cast<double>(rows.size());
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<int> lab(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy", {logits}, Matrix(1, 1, total / count),
                     [logits, count, probs = std::move(probs), idx = std::move(idx), lab = std::move(lab)](const Matrix& g) {
    accumulate(logits, [&](Matrix& gl) {
      const double f = g(0, 0) / count;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < gl.cols(); ++c) {
          const double onehot = static_cast<int>(c) == lab[idx[i]] ? 1.0 : 0.0;
          gl(idx[i], c) += f * (probs(i, c) - onehot);
        }
      }
    });
  });
}

void check_finite(const Tensor& t, std::string_view where) {
  if (!t.value().all_finite()) throw NumericError(std::string(where) + ": non-finite value");
  if (t.has_grad() && !t.grad().all_finite()) throw NumericError(std::string(where) + ": non-finite gradient");
}

// ---------------------------------------------------------------------------
// Optimizers

void sgd_step(std::span<const Tensor> params, double lr) {
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    Matrix& v = p.mutable_value();
    const Matrix& g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] -= lr * g.data()[i];
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("Adam: learning rate must be positive");
}

void Adam::step(std::span<const Tensor> params) {
  if (m_.empty()) {
    for (const Tensor& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam::step: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = params[k];
    if (!p.has_grad()) continue;
    Matrix& val = p.mutable_value();
    const Matrix& g = p.grad();
    if (!val.same_shape(m_[k])) throw ContractError("Adam::step: parameter shape changed between steps");
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double gi = g.data()[i];
      double& m = m_[k].data()[i];
      double& v = v_[k].data()[i];
      m = beta1_ * m + (1.0 - beta1_) * gi;
      v = beta2_ * v + (1.0 - beta2_) * gi * gi;
      val.data()[i] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
  }
}

}  // namespace bgnn
