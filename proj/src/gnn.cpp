#include "bgnn/gnn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "bgnn/errors.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

namespace {

constexpr int kFormatVersion = 1;
constexpr double kGatSlope = 0.2;

struct KindName {
  GnnKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {GnnKind::GCN, "gcn"}, {GnnKind::GAT, "gat"}, {GnnKind::AGNN, "agnn"},
    {GnnKind::APPNP, "appnp"}, {GnnKind::FCNN, "fcnn"},
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

Tensor norm_weights(const Graph& graph) {
  if (!graph.has_norm_coeffs()) throw ContractError("gnn: graph was built without normalization coefficients");
  const auto c = graph.norm_coeffs();
  return Tensor(Matrix(graph.num_edges(), 1, std::vector<double>(c.begin(), c.end())));
}

Tensor propagate(Tape& tape, const Tensor& h, const Tensor& norm, const Graph& graph) {
  return weighted_aggregate(tape, h, norm, graph.sources(), graph.destinations(), 1);
}

}  // namespace

std::string_view to_string(GnnKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

GnnKind parse_gnn_kind(std::string_view name) {
  const std::string key = lower(name);
  for (const auto& kn : kKindNames)
    if (key == kn.name) return kn.kind;
  throw ConfigError("unknown GNN kind '" + std::string(name) + "'");
}

void GnnConfig::validate() const {
  if (in_dim == 0) throw ConfigError("gnn: in_dim must be positive");
  if (hidden_dim == 0) throw ConfigError("gnn: hidden_dim must be positive");
  if (out_dim == 0) throw ConfigError("gnn: out_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("gnn: dropout must lie in [0, 1)");
  if (heads == 0 || out_heads == 0) throw ConfigError("gnn: heads must be at least 1");
  if (kind == GnnKind::GAT && hidden_dim % heads != 0)
    throw ConfigError("gnn: hidden_dim " + std::to_string(hidden_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("gnn: alpha must lie in (0, 1]");
  if (fcnn_layers < 2) throw ConfigError("gnn: fcnn_layers must be at least 2");
}

nlohmann::json GnnConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"in_dim", in_dim},
          {"hidden_dim", hidden_dim},
          {"out_dim", out_dim},
          {"dropout", dropout},
          {"heads", heads},
          {"out_heads", out_heads},
          {"residual", residual},
          {"alpha", alpha},
          {"propagation_steps", propagation_steps},
          {"fcnn_layers", fcnn_layers},
          {"pre_layers", pre_layers},
          {"seed", seed}};
}

GnnConfig GnnConfig::from_json(const nlohmann::json& j) {
  GnnConfig c;
  try {
    c.kind = parse_gnn_kind(j.at("kind").get<std::string>());
    c.in_dim = j.at("in_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.out_dim = j.at("out_dim").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.heads = j.at("heads").get<std::size_t>();
    c.out_heads = j.at("out_heads").get<std::size_t>();
    c.residual = j.value("residual", false);
    c.alpha = j.at("alpha").get<double>();
    c.propagation_steps = j.at("propagation_steps").get<std::size_t>();
    c.fcnn_layers = j.at("fcnn_layers").get<std::size_t>();
    c.pre_layers = j.at("pre_layers").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("gnn config: ") + e.what());
  }
  return c;
}

GnnModel::GnnModel(GnnConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t hid = config_.hidden_dim;
  std::size_t in = config_.in_dim;
  for (std::size_t i = 0; i < config_.pre_layers; ++i) {
    const std::string p = "pre" + std::to_string(i + 1);
    add_param(p + ".weight", in, hid, false);
    add_param(p + ".bias", 1, hid, true);
    in = hid;
  }
  const std::size_t out = config_.out_dim;
  switch (config_.kind) {
    case GnnKind::GCN:
      add_param("conv1.weight", in, hid, false);
      add_param("conv1.bias", 1, hid, true);
      add_param("conv2.weight", hid, out, false);
      add_param("conv2.bias", 1, out, true);
      break;
    case GnnKind::GAT: {
      const std::size_t oh = config_.out_heads;
      add_param("gat1.weight", in, hid, false);
      add_param("gat1.att_src", 1, hid, false);
      add_param("gat1.att_dst", 1, hid, false);
      add_param("gat1.bias", 1, hid, true);
      if (config_.residual) add_param("gat1.residual", in, hid, false);
      add_param("gat2.weight", hid, oh * out, false);
      add_param("gat2.att_src", 1, oh * out, false);
      add_param("gat2.att_dst", 1, oh * out, false);
      add_param("gat2.bias", 1, out, true);
      if (config_.residual) add_param("gat2.residual", hid, out, false);
      break;
    }
    case GnnKind::AGNN:
      add_param("embed.weight", in, hid, false);
      add_param("embed.bias", 1, hid, true);
      add_param("prop1.beta", 1, 1, true).mutable_value()(0, 0) = 1.0;
      add_param("prop2.beta", 1, 1, true).mutable_value()(0, 0) = 1.0;
      add_param("out.weight", hid, out, false);
      add_param("out.bias", 1, out, true);
      break;
    case GnnKind::APPNP:
      add_param("fc1.weight", in, hid, false);
      add_param("fc1.bias", 1, hid, true);
      add_param("fc2.weight", hid, out, false);
      add_param("fc2.bias", 1, out, true);
      break;
    case GnnKind::FCNN:
      for (std::size_t i = 0; i < config_.fcnn_layers; ++i) {
        const bool last = i + 1 == config_.fcnn_layers;
        const std::string p = "fc" + std::to_string(i + 1);
        add_param(p + ".weight", in, last ? out : hid, false);
        add_param(p + ".bias", 1, last ? out : hid, true);
        in = hid;
      }
      break;
  }
}

Tensor& GnnModel::add_param(std::string name, std::size_t rows, std::size_t cols, bool zero) {
  Matrix m(rows, cols, 0.0);
  if (!zero) {
    CounterRng rng(config_.seed, 0x9A7A, params_.size());
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& v : m.values()) v = rng.uniform(-limit, limit);
  }
  params_.emplace_back(std::move(m), true);
  names_.push_back(std::move(name));
  return params_.back();
}

const Tensor& GnnModel::parameter(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return params_[i];
  throw ConfigError("gnn: no parameter named '" + std::string(name) + "'");
}

Tensor GnnModel::forward(Tape& tape, const Graph& graph, const Tensor& x, bool training, ForwardTrace* trace) {
  if (x.cols() != config_.in_dim)
    throw ShapeError("gnn forward: features have " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(config_.in_dim));
  if (graph.num_nodes() != x.rows())
    throw ShapeError("gnn forward: graph has " + std::to_string(graph.num_nodes()) + " nodes, features have " +
                     std::to_string(x.rows()) + " rows");
  const std::uint64_t step = training ? step_++ : 0;
  std::uint64_t drop_layer = 0;
  auto drop = [&](const Tensor& t) {
    CounterRng rng(config_.seed, 0xD409 + drop_layer++, step);
    return dropout(tape, t, config_.dropout, training, rng);
  };
  bool captured = false;
  auto capture = [&](const Tensor& h) {
    if (trace && !captured) trace->hidden = h.value();
    captured = true;
  };
  auto linear = [&](const Tensor& h, const std::string& p) {
    return add_bias(tape, matmul(tape, h, parameter(p + ".weight")), parameter(p + ".bias"));
  };
  const auto src = graph.sources();
  const auto dst = graph.destinations();
  const std::size_t n = graph.num_nodes();

  Tensor h = x;
  for (std::size_t i = 0; i < config_.pre_layers; ++i) {
    h = elu(tape, linear(drop(h), "pre" + std::to_string(i + 1)));
    capture(h);
  }

  switch (config_.kind) {
    case GnnKind::GCN: {
      const Tensor norm = norm_weights(graph);
      h = matmul(tape, drop(h), parameter("conv1.weight"));
      h = elu(tape, add_bias(tape, propagate(tape, h, norm, graph), parameter("conv1.bias")));
      capture(h);
      h = matmul(tape, drop(h), parameter("conv2.weight"));
      return add_bias(tape, propagate(tape, h, norm, graph), parameter("conv2.bias"));
    }
    case GnnKind::GAT: {
      auto attend = [&](const Tensor& in, const std::string& p, std::size_t heads, bool record) {
        const Tensor wx = matmul(tape, in, parameter(p + ".weight"));
        const Tensor s = head_dot(tape, wx, parameter(p + ".att_src"), heads);
        const Tensor d = head_dot(tape, wx, parameter(p + ".att_dst"), heads);
        Tensor logits = add(tape, select_rows(tape, s, src), select_rows(tape, d, dst));
        const Tensor att = segment_softmax(tape, leaky_relu(tape, logits, kGatSlope), dst, n);
        if (record && trace) trace->attention = att.value();
        return weighted_aggregate(tape, wx, att, src, dst, heads);
      };
      auto skip = [&](const Tensor& out, const Tensor& in, const char* name) {
        return config_.residual ? add(tape, out, matmul(tape, in, parameter(name))) : out;
      };
      Tensor in = drop(h);
      h = skip(attend(in, "gat1", config_.heads, true), in, "gat1.residual");
      h = elu(tape, add_bias(tape, h, parameter("gat1.bias")));
      capture(h);
      in = drop(h);
      h = attend(in, "gat2", config_.out_heads, false);
      if (config_.out_heads > 1) h = head_mean(tape, h, config_.out_heads);
      return add_bias(tape, skip(h, in, "gat2.residual"), parameter("gat2.bias"));
    }
    case GnnKind::AGNN: {
      h = elu(tape, linear(drop(h), "embed"));
      capture(h);
      for (int layer = 1; layer <= 2; ++layer) {
        const Tensor unit = row_normalize(tape, h);
        const Tensor cosine = edge_dot(tape, unit, unit, src, dst);
        const Tensor logits = mul_scalar(tape, cosine, parameter("prop" + std::to_string(layer) + ".beta"));
        const Tensor att = segment_softmax(tape, logits, dst, n);
        if (layer == 1 && trace) trace->attention = att.value();
        h = weighted_aggregate(tape, h, att, src, dst, 1);
      }
      return linear(drop(h), "out");
    }
    case GnnKind::APPNP: {
      h = elu(tape, linear(drop(h), "fc1"));
      capture(h);
      const Tensor h0 = linear(drop(h), "fc2");
      const Tensor norm = norm_weights(graph);
      const double a = config_.alpha;
      Tensor z = h0;
      const Tensor teleport = scale(tape, h0, a);
      for (std::size_t k = 0; k < config_.propagation_steps; ++k)
        z = add(tape, scale(tape, propagate(tape, z, norm, graph), 1.0 - a), teleport);
      return z;
    }
    case GnnKind::FCNN: {
      for (std::size_t i = 1; i < config_.fcnn_layers; ++i) {
        h = elu(tape, linear(drop(h), "fc" + std::to_string(i)));
        capture(h);
      }
      return linear(drop(h), "fc" + std::to_string(config_.fcnn_layers));
    }
  }
  throw ContractError("gnn forward: unhandled kind");
}

Matrix GnnModel::predict(const Graph& graph, const Matrix& x, ForwardTrace* trace) const {
  Tape tape(false);
  GnnModel view = *this;  // shares parameter storage; the step counter is untouched
  return view.forward(tape, graph, Tensor(x), false, trace).value();
}

GnnModel GnnModel::clone() const {
  GnnModel out = *this;
  for (Tensor& p : out.params_) p = p.clone();
  return out;
}

void GnnModel::assign(const GnnModel& other) {
  if (other.names_ != names_) throw ContractError("gnn assign: parameter layouts differ");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].mutable_value() = other.params_[i].value();
  step_ = other.step_;
}

nlohmann::json GnnModel::to_json() const {
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& m = params_[i].value();
    params[names_[i]] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
  }
  return {{"format_version", kFormatVersion}, {"config", config_.to_json()}, {"steps", step_}, {"parameters", params}};
}

GnnModel GnnModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw LoadError("gnn checkpoint: unsupported format_version");
    GnnModel model(GnnConfig::from_json(j.at("config")));
    model.step_ = j.at("steps").get<std::uint64_t>();
    const auto& params = j.at("parameters");
    if (params.size() != model.params_.size()) throw LoadError("gnn checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
      const auto& entry = params.at(model.names_[i]);
      Matrix& m = model.params_[i].mutable_value();
      if (entry.at("rows").get<std::size_t>() != m.rows() || entry.at("cols").get<std::size_t>() != m.cols())
        throw LoadError("gnn checkpoint: shape mismatch for " + model.names_[i]);
      const auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != m.size()) throw LoadError("gnn checkpoint: size mismatch for " + model.names_[i]);
      std::copy(data.begin(), data.end(), m.values().begin());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("gnn checkpoint: ") + e.what());
  }
}

Tensor task_loss(Tape& tape, const Tensor& pred, const TargetVector& targets, std::span<const std::size_t> rows) {
  if (targets.task == Task::Regression) return mse_loss(tape, pred, targets.as_column(), rows);
  const auto labels = targets.class_labels();
  return softmax_cross_entropy(tape, pred, labels, rows);
}

LossAndGrads loss_and_grads(GnnModel& model, const Graph& graph, const Tensor& x, const TargetVector& targets,
                            std::span<const std::size_t> rows, bool training) {
  for (const Tensor& p : model.parameters()) p.clear_grad();
  x.clear_grad();
  Tape tape;
  const Tensor pred = model.forward(tape, graph, x, training);
  const Tensor loss = task_loss(tape, pred, targets, rows);
  tape.backward(loss);
  LossAndGrads out;
  out.loss = loss.item();
  for (const Tensor& p : model.parameters())
    out.param_grads.push_back(p.has_grad() ? p.grad() : Matrix(p.rows(), p.cols(), 0.0));
  if (x.requires_grad()) out.feature_grad = x.has_grad() ? x.grad() : Matrix(x.rows(), x.cols(), 0.0);
  return out;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config), adam_(config.lr) {
  if (!(config.lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
}

void Optimizer::step(std::span<const Tensor> params) {
  if (config_.kind == OptimizerConfig::Kind::Adam) adam_.step(params);
  else sgd_step(params, config_.lr);
}

TrainStepsResult train_steps(GnnModel& model, const Graph& graph, Tensor& x, const TargetVector& targets,
                             std::span<const std::size_t> rows, std::size_t l, Optimizer& optimizer,
                             double feature_lr, bool optimize_features) {
  if (l < 1) throw ConfigError("train_steps: need at least one step");
  if (optimize_features && !x.requires_grad())
    throw ContractError("train_steps: feature optimization needs a tensor that requires gradients");
  TrainStepsResult result;
  for (std::size_t s = 0; s < l; ++s) {
    const LossAndGrads lg = loss_and_grads(model, graph, x, targets, rows, true);
    if (!std::isfinite(lg.loss))
      throw NumericError("train_steps: non-finite loss at step " + std::to_string(s + 1));
    result.losses.push_back(lg.loss);
    optimizer.step(model.parameters());
    if (optimize_features && x.has_grad()) {
      const Tensor xs[] = {x};
      sgd_step(xs, feature_lr);
    }
  }
  return result;
}

}  // namespace bgnn
