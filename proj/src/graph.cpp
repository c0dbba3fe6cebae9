#include "debias/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "debias/error.hpp"

namespace debias {

void GradientSet::zero() {
  for (auto& g : grads) g.fill(0.0);
}

bool GradientSet::all_finite() const {
  return std::all_of(grads.begin(), grads.end(), [](const Tensor2& g) { return g.all_finite(); });
}

void GradientSet::add(const GradientSet& other) {
  if (other.grads.size() != grads.size()) throw ShapeError("GradientSet::add: size mismatch");
  for (std::size_t p = 0; p < grads.size(); ++p) {
    require_same_shape(grads[p], other.grads[p], "GradientSet::add");
    auto dst = grads[p].values();
    const auto src = other.grads[p].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

Tensor2 GradReversal::backward(const Tensor2& upstream) const {
  Tensor2 out = upstream;
  for (double& v : out.values()) v *= -lambda;
  return out;
}

ComputeGraph::ComputeGraph(std::size_t input_width) : input_width_(input_width), width_(input_width) {}

ComputeGraph& ComputeGraph::dense(const std::string& name, std::size_t out_width, Rng& rng) {
  if (width_ == 0 || out_width == 0) throw ShapeError("dense: zero width");
  const double bound = std::sqrt(6.0 / static_cast<double>(width_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor2 w(width_, out_width);
  for (double& v : w.values()) v = dist(rng);
  return dense(name, std::move(w), Tensor2(1, out_width));
}

ComputeGraph& ComputeGraph::dense(const std::string& name, Tensor2 weight, Tensor2 bias) {
  if (weight.rows() != width_) throw ShapeError("dense '" + name + "': weight rows != input width");
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ShapeError("dense '" + name + "': bias must be 1 x out");
  }
  const std::size_t out = weight.cols();
  params_.push_back({name + ".weight", std::move(weight)});
  ops_.push_back({OpKind::kMatMul, params_.size() - 1, 0.0});
  params_.push_back({name + ".bias", std::move(bias)});
  ops_.push_back({OpKind::kAddBias, params_.size() - 1, 0.0});
  width_ = out;
  tape_valid_ = false;
  return *this;
}

ComputeGraph& ComputeGraph::relu() {
  ops_.push_back({OpKind::kRelu, 0, 0.0});
  tape_valid_ = false;
  return *this;
}

ComputeGraph& ComputeGraph::grad_reversal(double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("grad_reversal: lambda must be nonnegative");
  ops_.push_back({OpKind::kGradReversal, 0, lambda});
  tape_valid_ = false;
  return *this;
}

Parameter& ComputeGraph::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

void ComputeGraph::set_reversal_lambda(double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("grad_reversal: lambda must be nonnegative");
  for (auto& op : ops_) {
    if (op.kind == OpKind::kGradReversal) op.lambda = lambda;
  }
}

Tensor2 ComputeGraph::run(const Tensor2& x, std::vector<Tensor2>* tape) const {
  if (x.cols() != input_width_) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, graph expects " +
                     std::to_string(input_width_));
  }
  Tensor2 h = x;
  for (const Op& op : ops_) {
    if (tape) tape->push_back(h);
    switch (op.kind) {
      case OpKind::kMatMul:
        h = matmul(h, params_[op.param].value);
        break;
      case OpKind::kAddBias: {
        const auto b = params_[op.param].value.row(0);
        for (std::size_t r = 0; r < h.rows(); ++r) {
          auto row = h.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
        }
        break;
      }
      case OpKind::kRelu:
        for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
        break;
      case OpKind::kGradReversal:
        break;
    }
  }
  if (!h.all_finite()) throw NumericError("forward: non-finite output");
  if (tape) tape->push_back(h);
  return h;
}

Tensor2 ComputeGraph::forward(const Tensor2& x) {
  tape_.clear();
  tape_valid_ = false;
  Tensor2 out = run(x, &tape_);
  tape_valid_ = true;
  return out;
}

Tensor2 ComputeGraph::evaluate(const Tensor2& x) const { return run(x, nullptr); }

const Tensor2& ComputeGraph::tape_output() const {
  if (!tape_valid_) throw StaleTapeError("no recorded forward pass");
  return tape_.back();
}

GradientSet ComputeGraph::zero_gradients() const {
  GradientSet g;
  g.grads.reserve(params_.size());
  for (const auto& p : params_) g.grads.emplace_back(p.value.rows(), p.value.cols());
  return g;
}

Tensor2 ComputeGraph::backward(const Tensor2& grad_output, GradientSet& grads) {
  if (!tape_valid_) throw StaleTapeError("backward called without a matching forward pass");
  if (grads.grads.size() != params_.size()) throw ShapeError("backward: gradient set size mismatch");
  require_same_shape(grad_output, tape_.back(), "backward: grad_output");
  tape_valid_ = false;

  Tensor2 d = grad_output;
  for (std::size_t k = ops_.size(); k-- > 0;) {
    const Op& op = ops_[k];
    const Tensor2& input = tape_[k];
    switch (op.kind) {
      case OpKind::kMatMul: {
        const Tensor2& w = params_[op.param].value;
        Tensor2 dw = matmul_tn(input, d);
        auto acc = grads.grads[op.param].values();
        const auto src = dw.values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
        d = matmul_nt(d, w);
        break;
      }
      case OpKind::kAddBias: {
        auto acc = grads.grads[op.param].row(0);
        for (std::size_t r = 0; r < d.rows(); ++r) {
          const auto row = d.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) acc[c] += row[c];
        }
        break;
      }
      case OpKind::kRelu: {
        auto dv = d.values();
        const auto iv = input.values();
        for (std::size_t i = 0; i < dv.size(); ++i) {
          if (!(iv[i] > 0.0)) dv[i] = 0.0;
        }
        break;
      }
      case OpKind::kGradReversal:
        d = GradReversal{op.lambda}.backward(d);
        break;
    }
  }
  tape_.clear();
  if (!d.all_finite() || !grads.all_finite()) throw NumericError("backward: non-finite gradient");
  return d;
}

std::uint64_t ComputeGraph::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    for (double v : p.value.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

namespace {

void check_labels(const Tensor2& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("xent: label count != batch size");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      throw ShapeError("xent: label " + std::to_string(labels[i]) + " out of range at row " +
                       std::to_string(i));
    }
  }
}

double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

std::vector<double> per_sample_xent(const Tensor2& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const double loss = log_sum_exp(row) - row[static_cast<std::size_t>(labels[i])];
    out[i] = loss > 0.0 ? loss : 0.0;
  }
  return out;
}

Tensor2 softmax(const Tensor2& logits) {
  Tensor2 p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    auto out = p.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] = std::exp(row[c] - lse);
  }
  return p;
}

Tensor2 xent_gradient(const Tensor2& logits, std::span<const int> labels,
                      std::span<const double> loss_weights) {
  check_labels(logits, labels);
  if (loss_weights.size() != logits.rows()) throw ShapeError("xent: loss_weights length != batch size");
  Tensor2 d = softmax(logits);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto row = d.row(i);
    row[static_cast<std::size_t>(labels[i])] -= 1.0;
    for (double& v : row) v *= loss_weights[i];
  }
  return d;
}

std::vector<int> argmax_rows(const Tensor2& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

GradientSet backward(ComputeGraph& graph, std::span<const int> labels,
                     std::span<const double> loss_weights) {
  const Tensor2 d = xent_gradient(graph.tape_output(), labels, loss_weights);
  GradientSet grads = graph.zero_gradients();
  graph.backward(d, grads);
  return grads;
}

void validate(const SgdConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("sgd: lr must be > 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("sgd: momentum must be in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be >= 0");
}

void sgd_step(std::span<Parameter> params, std::span<const Tensor2> grads,
              std::span<Tensor2> velocity, const SgdConfig& cfg) {
  validate(cfg);
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw ShapeError("sgd_step: parameter/gradient/velocity counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    require_same_shape(params[p].value, grads[p], "sgd_step: gradient");
    require_same_shape(params[p].value, velocity[p], "sgd_step: velocity");
    auto w = params[p].value.values();
    const auto g = grads[p].values();
    auto v = velocity[p].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + cfg.weight_decay * w[i];
      v[i] = cfg.momentum * v[i] + gi;
      w[i] -= cfg.lr * v[i];
    }
  }
}

void Sgd::step(ComputeGraph& graph, const GradientSet& grads) {
  auto& params = graph.parameters();
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.value.rows(), p.value.cols());
  }
  sgd_step(params, grads.grads, velocity_, cfg_);
  graph.invalidate_tape();
}

}  // namespace debias
