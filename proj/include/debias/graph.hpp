#pragma once

// Minimal reverse-mode differentiation for small dense classifiers.
//
// A ComputeGraph is a chain of primitive ops (matmul, add-bias, relu,
// gradient reversal). forward() records the values each op needs on a tape;
// backward() consumes the tape, visiting ops in exact reverse order and
// accumulating one gradient per parameter. The softmax cross-entropy terminal
// is fused and lives outside the chain so several heads can share an input.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "debias/rng.hpp"
#include "debias/tensor.hpp"

namespace debias {

enum class OpKind { kMatMul, kAddBias, kRelu, kGradReversal };

struct Op {
  OpKind kind;
  std::size_t param = 0;  // parameter index for kMatMul / kAddBias
  double lambda = 0.0;    // reversal strength for kGradReversal
};

struct Parameter {
  std::string name;
  Tensor2 value;
};

/// One gradient per parameter, same order and shapes as ComputeGraph::parameters().
struct GradientSet {
  std::vector<Tensor2> grads;

  void zero();
  bool all_finite() const;
  void add(const GradientSet& other);
};

/// Gradient reversal junction: identity forward, -lambda * upstream backward.
struct GradReversal {
  double lambda = 1.0;

  Tensor2 forward(const Tensor2& x) const { return x; }
  Tensor2 backward(const Tensor2& upstream) const;
};

class ComputeGraph {
 public:
  ComputeGraph() = default;
  explicit ComputeGraph(std::size_t input_width);

  /// Appends matmul + add-bias with He-uniform weights and zero bias.
  ComputeGraph& dense(const std::string& name, std::size_t out_width, Rng& rng);
  /// Appends matmul + add-bias with the given weight (in x out) and bias (1 x out).
  ComputeGraph& dense(const std::string& name, Tensor2 weight, Tensor2 bias);
  ComputeGraph& relu();
  ComputeGraph& grad_reversal(double lambda);

  std::size_t input_width() const { return input_width_; }
  std::size_t output_width() const { return width_; }
  const std::vector<Op>& ops() const { return ops_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);

  /// Sets lambda on every reversal node.
  void set_reversal_lambda(double lambda);

  /// Runs the chain and records the tape. Throws ShapeError / NumericError.
  Tensor2 forward(const Tensor2& x);
  /// Same as forward() without touching the tape; safe on a shared snapshot.
  Tensor2 evaluate(const Tensor2& x) const;

  /// Backpropagates `grad_output` (d loss / d output) through the recorded tape,
  /// adding parameter gradients into `grads`. Returns d loss / d input.
  /// The tape is consumed; a second call without forward() throws StaleTapeError.
  Tensor2 backward(const Tensor2& grad_output, GradientSet& grads);

  bool has_tape() const { return tape_valid_; }
  void invalidate_tape() { tape_valid_ = false; }
  /// Output of the last recorded forward pass.
  const Tensor2& tape_output() const;

  GradientSet zero_gradients() const;

  /// FNV-1a over parameter bytes; used for freeze and determinism checks.
  std::uint64_t checksum() const;

 private:
  Tensor2 run(const Tensor2& x, std::vector<Tensor2>* tape) const;

  std::size_t input_width_ = 0;
  std::size_t width_ = 0;
  std::vector<Op> ops_;
  std::vector<Parameter> params_;
  std::vector<Tensor2> tape_;  // input of each op, then the final output
  bool tape_valid_ = false;
};

/// loss_i = -log softmax(logits_i)[labels_i], log-sum-exp stabilized.
std::vector<double> per_sample_xent(const Tensor2& logits, std::span<const int> labels);

/// d/d logits of sum_i loss_weights[i] * loss_i.
Tensor2 xent_gradient(const Tensor2& logits, std::span<const int> labels,
                      std::span<const double> loss_weights);

/// Row-wise softmax.
Tensor2 softmax(const Tensor2& logits);

/// Row-wise argmax; ties go to the lower index.
std::vector<int> argmax_rows(const Tensor2& logits);

/// Gradients of sum_i loss_weights[i] * xent_i for the graph's last forward pass.
GradientSet backward(ComputeGraph& graph, std::span<const int> labels,
                     std::span<const double> loss_weights);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

void validate(const SgdConfig& cfg);

/// In-place momentum SGD: g += wd * w; v = momentum * v + g; w -= lr * v.
void sgd_step(std::span<Parameter> params, std::span<const Tensor2> grads,
              std::span<Tensor2> velocity, const SgdConfig& cfg);

/// Owns the momentum buffers for one graph.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) { validate(cfg_); }
  void step(ComputeGraph& graph, const GradientSet& grads);
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<Tensor2> velocity_;
};

}  // namespace debias
