#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sslcrop/tensor.hpp"

namespace sslcrop::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a primitive's adjoint rule sees during the reverse sweep.
/// input_grads[k] is null when input k needs no gradient; otherwise the rule
/// accumulates its contribution into it.
struct BackwardArgs {
  const Tensor& output;
  const Tensor& output_grad;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Record of executed primitives in execution (hence topological) order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Named leaf whose gradient backward() reports.
  Var parameter(std::string name, Tensor value);

  /// Appends a primitive. Inputs must already live on this tape.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Identity in the forward pass; adjoints stop here.
  Var stop_gradient(Var v);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool is_stop_gradient(std::size_t id) const { return nodes_.at(id).stop_gradient; }

  /// Names of all parameters recorded so far, in recording order.
  std::vector<std::string> parameter_names() const;

 private:
  friend std::map<std::string, Tensor> backward(const Tape& tape, Var root);

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string parameter_name;
    bool requires_grad = false;
    bool stop_gradient = false;
  };

  // deque keeps node addresses stable while the tape grows.
  std::deque<Node> nodes_;
};

using GradientMap = std::map<std::string, Tensor>;

/// Reverse sweep from a scalar root. Every parameter on the tape gets an
/// entry; parameters the root does not depend on (or only depends on through
/// stop_gradient) get exact zeros.
GradientMap backward(const Tape& tape, Var root);

// Primitives. All record onto the tape of their first argument.

/// a[.. x k] * b[k x n] -> [.. x n]; leading axes of a are flattened.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product, equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a[.. x d] + bias[d] on every row.
Var add_bias(Var a, Var bias);
/// a[.. x d] * factors[d], column-wise.
Var scale_columns(Var a, Var factors);

/// Column statistics of one batch_norm call (biased variance).
struct BatchStats {
  Tensor mean;
  Tensor variance;
  std::size_t rows = 0;
};

/// Normalizes each column over the rows with the batch's own mean and
/// variance, then applies gain and bias. Fills `stats` when given.
Var batch_norm(Var a, Var gain, Var bias, double eps = 1e-5, BatchStats* stats = nullptr);
Var relu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
Var sum(Var a);
Var mean(Var a);
inline Var stop_gradient(Var a) { return a.tape()->stop_gradient(a); }
/// Row-wise a / max(|a|, eps).
Var l2_normalize_rows(Var a, double eps = 1e-12);
/// Mean softmax cross-entropy; labels are column indices into logits.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

/// Scaled dot-product scores for multi-head attention.
/// q, k: [B*T x d] laid out sample-major; returns [B*H*T x T] where row
/// (b*H + h)*T + i holds q_i . k_j / sqrt(d/H) over head h's channels.
Var attention_scores(Var q, Var k, std::size_t steps, std::size_t heads);
/// Applies [B*H*T x T] attention weights to v [B*T x d] -> [B*T x d].
Var attention_apply(Var weights, Var v, std::size_t steps, std::size_t heads);
/// Max over the step axis: [B*T x d] -> [B x d]; ties route to the first step.
Var max_pool_steps(Var a, std::size_t steps);

}  // namespace sslcrop::ad
