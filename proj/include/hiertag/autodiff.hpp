// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a per-pass tape.
//
// A Tape is created fresh for every forward pass. Parameters enter the tape
// by reference through Tape::param(); their gradients accumulate directly
// into Parameter::grad during backward(). Callers zero parameter gradients
// before each backward (ParameterSet-style zero_grad). A tape can be
// backpropagated once; a second backward() throws ContractError.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hiertag/tensor.hpp"

namespace hiertag {

struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable input owned by the tape; its gradient is readable via grad().
  Var leaf(Tensor value);
  // Parameter input; gradient accumulates into p.grad. p must outlive the tape.
  Var param(Parameter& p);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient of a node after backward(). Zero-filled if nothing reached it.
  Tensor grad(Var v) const;

  // Accumulation buffer used by backward rules; allocated on first touch.
  Tensor& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const;

  Var record(Tensor value, bool requires_grad, BackwardFn backward);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    Tensor* grad_sink = nullptr;
    bool grad_touched = false;
    bool requires_grad = false;
    BackwardFn backward;
    const Tensor& value() const { return ref ? *ref : owned; }
  };

  // deque keeps value references stable as the tape grows.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Matrix product of rank-2 (or rank-1 treated as 1×n) tensors.
Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var scale(Var a, double factor);

// a[m×n] + bias[n] broadcast across rows.
Var add_row(Var a, Var bias);

// Last-axis softmax, max-subtracted.
Var softmax(Var logits);

// Mean over rows with a valid target of -log(max(q[target], 1e-12)).
// probs: [N×n] predicted distributions. Targets < 0 are ignored.
Var cross_entropy(Var probs, std::span<const int> targets);

// Fused softmax + cross-entropy on logits [N×n]; mean over rows whose target
// is >= 0. Gradient to logits is (q - onehot) / count.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

// Concatenate along `axis`; all other extents must agree.
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);

// Rows [begin, begin + count) of a rank-2 tensor.
Var slice_rows(Var a, std::size_t begin, std::size_t count);

// Row gather from table [V×d]; output [ids.size() × d].
Var embedding_lookup(Var table, std::span<const std::size_t> ids);

// Per-row select: out[r] = mask[r] ? on[r] : off[r]. mask entries are 0/1.
Var where_rows(std::span<const double> mask, Var on, Var off);

// out[r] = x[r] * weights[r] for constant row weights.
Var scale_rows(Var x, std::span<const double> weights);

Var sum(Var a);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace hiertag
