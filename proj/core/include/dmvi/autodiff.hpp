#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "dmvi/tensor.hpp"

namespace dmvi::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// parent index is smaller than its child's and a single reverse sweep
/// visits nodes in a valid topological order.
class Tape {
 public:
  /// Receives the tape and the node's own id; reads grad(self) and
  /// accumulates into parents that require gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once. Gradients from a
  /// previous call are discarded.
  void backward(Var loss);

  /// Gradient of the last backward() loss w.r.t. v; zeros if unreached.
  const Tensor& grad(Var v);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Accumulator for node id, allocated as zeros on first touch.
  Tensor& grad_accumulator(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// Primitive set. Binary elementwise ops broadcast a [1 x c] row, an
// [r x 1] column or a single element against the other operand.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var exp(Var a);
Var softplus(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var relu(Var a);
Var clamp(Var a, double lo, double hi);
Var abs(Var a);

// Reductions.
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);  ///< [r x c] -> [r x 1]
Var l1_norm(Var a);  ///< sum of |a_i|
Var row_l1(Var a);   ///< [r x c] -> [r x 1] of per-row l1 norms

// Structural.
Var reshape(Var a, Shape shape);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

/// Constant on the same tape as `like`.
Var constant_like(Var like, Tensor value);

}  // namespace dmvi::ad
