#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "bdl/tensor.hpp"

namespace bdl {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Inputs and outputs available to a node's backward rule.
class BackwardContext {
 public:
  const Tensor& out_value() const;
  const Tensor& out_grad() const;
  const Tensor& input(std::size_t k) const;
  /// Gradient accumulator for input k, or nullptr when that input needs no gradient.
  Tensor* input_grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  Tape& tape_;
  std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Linear record of a forward computation; backward() replays it in reverse.
/// A tape belongs to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. The backward rule is dropped if no input needs a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Accumulates d(loss)/d(node) into every node that requires a gradient.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Tensor& ensure_grad(std::size_t id);

  std::deque<Node> nodes_;
};

enum class Padding { valid, same };

struct Conv2dParams {
  std::size_t stride = 1;
  Padding padding = Padding::same;
};

// Differentiable primitives. Shapes are checked eagerly and mismatches raise ShapeError
// naming the op and the offending shapes.

Var matmul(const Var& a, const Var& b);                 // (m,k) x (k,n)
Var add(const Var& a, const Var& b);                    // same shape
Var sub(const Var& a, const Var& b);                    // same shape
Var mul(const Var& a, const Var& b);                    // elementwise, same shape
Var div(const Var& a, const Var& b);                    // elementwise, same shape
Var add_bias(const Var& x, const Var& bias);            // bias (n) broadcast over last axis of x
Var scale(const Var& a, float factor);
Var add_scalar(const Var& a, float value);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sum(const Var& a);                                  // scalar
Var mean(const Var& a);                                 // scalar
Var l2_norm(const Var& a);                              // scalar, norm of all entries
Var row_sum(const Var& a);                              // (m,n) -> (m)
Var row_l2_norm(const Var& a);                          // (m,n) -> (m)
Var softmax(const Var& logits);                         // row-wise over last axis, rank 1 or 2
/// Mean over rows of -sum(target * log(prob)). `targets` is a constant distribution.
Var cross_entropy(const Var& probs, const Tensor& targets);
/// Numerically stable fused softmax + cross_entropy over logits.
Var softmax_cross_entropy(const Var& logits, const Tensor& targets);
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dParams params);  // NHWC, (k,k,Cin,Cout)
Var global_avg_pool(const Var& x);                      // (b,H,W,C) -> (b,C)
Var reshape(const Var& a, Shape shape);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
Var pairwise_sq_dist(const Var& a);                     // (m,d) -> (m,m)

/// One-hot rows of width n_classes.
Tensor one_hot(std::span<const int> labels, std::size_t n_classes);

}  // namespace bdl
