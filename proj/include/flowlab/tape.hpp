#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "flowlab/tensor.hpp"

namespace flowlab {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Single-owner computation graph with reverse-mode differentiation.
// Nodes are appended in evaluation order, so the record order is already a
// topological order; backward() walks it once in reverse.
//
// Reductions and matrix products accumulate strictly left-to-right, and every
// elementwise op treats matrix rows independently. Batched graphs therefore
// reproduce the single-row graphs bit-for-bit, which the importance-ratio
// identities rely on.
class Tape {
 public:
  // Leaf bound to an external gradient slot; backward() accumulates into it.
  // A null sink makes the leaf a frozen input (no gradient recorded).
  Value leaf(const Tensor& value, Tensor* grad_sink);
  Value constant(Tensor value);
  Value constant_scalar(double v);

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  // alpha*a + beta*b, elementwise.
  Value axpy(double alpha, Value a, double beta, Value b);
  Value scale(Value a, double alpha);
  // y = x*W + b with x either [k] or [m,k], W [k,n], b [n].
  Value affine(Value x, Value w, Value b);
  Value tanh(Value a);
  Value silu(Value a);
  Value square(Value a);
  Value exp(Value a);
  Value log(Value a);
  Value sum(Value a);       // all elements -> scalar
  Value row_sum(Value a);   // [m,n] -> [m]
  Value concat(Value a, Value b);  // vectors: concatenate; matrices: concatenate columns
  // Elementwise min, selecting by value; gradient flows only to the selected
  // input (ties go to a).
  Value min2(Value a, Value b);
  // Elementwise clamp to [lo, hi]; gradient is zero where the input was clipped.
  Value clip(Value a, double lo, double hi);

  const Tensor& value(Value v) const;
  double item(Value v) const { return value(v).item(); }

  // Reverse pass from a scalar root; every node is visited exactly once and
  // leaf gradients are *added* to their bound slots.
  void backward(Value root);

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf, kConst, kMul, kAxpy, kScale, kAffine,
    kTanh, kSilu, kSquare, kExp, kLog, kSum, kRowSum, kConcat, kMin2, kClip,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double alpha = 0.0, beta = 0.0;
    Tensor value;
    Tensor grad;            // adjoint, allocated during backward
    Tensor* sink = nullptr; // leaves only
  };

  Value push(Node node);
  const Node& node(Value v) const;
  Node& mutable_node(Value v);

  // deque keeps value() references stable while new nodes are appended
  std::deque<Node> nodes_;
};

// Sum over elements of log N(x_i; mean_i, std^2), differentiable through
// both x and mean. Composed from tape primitives.
Value gaussian_log_density(Tape& t, Value x, Value mean, double std);

// Row-wise variant: x, mean [m,n] -> [m] of per-row summed log densities.
Value gaussian_log_density_rows(Tape& t, Value x, Value mean, double std);

}  // namespace flowlab
