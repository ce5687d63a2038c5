#pragma once

#include <functional>
#include <span>
#include <vector>

#include "visor/tensor.hpp"

namespace visor {

// Handle to a node on a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape;

// Result of Tape::backward: gradient tensor per node id, zero for nodes the
// loss does not reach.
class Gradients {
 public:
  const Tensor& grad(Var v) const;
  bool nonzero(Var v) const;

 private:
  friend class Tape;
  Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes);
  std::vector<Tensor> grads_;          // per node id; empty Tensor if untouched
  std::vector<Shape> shapes_;          // node value shapes
  mutable std::vector<Tensor> zeros_;  // lazily materialized zero grads
};

// Records primitive operations for reverse-mode differentiation. Creation
// order is a topological order, so the backward sweep is a single reverse
// pass with additive accumulation across fan-out. Single-threaded.
class Tape {
 public:
  // grad_enabled=false skips recording backward closures (inference mode);
  // backward() on such a tape is an error.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

  Var input(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // --- primitives ---------------------------------------------------------
  // Binary elementwise ops accept equal shapes, a single-element rhs, or an
  // rhs whose shape is a suffix of the lhs shape (row broadcast).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_scalar(Var a, Scalar c);
  Var mul_scalar(Var a, Scalar c);

  Var matmul(Var a, Var b);   // [m,k] x [k,n] -> [m,n]
  Var transpose(Var a);       // 2-D

  Var gelu(Var a);            // tanh-form smooth gelu
  Var layer_norm(Var x, Var gain, Var bias, Scalar eps);  // over last axis
  Var softmax(Var x);         // over last axis
  Var log_softmax(Var x);     // over last axis

  Var embedding(Var table, std::vector<int> ids);          // [V,d] -> [n,d]
  Var slice(Var x, std::vector<int> start, std::vector<int> extent);
  Var concat(const std::vector<Var>& xs, int axis);
  Var reshape(Var x, Shape new_shape);

  Var mean(Var x);            // -> [1]
  Var sum(Var x);             // -> [1]
  Var sse(Var a, Var b);      // sum of squared differences -> [1]
  Var pick(Var m, std::vector<int> cols);  // [n,c] -> [n], one column per row

  // Reverse sweep from a scalar loss node.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    bool requires_grad = false;
    const char* op = "";
    // Receives the node's output gradient and accumulates into input slots.
    std::function<void(const Tape&, const Tensor&, std::vector<Tensor>&)> backward;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  Var unary(const char* op, Var a, Tensor value,
            std::function<void(const Tape&, const Tensor&, std::vector<Tensor>&)> bw);
  Var binary_ew(const char* op, Var a, Var b, Scalar b_sign);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// Accumulates `delta` into `slot`, initializing the slot to zeros of `shape`
// on first touch.
void accumulate_grad(Tensor& slot, const Shape& shape, const Tensor& delta);

// Max over `coords` of the relative error between `analytic_grad` and a
// central finite-difference estimate of f at x. Throws on non-finite f or
// out-of-range coordinates.
Scalar finite_difference_check(const std::function<Scalar(const Tensor&)>& f,
                               const Tensor& x, const Tensor& analytic_grad,
                               std::span<const std::int64_t> coords, Scalar step);

namespace kernels {
// Fixed-order dot product: eight independent accumulators over the main run,
// sequential remainder, then a fixed combine. Deterministic for a given n.
Scalar dot(const Scalar* a, const Scalar* b, std::int64_t n);
// c[m,n] += / = sum_k a[m,k] * bt[n,k]  (bt is the transposed rhs)
void matmul_nt(const Scalar* a, const Scalar* bt, Scalar* c, std::int64_t m, std::int64_t n,
               std::int64_t k);
}  // namespace kernels

}  // namespace visor
