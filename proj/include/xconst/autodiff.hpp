#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xconst/tensor.hpp"

namespace xconst::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Tape of differentiable operations. Nodes are appended in evaluation order, so
/// creation order is a topological order and backward walks it in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant input; never receives a gradient.
  Var input(Tensor value);
  /// Leaf that owns its value and accumulates a gradient.
  Var leaf(Tensor value);
  /// Leaf that refers to an external tensor (model parameter). The tensor must
  /// outlive the graph. Frozen leaves get identically zero gradients.
  Var param(const Tensor& value, bool trainable);

  /// Reverse sweep from a one-element root. Gradients accumulate across fan-out.
  void backward(Var root);

  const Tensor& value(int id) const;
  /// Gradient of a node; zeros if the node never received one.
  const Tensor& grad(Var v);
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Op construction (used by the op library).
  Var make(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  /// Mutable gradient buffer of a node, zero-initialised on first access.
  Tensor& grad_buffer(int id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Op library. Shapes must match exactly; the only broadcast is expand_rows.

Var matmul(Var a, Var b);         // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);      // [m,k] x [n,k]^T
Var transpose(Var a);             // 2-D only
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);            // elementwise
Var scale(Var a, double c);
Var exp(Var a);
Var sum(Var a);                   // -> scalar
Var mean(Var a);                  // -> scalar
Var expand_rows(Var v, int rows); // [d] or [1,d] -> [rows,d]
Var gather_rows(Var table, std::span<const int> rows);
Var select_cols(Var x, std::span<const int> cols);  // [n,c] -> [n], x[i, cols[i]]
Var layer_norm(Var x, double eps = 1e-5);           // last axis, no affine
Var gelu(Var x);                                    // erf form
Var softmax(Var x, int axis = -1);
Var log_softmax(Var x, int axis = -1);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var x, int axis, int begin, int end);
Var reshape(Var x, Shape shape);

/// Multi-head causal self-attention over a right-padded batch.
/// q, k, v: [batch*seq, d]; key_valid[b*seq+t] == 0 excludes position t of item b
/// as a key. Returns [batch*seq, d].
Var causal_attention(Var q, Var k, Var v, int batch, int seq, int heads,
                     std::span<const std::uint8_t> key_valid);

// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

/// A parameter slot the checker may perturb: the tensor's storage is modified in
/// place and restored afterwards.
struct GradCheckTarget {
  Tensor* value;
  const Tensor* analytic_grad;
};

/// Compares analytic gradients with central differences at `samples` random
/// scalar coordinates. Relative error uses max(|a|, |n|, 1e-8) as denominator.
GradCheckResult grad_check(const std::function<double()>& loss_fn,
                           std::span<const GradCheckTarget> targets, double eps, int samples,
                           std::uint64_t seed);

}  // namespace xconst::ad
