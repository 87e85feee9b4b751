#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Handle to a node recorded in a Graph. Only valid for the graph (and the
/// recording generation) that produced it.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  std::uint64_t generation = 0;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kAddBias,
  kConv2d,
  kRelu,
  kExp,
  kLog1mExp,
  kLogSoftmax,
  kSum,
  kMean,
  kSumRows,
  kPick,
  kMaxOther,
  kReshape,
};

std::string_view op_name(OpKind kind);

/// Define-by-run tape for reverse-mode differentiation.
///
/// Every operation evaluates eagerly and records its result, so "forward" is
/// the act of building the graph. `backward` walks the tape once in reverse
/// recording order. Nodes that cannot reach a leaf created with
/// `requires_grad` are skipped, which keeps input-gradient passes (attacks)
/// from paying for parameter gradients.
///
/// A Graph is not thread-safe; use one per thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor value, bool requires_grad = true, std::string name = {});
  Var constant(Tensor value, std::string name = {}) { return leaf(std::move(value), false, std::move(name)); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  /// [M,K] x [K,N] -> [M,N]
  Var matmul(Var a, Var b);
  /// [B,N] + bias[N] broadcast over rows.
  Var add_bias(Var a, Var bias);
  /// x[B,C,H,W] * w[O,C,k,k] + b[O]; stride 1, symmetric zero padding.
  Var conv2d(Var x, Var weight, Var bias, std::size_t padding);
  /// max(a, 0); the subgradient at 0 is 0.
  Var relu(Var a);
  Var exp(Var a);
  /// log(1 - exp(a)) for a < 0, evaluated without cancellation.
  Var log1mexp(Var a);
  /// Row-wise log-softmax of a [B,K] tensor with max subtraction.
  Var log_softmax(Var a);
  /// Sum of all elements -> [1].
  Var sum(Var a);
  /// Mean of all elements -> [1].
  Var mean(Var a);
  /// [B,K] -> [B]
  Var sum_rows(Var a);
  /// out[b] = a[b, labels[b]].
  Var pick(Var a, std::span<const int> labels);
  /// out[b] = max_{k != labels[b]} a[b,k]; ties go to the lowest index.
  Var max_other(Var a, std::span<const int> labels);
  Var reshape(Var a, Shape shape);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward root w.r.t. v. Zero-filled for nodes the
  /// root does not depend on.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Populates gradients of `root` (a single-element tensor) for every node.
  /// Repeated calls recompute from scratch and give bit-identical results.
  void backward(Var root);

  /// Drops all nodes; previously issued Vars become stale.
  void clear();

  std::size_t node_count() const noexcept { return nodes_.size(); }
  /// "<op>#<id>" label used in error messages.
  std::string node_label(Var v) const;

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::string name;
    Tensor value;
    std::vector<double> grad;
    std::size_t parents[3] = {kNone, kNone, kNone};
    bool requires_grad = false;
    double scalar = 0.0;              // scale factor or padding
    std::vector<std::size_t> index;   // labels / argmax positions
  };
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  const Node& node(Var v) const;
  Var push(Node n);
  [[noreturn]] void shape_fail(OpKind kind, const std::string& detail) const;
  void backprop_node(std::size_t id);

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool has_backward_ = false;
};

}  // namespace advlab
