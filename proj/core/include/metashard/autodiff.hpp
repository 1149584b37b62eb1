// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metashard/tensor.hpp"

namespace metashard {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAffine,           // c * x + d
  kAddRowBroadcast,  // [m,n] + [1,n]
  kSumRows,          // [m,n] -> [1,n]
  kBroadcastRows,    // [1,n] -> [m,n]
  kSumAll,           // [m,n] -> [1,1]
  kBroadcastScalar,  // [1,1] -> [m,n]
  kTanh,
  kSigmoid,
  kSoftplus,
  kRelu,
  kConcatCols,
  kSliceCols,
  kPadCols,
};

/// Append-only reverse-mode tape over 2-D tensors.
///
/// Every node stores its forward value. Inputs always have smaller ids than
/// the node that consumes them, so the node order is a topological order.
/// Backward rules are themselves expressed as graph operations, which is what
/// makes gradients differentiable again (MAML needs the gradient of a loss
/// evaluated at parameters that were produced by a gradient step).
///
/// A Graph belongs to one worker context for one training iteration.
class Graph {
 public:
  NodeId parameter(Tensor value);
  NodeId constant(Tensor value);

  const Tensor& value(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(NodeId id) const;
  OpKind kind(NodeId id) const;

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId affine(NodeId a, double scale, double shift);
  NodeId scale(NodeId a, double factor) { return affine(a, factor, 0.0); }
  NodeId add_row_broadcast(NodeId x, NodeId row);
  NodeId sum_rows(NodeId x);
  NodeId broadcast_rows(NodeId row, std::size_t rows);
  NodeId sum_all(NodeId x);
  NodeId broadcast_scalar(NodeId s, std::size_t rows, std::size_t cols);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softplus(NodeId x);
  NodeId relu(NodeId x);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_cols(NodeId x, std::size_t begin, std::size_t end);
  NodeId pad_cols(NodeId x, std::size_t offset, std::size_t width);
  NodeId mean(NodeId x);

  /// Gradients of the scalar `output` with respect to each node in `wrt`,
  /// returned in the same order. Nodes the output does not depend on get a
  /// zero constant. With `create_graph` the returned nodes stay connected to
  /// the tape and can be differentiated again; without it they are detached
  /// constants holding the gradient values.
  std::vector<NodeId> grad(NodeId output, std::span<const NodeId> wrt, bool create_graph);

 private:
  struct Node {
    OpKind kind;
    std::uint8_t arity;
    bool requires_grad;
    NodeId in0;
    NodeId in1;
    double attr0;
    double attr1;
    std::size_t dim0;
    std::size_t dim1;
    Tensor value;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  NodeId zeros_like(NodeId id);

  // Adds the contributions of node `id` with upstream adjoint `g` to `adjoint`.
  void backprop_node(NodeId id, NodeId g, std::vector<NodeId>& adjoint);
  void accumulate(std::vector<NodeId>& adjoint, NodeId target, NodeId contribution);

  std::vector<Node> nodes_;
  std::vector<bool> relevant_;  // scratch for grad()
};

/// Mean binary cross-entropy between `logits` and 0/1 `labels`, computed in
/// the overflow-free softplus form. Throws std::invalid_argument on a label
/// outside {0, 1} and ShapeError on a shape mismatch.
NodeId bce_with_logits(Graph& graph, NodeId logits, const Tensor& labels);

/// Mean squared error.
NodeId mse_loss(Graph& graph, NodeId predictions, const Tensor& targets);

}  // namespace metashard
