// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "metashard/errors.hpp"

namespace metashard {
namespace {

constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.rows(), a.cols());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw std::out_of_range("graph node id " + std::to_string(id));
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(Tensor value) {
  return push({OpKind::kLeaf, 0, true, kNone, kNone, 0, 0, 0, 0, std::move(value)});
}

NodeId Graph::constant(Tensor value) {
  return push({OpKind::kLeaf, 0, false, kNone, kNone, 0, 0, 0, 0, std::move(value)});
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }
bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }

NodeId Graph::zeros_like(NodeId id) {
  const Tensor& v = value(id);
  return constant(Tensor(v.rows(), v.cols()));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(x) + " x " +
                     shape_string(y));
  }
  Tensor out(x.rows(), y.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = x(i, k);
      if (xik == 0.0) continue;
      auto yrow = y.row(k);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < y.cols(); ++j) orow[j] += xik * yrow[j];
    }
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push({OpKind::kMatMul, 2, rg, a, b, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::transpose(NodeId a) {
  const Tensor& x = value(a);
  Tensor out(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return push({OpKind::kTranspose, 1, requires_grad(a), a, kNone, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = zip(value(a), value(b), [](double x, double y) { return x + y; });
  const bool rg = requires_grad(a) || requires_grad(b);
  return push({OpKind::kAdd, 2, rg, a, b, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::sub(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = zip(value(a), value(b), [](double x, double y) { return x - y; });
  const bool rg = requires_grad(a) || requires_grad(b);
  return push({OpKind::kSub, 2, rg, a, b, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = zip(value(a), value(b), [](double x, double y) { return x * y; });
  const bool rg = requires_grad(a) || requires_grad(b);
  return push({OpKind::kMul, 2, rg, a, b, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::affine(NodeId a, double scale, double shift) {
  Tensor out = map(value(a), [=](double x) { return scale * x + shift; });
  return push({OpKind::kAffine, 1, requires_grad(a), a, kNone, scale, shift, 0, 0, std::move(out)});
}

NodeId Graph::add_row_broadcast(NodeId x, NodeId row) {
  const Tensor& m = value(x);
  const Tensor& r = value(row);
  if (r.rows() != 1 || r.cols() != m.cols()) {
    throw ShapeError("add_row_broadcast: row " + shape_string(r) + " does not fit " +
                     shape_string(m));
  }
  Tensor out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) orow[j] += r(0, j);
  }
  const bool rg = requires_grad(x) || requires_grad(row);
  return push({OpKind::kAddRowBroadcast, 2, rg, x, row, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::sum_rows(NodeId x) {
  const Tensor& m = value(x);
  Tensor out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
  return push({OpKind::kSumRows, 1, requires_grad(x), x, kNone, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::broadcast_rows(NodeId row, std::size_t rows) {
  const Tensor& r = value(row);
  if (r.rows() != 1) throw ShapeError("broadcast_rows: expected a row, got " + shape_string(r));
  Tensor out(rows, r.cols());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) out(i, j) = r(0, j);
  return push(
      {OpKind::kBroadcastRows, 1, requires_grad(row), row, kNone, 0, 0, rows, 0, std::move(out)});
}

NodeId Graph::sum_all(NodeId x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  return push({OpKind::kSumAll, 1, requires_grad(x), x, kNone, 0, 0, 0, 0, Tensor::scalar(s)});
}

NodeId Graph::broadcast_scalar(NodeId s, std::size_t rows, std::size_t cols) {
  const double v = value(s).item();
  return push({OpKind::kBroadcastScalar, 1, requires_grad(s), s, kNone, 0, 0, rows, cols,
               Tensor(rows, cols, v)});
}

NodeId Graph::tanh(NodeId x) {
  Tensor out = map(value(x), [](double v) { return std::tanh(v); });
  return push({OpKind::kTanh, 1, requires_grad(x), x, kNone, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::sigmoid(NodeId x) {
  Tensor out = map(value(x), stable_sigmoid);
  return push({OpKind::kSigmoid, 1, requires_grad(x), x, kNone, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::softplus(NodeId x) {
  Tensor out = map(value(x), stable_softplus);
  return push({OpKind::kSoftplus, 1, requires_grad(x), x, kNone, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::relu(NodeId x) {
  Tensor out = map(value(x), [](double v) { return v > 0.0 ? v : 0.0; });
  return push({OpKind::kRelu, 1, requires_grad(x), x, kNone, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rows() != y.rows()) {
    throw ShapeError("concat_cols: row counts differ " + shape_string(x) + " vs " +
                     shape_string(y));
  }
  Tensor out(x.rows(), x.cols() + y.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::copy(x.row(i).begin(), x.row(i).end(), out.row(i).begin());
    std::copy(y.row(i).begin(), y.row(i).end(), out.row(i).begin() + x.cols());
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push({OpKind::kConcatCols, 2, rg, a, b, 0, 0, 0, 0, std::move(out)});
}

NodeId Graph::slice_cols(NodeId x, std::size_t begin, std::size_t end) {
  const Tensor& m = value(x);
  if (begin > end || end > m.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of " + shape_string(m));
  }
  Tensor out(m.rows(), end - begin);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = m(i, j);
  return push(
      {OpKind::kSliceCols, 1, requires_grad(x), x, kNone, 0, 0, begin, end, std::move(out)});
}

NodeId Graph::pad_cols(NodeId x, std::size_t offset, std::size_t width) {
  const Tensor& m = value(x);
  if (offset + m.cols() > width) {
    throw ShapeError("pad_cols: " + shape_string(m) + " at offset " + std::to_string(offset) +
                     " exceeds width " + std::to_string(width));
  }
  Tensor out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, offset + j) = m(i, j);
  return push(
      {OpKind::kPadCols, 1, requires_grad(x), x, kNone, 0, 0, offset, width, std::move(out)});
}

NodeId Graph::mean(NodeId x) {
  const std::size_t n = value(x).size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

void Graph::accumulate(std::vector<NodeId>& adjoint, NodeId target, NodeId contribution) {
  adjoint[target] = adjoint[target] == kNone ? contribution : add(adjoint[target], contribution);
}

void Graph::backprop_node(NodeId id, NodeId g, std::vector<NodeId>& adjoint) {
  // Copy out what we need: push() may reallocate nodes_.
  const OpKind k = nodes_[id].kind;
  const NodeId a = nodes_[id].in0;
  const NodeId b = nodes_[id].in1;
  const double attr0 = nodes_[id].attr0;
  const std::size_t dim0 = nodes_[id].dim0;
  auto want = [&](NodeId input) { return input != kNone && relevant_[input]; };

  switch (k) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul:
      if (want(a)) accumulate(adjoint, a, matmul(g, transpose(b)));
      if (want(b)) accumulate(adjoint, b, matmul(transpose(a), g));
      break;
    case OpKind::kTranspose:
      if (want(a)) accumulate(adjoint, a, transpose(g));
      break;
    case OpKind::kAdd:
      if (want(a)) accumulate(adjoint, a, g);
      if (want(b)) accumulate(adjoint, b, g);
      break;
    case OpKind::kSub:
      if (want(a)) accumulate(adjoint, a, g);
      if (want(b)) accumulate(adjoint, b, affine(g, -1.0, 0.0));
      break;
    case OpKind::kMul:
      if (want(a)) accumulate(adjoint, a, mul(g, b));
      if (want(b)) accumulate(adjoint, b, mul(g, a));
      break;
    case OpKind::kAffine:
      if (want(a)) accumulate(adjoint, a, affine(g, attr0, 0.0));
      break;
    case OpKind::kAddRowBroadcast:
      if (want(a)) accumulate(adjoint, a, g);
      if (want(b)) accumulate(adjoint, b, sum_rows(g));
      break;
    case OpKind::kSumRows:
      if (want(a)) accumulate(adjoint, a, broadcast_rows(g, value(a).rows()));
      break;
    case OpKind::kBroadcastRows:
      if (want(a)) accumulate(adjoint, a, sum_rows(g));
      break;
    case OpKind::kSumAll:
      if (want(a)) accumulate(adjoint, a, broadcast_scalar(g, value(a).rows(), value(a).cols()));
      break;
    case OpKind::kBroadcastScalar:
      if (want(a)) accumulate(adjoint, a, sum_all(g));
      break;
    case OpKind::kTanh:
      // d tanh = 1 - y^2, with y the node itself.
      if (want(a)) accumulate(adjoint, a, mul(g, affine(mul(id, id), -1.0, 1.0)));
      break;
    case OpKind::kSigmoid:
      if (want(a)) accumulate(adjoint, a, mul(g, mul(id, affine(id, -1.0, 1.0))));
      break;
    case OpKind::kSoftplus:
      if (want(a)) accumulate(adjoint, a, mul(g, sigmoid(a)));
      break;
    case OpKind::kRelu:
      if (want(a)) {
        const NodeId mask = constant(map(value(a), [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
        accumulate(adjoint, a, mul(g, mask));
      }
      break;
    case OpKind::kConcatCols: {
      const std::size_t split = value(a).cols();
      const std::size_t total = value(id).cols();
      if (want(a)) accumulate(adjoint, a, slice_cols(g, 0, split));
      if (want(b)) accumulate(adjoint, b, slice_cols(g, split, total));
      break;
    }
    case OpKind::kSliceCols:
      if (want(a)) accumulate(adjoint, a, pad_cols(g, dim0, value(a).cols()));
      break;
    case OpKind::kPadCols:
      if (want(a)) accumulate(adjoint, a, slice_cols(g, dim0, dim0 + value(a).cols()));
      break;
  }
}

std::vector<NodeId> Graph::grad(NodeId output, std::span<const NodeId> wrt, bool create_graph) {
  if (value(output).size() != 1) {
    throw ShapeError("grad: output must be scalar, got " + shape_string(value(output)));
  }
  for (NodeId w : wrt) (void)node(w);

  // A node is relevant when some requested node is among its ancestors.
  relevant_.assign(output + 1, false);
  for (NodeId w : wrt)
    if (w <= output) relevant_[w] = true;
  for (NodeId i = 0; i <= output; ++i) {
    const Node& n = nodes_[i];
    if (n.arity >= 1 && relevant_[n.in0]) relevant_[i] = true;
    if (n.arity >= 2 && relevant_[n.in1]) relevant_[i] = true;
  }

  std::vector<NodeId> adjoint(output + 1, kNone);
  if (relevant_[output]) adjoint[output] = constant(Tensor::scalar(1.0));
  for (NodeId i = output + 1; i-- > 0;) {
    if (adjoint[i] == kNone || nodes_[i].kind == OpKind::kLeaf) continue;
    backprop_node(i, adjoint[i], adjoint);
  }

  std::vector<NodeId> result;
  result.reserve(wrt.size());
  for (NodeId w : wrt) {
    NodeId g = (w <= output && adjoint[w] != kNone) ? adjoint[w] : zeros_like(w);
    if (!create_graph) g = constant(value(g));
    result.push_back(g);
  }
  relevant_.clear();
  return result;
}

NodeId bce_with_logits(Graph& graph, NodeId logits, const Tensor& labels) {
  const Tensor& z = graph.value(logits);
  if (z.shape() != labels.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_string(z) + " vs labels " +
                     shape_string(labels));
  }
  for (double y : labels.data()) {
    if (y != 0.0 && y != 1.0) {
      throw std::invalid_argument("bce_with_logits: label " + std::to_string(y) +
                                  " outside {0, 1}");
    }
  }
  // softplus(z) - y * z == -[y log s(z) + (1 - y) log(1 - s(z))]
  const NodeId y = graph.constant(labels);
  return graph.mean(graph.sub(graph.softplus(logits), graph.mul(y, logits)));
}

NodeId mse_loss(Graph& graph, NodeId predictions, const Tensor& targets) {
  const Tensor& p = graph.value(predictions);
  if (p.shape() != targets.shape()) {
    throw ShapeError("mse_loss: predictions " + shape_string(p) + " vs targets " +
                     shape_string(targets));
  }
  const NodeId diff = graph.sub(predictions, graph.constant(targets));
  return graph.mean(graph.mul(diff, diff));
}

}  // namespace metashard
