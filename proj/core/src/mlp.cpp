// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "metashard/errors.hpp"
#include "metashard/rng.hpp"

namespace metashard {

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

DenseParams DenseParams::init(std::span<const std::size_t> dims, Activation hidden,
                              std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("an MLP needs at least input and output widths");
  DenseParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    if (in == 0 || out == 0) throw std::invalid_argument("MLP layer widths must be positive");
    SplitMix64 rng(hash_combine(seed, 0x6d6c70ULL + l));
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer{Tensor(in, out), Tensor(1, out),
                     l + 2 == dims.size() ? Activation::kLinear : hidden};
    for (double& w : layer.weight.data()) w = rng.uniform(-limit, limit);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::size_t DenseParams::input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
std::size_t DenseParams::output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

std::size_t DenseParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void DenseParams::validate() const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols()) {
      throw ShapeError("layer " + std::to_string(l) + ": bias " + shape_string(layer.bias) +
                       " does not match weight " + shape_string(layer.weight));
    }
    if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows()) {
      throw ShapeError("layer " + std::to_string(l) + ": input width " +
                       std::to_string(layer.weight.rows()) + " != previous output width " +
                       std::to_string(layers[l - 1].weight.cols()));
    }
  }
}

std::vector<double> DenseParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_parameters());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.data().begin(), l.bias.data().end());
  }
  return flat;
}

void DenseParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != num_parameters()) {
    throw ShapeError("assign_flat: " + std::to_string(flat.size()) + " values for " +
                     std::to_string(num_parameters()) + " parameters");
  }
  std::size_t k = 0;
  for (auto& l : layers) {
    for (double& w : l.weight.data()) w = flat[k++];
    for (double& b : l.bias.data()) b = flat[k++];
  }
}

std::vector<NodeId> MlpNodes::all() const {
  std::vector<NodeId> ids;
  ids.reserve(2 * weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    ids.push_back(weights[l]);
    ids.push_back(biases[l]);
  }
  return ids;
}

namespace {

MlpNodes register_params(Graph& graph, const DenseParams& params, bool trainable) {
  params.validate();
  MlpNodes net;
  for (const auto& l : params.layers) {
    net.weights.push_back(trainable ? graph.parameter(l.weight) : graph.constant(l.weight));
    net.biases.push_back(trainable ? graph.parameter(l.bias) : graph.constant(l.bias));
    net.activations.push_back(l.activation);
  }
  return net;
}

}  // namespace

MlpNodes add_parameters(Graph& graph, const DenseParams& params) {
  return register_params(graph, params, true);
}

MlpNodes add_constants(Graph& graph, const DenseParams& params) {
  return register_params(graph, params, false);
}

NodeId forward_mlp(Graph& graph, const MlpNodes& net, NodeId input) {
  if (net.weights.empty()) throw ShapeError("forward_mlp: network has no layers");
  const std::size_t in = graph.value(net.weights.front()).rows();
  if (graph.value(input).cols() != in) {
    throw ShapeError("forward_mlp: input " + shape_string(graph.value(input)) +
                     " does not match first layer in-dim " + std::to_string(in));
  }
  NodeId h = input;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const NodeId z = graph.add_row_broadcast(graph.matmul(h, net.weights[l]), net.biases[l]);
    switch (net.activations[l]) {
      case Activation::kLinear: h = z; break;
      case Activation::kTanh: h = graph.tanh(z); break;
      case Activation::kRelu: h = graph.relu(z); break;
      case Activation::kSigmoid: h = graph.sigmoid(z); break;
    }
  }
  return h;
}

NodeId forward_mlp(const DenseParams& params, NodeId input, Graph& graph) {
  return forward_mlp(graph, add_parameters(graph, params), input);
}

DenseParams read_params(const Graph& graph, const MlpNodes& net) {
  DenseParams p;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    p.layers.push_back({graph.value(net.weights[l]), graph.value(net.biases[l]), net.activations[l]});
  }
  return p;
}

}  // namespace metashard
