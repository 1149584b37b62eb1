// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metashard/autodiff.hpp"
#include "metashard/tensor.hpp"

namespace metashard {

enum class Activation : std::uint8_t { kLinear, kTanh, kRelu, kSigmoid };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
  Activation activation = Activation::kLinear;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Dense parameters of the recommender head (the replicated part of the model).
struct DenseParams {
  std::vector<DenseLayer> layers;

  /// Builds a net with layer widths `dims` (dims.front() inputs, dims.back()
  /// outputs). Hidden layers use `hidden`, the last layer is linear. Weights
  /// are uniform in +-sqrt(6 / (in + out)) from a keyed generator, biases 0.
  static DenseParams init(std::span<const std::size_t> dims, Activation hidden, std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_parameters() const;

  // Throws ShapeError when consecutive layers do not compose.
  void validate() const;

  /// Flattened as weight0, bias0, weight1, bias1, ... in row-major order.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

/// Graph handles of a DenseParams registered on a tape, same order as layers.
struct MlpNodes {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
  std::vector<Activation> activations;

  /// weight0, bias0, weight1, bias1, ...
  std::vector<NodeId> all() const;
};

MlpNodes add_parameters(Graph& graph, const DenseParams& params);
MlpNodes add_constants(Graph& graph, const DenseParams& params);

/// Forward pass through registered nodes; `input` is [batch, in].
NodeId forward_mlp(Graph& graph, const MlpNodes& net, NodeId input);

/// Registers `params` as graph parameters and runs the forward pass.
NodeId forward_mlp(const DenseParams& params, NodeId input, Graph& graph);

/// Reads the current values of `net` back into a DenseParams.
DenseParams read_params(const Graph& graph, const MlpNodes& net);

}  // namespace metashard
