// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "metashard/sample.hpp"

namespace metashard::datagen {

/// Synthetic family of related tasks.
///
/// Task t has a weight vector w_t = w_shared + task_spread * d_t (w_shared and
/// d_t standard normal) and a "home" slice of the vocabulary. A sample draws
/// dense features x ~ N(0, I) and `ids_per_sample` feature ids, each from the
/// home slice with probability `home_prob` and uniformly otherwise. Its score
///
///   z = signal_scale * (w_t . x / sqrt(W) + item_weight * mean_id e(id)),
///
/// with e(id) ~ N(0, 1) a fixed per-id effect, becomes the label
/// Bernoulli(sigmoid(z + noise * n)) in logistic mode or z + noise * n in
/// regression mode. The prior is symmetric, so the positive rate is ~0.5.
struct TaskFamily {
  std::size_t num_tasks = 200;
  std::size_t samples_per_task = 160;
  std::size_t vocab_size = 10000;
  std::size_t dense_width = 8;
  std::size_t ids_per_sample = 4;
  double task_spread = 0.5;
  double signal_scale = 4.0;
  double item_weight = 1.0;
  double home_prob = 0.75;
  double noise = 0.0;
  bool regression = false;
  std::uint64_t seed = 1;
  // Seed of the sample stream; latents always come from `seed`. 0 reuses `seed`.
  std::uint64_t sample_seed = 0;

  // Throws std::invalid_argument on zero sizes or vocab_size < num_tasks.
  void validate() const;
};

void to_json(nlohmann::json& j, const TaskFamily& f);
void from_json(const nlohmann::json& j, TaskFamily& f);

struct TaskLatent {
  std::vector<double> weights;
  std::uint64_t home_begin = 0;
  std::uint64_t home_size = 0;
};

std::vector<TaskLatent> task_latents(const TaskFamily& family);

/// Fixed effect of feature `id` under `seed`.
double item_effect(std::uint64_t seed, std::uint64_t id);

/// Noise-free score z of a sample (before the label draw).
double score(const TaskFamily& family, const TaskLatent& latent, const MetaSample& sample);

/// Samples interleaved across tasks (sample k belongs to task k % num_tasks).
std::vector<MetaSample> generate(const TaskFamily& family);

}  // namespace metashard::datagen
