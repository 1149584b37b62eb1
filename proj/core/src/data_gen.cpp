// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/data_gen.hpp"

#include <cmath>
#include <stdexcept>

#include "metashard/rng.hpp"

namespace metashard::datagen {

void TaskFamily::validate() const {
  if (num_tasks == 0 || samples_per_task == 0 || vocab_size == 0 || dense_width == 0 ||
      ids_per_sample == 0) {
    throw std::invalid_argument("task family sizes must be positive");
  }
  if (vocab_size < num_tasks) throw std::invalid_argument("vocab_size must be >= num_tasks");
  if (home_prob < 0.0 || home_prob > 1.0) throw std::invalid_argument("home_prob must lie in [0, 1]");
  if (noise < 0.0) throw std::invalid_argument("noise must be non-negative");
}

void to_json(nlohmann::json& j, const TaskFamily& f) {
  j = {{"num_tasks", f.num_tasks},       {"samples_per_task", f.samples_per_task},
       {"vocab_size", f.vocab_size},     {"dense_width", f.dense_width},
       {"ids_per_sample", f.ids_per_sample}, {"task_spread", f.task_spread},
       {"signal_scale", f.signal_scale}, {"item_weight", f.item_weight},
       {"home_prob", f.home_prob},       {"noise", f.noise},
       {"regression", f.regression},     {"seed", f.seed},
       {"sample_seed", f.sample_seed}};
}

void from_json(const nlohmann::json& j, TaskFamily& f) {
  TaskFamily d;
  f.num_tasks = j.value("num_tasks", d.num_tasks);
  f.samples_per_task = j.value("samples_per_task", d.samples_per_task);
  f.vocab_size = j.value("vocab_size", d.vocab_size);
  f.dense_width = j.value("dense_width", d.dense_width);
  f.ids_per_sample = j.value("ids_per_sample", d.ids_per_sample);
  f.task_spread = j.value("task_spread", d.task_spread);
  f.signal_scale = j.value("signal_scale", d.signal_scale);
  f.item_weight = j.value("item_weight", d.item_weight);
  f.home_prob = j.value("home_prob", d.home_prob);
  f.noise = j.value("noise", d.noise);
  f.regression = j.value("regression", d.regression);
  f.seed = j.value("seed", d.seed);
  f.sample_seed = j.value("sample_seed", d.sample_seed);
}

std::vector<TaskLatent> task_latents(const TaskFamily& family) {
  family.validate();
  SplitMix64 shared_rng(hash_combine(family.seed, 0x73686172ULL));
  std::vector<double> shared(family.dense_width);
  for (double& w : shared) w = shared_rng.normal();

  const std::uint64_t slice = family.vocab_size / family.num_tasks;
  std::vector<TaskLatent> latents(family.num_tasks);
  for (std::size_t t = 0; t < family.num_tasks; ++t) {
    SplitMix64 rng(hash_combine(family.seed, 0x7461736bULL + t));
    auto& lat = latents[t];
    lat.weights.resize(family.dense_width);
    for (std::size_t k = 0; k < family.dense_width; ++k) {
      lat.weights[k] = shared[k] + family.task_spread * rng.normal();
    }
    lat.home_begin = t * slice;
    lat.home_size = slice;
  }
  return latents;
}

double item_effect(std::uint64_t seed, std::uint64_t id) {
  SplitMix64 rng(hash_combine(hash_combine(seed, 0x6974656dULL), id));
  return rng.normal();
}

double score(const TaskFamily& family, const TaskLatent& latent, const MetaSample& sample) {
  double dot = 0.0;
  for (std::size_t k = 0; k < family.dense_width; ++k) dot += latent.weights[k] * sample.dense[k];
  double items = 0.0;
  for (auto id : sample.feature_ids) items += item_effect(family.seed, id);
  items /= static_cast<double>(sample.feature_ids.size());
  return family.signal_scale *
         (dot / std::sqrt(static_cast<double>(family.dense_width)) + family.item_weight * items);
}

std::vector<MetaSample> generate(const TaskFamily& family) {
  const auto latents = task_latents(family);
  const std::uint64_t stream_seed = family.sample_seed == 0 ? family.seed : family.sample_seed;
  SplitMix64 rng(hash_combine(stream_seed, 0x73616d70ULL));

  const std::size_t total = family.num_tasks * family.samples_per_task;
  std::vector<MetaSample> samples;
  samples.reserve(total);
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t t = k % family.num_tasks;
    const auto& lat = latents[t];
    MetaSample s;
    s.task_id = t;
    s.dense.resize(family.dense_width);
    for (double& x : s.dense) x = rng.normal();
    s.feature_ids.resize(family.ids_per_sample);
    for (auto& id : s.feature_ids) {
      id = rng.uniform() < family.home_prob ? lat.home_begin + rng.below(lat.home_size)
                                            : rng.below(family.vocab_size);
    }
    const double z = score(family, lat, s) + family.noise * rng.normal();
    if (family.regression) {
      s.label = z;
    } else {
      const double p = 1.0 / (1.0 + std::exp(-z));
      s.label = rng.uniform() < p ? 1.0 : 0.0;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace metashard::datagen
