// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

// Independent oracles and random generators shared by the test binaries.
// Nothing here goes through the autodiff tape.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "metashard/embedding.hpp"
#include "metashard/meta_io.hpp"
#include "metashard/mlp.hpp"
#include "metashard/rng.hpp"
#include "metashard/sample.hpp"
#include "metashard/tensor.hpp"

namespace metashard::testing {

inline Tensor random_tensor(SplitMix64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline DenseParams random_params(SplitMix64& rng, const std::vector<std::size_t>& dims,
                                 Activation hidden = Activation::kTanh) {
  DenseParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.layers.push_back(DenseLayer{random_tensor(rng, dims[l], dims[l + 1], -0.8, 0.8),
                                  random_tensor(rng, 1, dims[l + 1], -0.3, 0.3),
                                  l + 2 == dims.size() ? Activation::kLinear : hidden});
  }
  return p;
}

inline double activate(Activation a, double v) {
  switch (a) {
    case Activation::kLinear: return v;
    case Activation::kTanh: return std::tanh(v);
    case Activation::kRelu: return v > 0.0 ? v : 0.0;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-v));
  }
  return v;
}

/// Straight loop forward pass, k summed in ascending order from 0 like the
/// tape, so the result should match it bit for bit.
inline Tensor plain_forward(const DenseParams& p, const Tensor& input) {
  Tensor x = input;
  for (const DenseLayer& layer : p.layers) {
    Tensor y(x.rows(), layer.weight.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < y.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < x.cols(); ++k) acc += x(i, k) * layer.weight(k, j);
        y(i, j) = activate(layer.activation, acc + layer.bias(0, j));
      }
    }
    x = std::move(y);
  }
  return x;
}

/// Mean BCE-with-logits in long double using the textbook log-sigmoid form.
inline long double bce_reference(const Tensor& logits, const Tensor& labels) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double z = logits.data()[i];
    const long double y = labels.data()[i];
    const long double log_s = -std::log1p(std::exp(-z));   // log sigmoid(z)
    const long double log_1ms = -std::log1p(std::exp(z));  // log (1 - sigmoid(z))
    total -= y * log_s + (1.0L - y) * log_1ms;
  }
  return total / static_cast<long double>(logits.size());
}

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline MetaSample random_sample(SplitMix64& rng, TaskId task, std::size_t dense_width,
                                std::size_t vocab, std::size_t max_ids = 4) {
  MetaSample s;
  s.task_id = task;
  const std::size_t n_ids = 1 + rng.below(max_ids);
  for (std::size_t i = 0; i < n_ids; ++i) s.feature_ids.push_back(rng.below(vocab));
  for (std::size_t d = 0; d < dense_width; ++d) s.dense.push_back(rng.normal());
  s.label = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return s;
}

inline TaskBatch random_batch(SplitMix64& rng, TaskId task, std::size_t support, std::size_t query,
                              std::size_t dense_width, std::size_t vocab) {
  TaskBatch b;
  b.task_id = task;
  for (std::size_t i = 0; i < support; ++i) b.support.push_back(random_sample(rng, task, dense_width, vocab));
  for (std::size_t i = 0; i < query; ++i) b.query.push_back(random_sample(rng, task, dense_width, vocab));
  return b;
}

/// Task loss computed with loops only: mean-pooled rows, plain_forward, and
/// a long-double BCE or MSE. `ids` must be sorted; `rows` holds one row per id.
inline double plain_task_loss(const std::vector<FeatureId>& ids, const Tensor& rows,
                              const DenseParams& dense, const std::vector<MetaSample>& samples,
                              bool bce) {
  const std::size_t dim = rows.cols();
  const std::size_t width = samples.front().dense.size();
  Tensor input(samples.size(), dim + width);
  Tensor labels(samples.size(), 1);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& sample = samples[s];
    const double w = 1.0 / static_cast<double>(sample.feature_ids.size());
    for (FeatureId id : sample.feature_ids) {
      const auto r = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
      for (std::size_t d = 0; d < dim; ++d) input(s, d) += w * rows(r, d);
    }
    for (std::size_t d = 0; d < width; ++d) input(s, dim + d) = sample.dense[d];
    labels(s, 0) = sample.label;
  }
  const Tensor out = plain_forward(dense, input);
  if (bce) return static_cast<double>(bce_reference(out, labels));
  long double total = 0.0L;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const long double e = static_cast<long double>(out.data()[i]) - labels.data()[i];
    total += e * e;
  }
  return static_cast<double>(total / static_cast<long double>(out.size()));
}

/// Five-point central difference: truncation error O(h^4).
inline double five_point(const std::function<double(double)>& f, double h) {
  return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

/// All meta parameters as one flat vector: embedding rows first, then the
/// dense parameters in DenseParams::flatten() order.
struct FlatModel {
  std::vector<FeatureId> ids;
  Tensor rows;
  DenseParams dense;

  std::vector<double> pack() const {
    std::vector<double> v(rows.data().begin(), rows.data().end());
    const auto d = dense.flatten();
    v.insert(v.end(), d.begin(), d.end());
    return v;
  }
  void unpack(const std::vector<double>& v) {
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rows.size()), rows.data().begin());
    dense.assign_flat(std::span<const double>(v).subspan(rows.size()));
  }
  double loss(const std::vector<MetaSample>& samples, bool bce) const {
    return plain_task_loss(ids, rows, dense, samples, bce);
  }
};

/// One inner SGD step on the support loss, with the support gradient taken
/// by five-point differences of plain_task_loss. Rows the support set does
/// not touch get an exactly zero difference and so keep their value.
inline FlatModel plain_inner_step(const FlatModel& m, const TaskBatch& batch, double alpha, bool bce,
                                  double h = 1e-3) {
  const std::vector<double> x = m.pack();
  FlatModel probe = m;
  std::vector<double> adapted = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = five_point(
        [&](double t) {
          std::vector<double> y = x;
          y[i] += t;
          probe.unpack(y);
          return probe.loss(batch.support, bce);
        },
        h);
    adapted[i] = x[i] - alpha * g;
  }
  FlatModel out = m;
  out.unpack(adapted);
  return out;
}

/// Query loss after one inner step, as a function of the meta parameters.
inline double plain_meta_objective(const FlatModel& m, const TaskBatch& batch, double alpha, bool bce) {
  return plain_inner_step(m, batch, alpha, bce).loss(batch.query, bce);
}

/// Unique path under the system temp dir, removed on destruction.
class TempPath {
 public:
  explicit TempPath(const std::string& stem) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  }
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempPath(const TempPath&) = delete;
  TempPath& operator=(const TempPath&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace metashard::testing
