// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

#include "metashard/binary_io.hpp"
#include "metashard/errors.hpp"
#include "metashard/meta_io.hpp"

namespace metashard {

void ModelConfig::validate() const {
  if (embedding_dim == 0) throw std::invalid_argument("embedding_dim must be positive");
  if (mlp_dims.size() < 2) throw std::invalid_argument("mlp_dims needs at least an input and an output width");
  if (mlp_dims.front() < embedding_dim) {
    throw std::invalid_argument("mlp_dims[0] must be embedding_dim + dense width");
  }
  if (mlp_dims.back() != 1) throw std::invalid_argument("mlp_dims must end in a single output");
  for (std::size_t d : mlp_dims) {
    if (d == 0) throw std::invalid_argument("mlp_dims entries must be positive");
  }
}

MetaModel init_model(const ModelConfig& config, const HyperParams& hyper, std::size_t me,
                     std::size_t num_workers) {
  config.validate();
  return MetaModel{EmbeddingShard(me, num_workers, config.embedding_dim, config.seed),
                   DenseParams::init(config.mlp_dims, config.hidden, config.seed), hyper};
}

PrefetchResult prefetch_embeddings(comm::WorkerGroup& group, std::size_t me, const TaskBatch& batch,
                                   EmbeddingShard& shard) {
  const std::size_t n = group.size();
  if (shard.num_workers() != n || shard.owner() != me) {
    throw std::invalid_argument("prefetch: shard does not belong to worker " + std::to_string(me));
  }
  const std::size_t dim = shard.dim();
  PrefetchResult p;
  p.ids = feature_ids(batch);
  p.owners.reserve(p.ids.size());
  std::vector<std::vector<std::uint64_t>> requests(n);
  for (FeatureId id : p.ids) {
    const std::size_t owner = shard_of(id, n);
    p.owners.push_back(owner);
    requests[owner].push_back(id);
  }
  std::vector<std::size_t> expected(n);
  for (std::size_t j = 0; j < n; ++j) expected[j] = requests[j].size();

  const auto incoming = group.all_to_all<std::uint64_t>(me, std::move(requests), "lookup");
  std::vector<std::vector<double>> responses(n);
  for (std::size_t s = 0; s < n; ++s) {
    const EmbeddingBatch rows = shard.lookup(incoming[s]);
    const auto flat = rows.vectors.data();
    responses[s].assign(flat.begin(), flat.end());
  }
  const auto answered = group.all_to_all<double>(me, std::move(responses), "lookup");

  p.rows = Tensor(p.ids.size(), dim);
  std::vector<std::size_t> cursor(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    if (answered[j].size() != expected[j] * dim) {
      throw CollectiveFault("prefetch: worker " + std::to_string(j) + " answered " +
                            std::to_string(answered[j].size()) + " values for " +
                            std::to_string(expected[j]) + " rows");
    }
  }
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    const std::size_t o = p.owners[i];
    const double* src = answered[o].data() + cursor[o]++ * dim;
    std::copy(src, src + dim, p.rows.row(i).begin());
  }
  return p;
}

namespace {

void apply_dense(DenseParams& dense, std::span<const double> grad_sum, double lr) {
  std::vector<double> flat = dense.flatten();
  if (flat.size() != grad_sum.size()) {
    throw ShapeError("dense gradient has " + std::to_string(grad_sum.size()) + " entries, model has " +
                     std::to_string(flat.size()));
  }
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k] -= lr * grad_sum[k];
  dense.assign_flat(flat);
}

void append_sparse(std::vector<SparseGrad>& out, const PrefetchResult& prefetch, const Tensor& grads) {
  for (std::size_t i = 0; i < prefetch.ids.size(); ++i) {
    const auto row = grads.row(i);
    out.push_back(SparseGrad{prefetch.ids[i], std::vector<double>(row.begin(), row.end())});
  }
}

}  // namespace

void outer_step(comm::WorkerGroup& group, std::size_t me, MetaModel& model,
                const PrefetchResult& prefetch, const MetaGradients& grads) {
  const std::size_t n = group.size();
  const std::size_t dim = model.shard.dim();
  if (grads.embedding.rows() != prefetch.ids.size() || grads.embedding.cols() != dim) {
    throw ShapeError("outer_step: embedding gradient " + shape_string(grads.embedding) +
                     " does not match the prefetch");
  }
  std::vector<std::vector<double>> buckets(n);
  for (std::size_t i = 0; i < prefetch.ids.size(); ++i) {
    auto& b = buckets[prefetch.owners[i]];
    b.push_back(std::bit_cast<double>(prefetch.ids[i]));
    const auto row = grads.embedding.row(i);
    b.insert(b.end(), row.begin(), row.end());
  }
  const auto incoming = group.all_to_all<double>(me, std::move(buckets), "gradient");

  std::vector<SparseGrad> owned;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& in = incoming[s];
    if (in.size() % (dim + 1) != 0) {
      throw CollectiveFault("outer_step: malformed gradient bucket from worker " + std::to_string(s));
    }
    for (std::size_t at = 0; at < in.size(); at += dim + 1) {
      owned.push_back(SparseGrad{std::bit_cast<FeatureId>(in[at]),
                                 std::vector<double>(in.begin() + at + 1, in.begin() + at + 1 + dim)});
    }
  }
  model.shard.apply_sparse_grads(owned, model.hyper.beta);

  const std::vector<double> sum = group.ring_all_reduce(me, grads.dense, "dense");
  apply_dense(model.dense, sum, model.hyper.beta);
}

StepResult meta_iteration(comm::WorkerGroup& group, std::size_t me, MetaModel& model,
                          const TaskBatch& batch) {
  batch.validate();
  const PrefetchResult prefetch = prefetch_embeddings(group, me, batch, model.shard);
  const MetaGradients grads = task_meta_gradients(prefetch, model.dense, batch, model.hyper);
  outer_step(group, me, model, prefetch, grads);
  return StepResult{grads.support_loss, grads.query_loss, batch.num_samples()};
}

SerialModel init_serial_model(const ModelConfig& config) {
  config.validate();
  return SerialModel{EmbeddingShard(0, 1, config.embedding_dim, config.seed),
                     DenseParams::init(config.mlp_dims, config.hidden, config.seed)};
}

std::vector<double> serial_step(SerialModel& model, std::span<const TaskBatch> batches,
                                const HyperParams& hyper) {
  std::vector<double> losses;
  std::vector<double> dense_sum(model.dense.num_parameters(), 0.0);
  std::vector<SparseGrad> sparse;
  for (const TaskBatch& batch : batches) {
    batch.validate();
    const PrefetchResult prefetch = local_prefetch(model.table, batch);
    const MetaGradients grads = task_meta_gradients(prefetch, model.dense, batch, hyper);
    losses.push_back(grads.query_loss);
    for (std::size_t k = 0; k < dense_sum.size(); ++k) dense_sum[k] += grads.dense[k];
    append_sparse(sparse, prefetch, grads.embedding);
  }
  model.table.apply_sparse_grads(sparse, hyper.beta);
  apply_dense(model.dense, dense_sum, hyper.beta);
  return losses;
}

SerialModel serial_reference(std::span<const TaskBatch> batches, SerialModel model,
                             const HyperParams& hyper) {
  serial_step(model, batches, hyper);
  return model;
}

SerialModel gather_model(std::span<const MetaModel> models) {
  if (models.empty()) throw std::invalid_argument("gather_model: no workers");
  const EmbeddingShard& first = models.front().shard;
  SerialModel out{EmbeddingShard(0, 1, first.dim(), first.seed()), models.front().dense};
  for (const MetaModel& m : models) {
    for (const auto& [id, row] : m.shard.rows()) out.table.put(id, row);
  }
  return out;
}

double max_divergence(const SerialModel& a, const SerialModel& b) {
  const std::vector<double> fa = a.dense.flatten();
  const std::vector<double> fb = b.dense.flatten();
  if (fa.size() != fb.size() || a.table.dim() != b.table.dim()) {
    throw std::invalid_argument("max_divergence: models have different shapes");
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < fa.size(); ++k) worst = std::max(worst, std::abs(fa[k] - fb[k]));

  std::set<FeatureId> ids;
  for (const auto& [id, row] : a.table.rows()) ids.insert(id);
  for (const auto& [id, row] : b.table.rows()) ids.insert(id);
  for (FeatureId id : ids) {
    const auto* ra = a.table.find(id);
    const auto* rb = b.table.find(id);
    const std::vector<double> x = ra ? *ra : initial_row(a.table.seed(), id, a.table.dim());
    const std::vector<double> y = rb ? *rb : initial_row(b.table.seed(), id, b.table.dim());
    for (std::size_t d = 0; d < x.size(); ++d) worst = std::max(worst, std::abs(x[d] - y[d]));
  }
  return worst;
}

double replica_spread(std::span<const MetaModel> models) {
  if (models.empty()) return 0.0;
  const std::vector<double> ref = models.front().dense.flatten();
  double worst = 0.0;
  for (const MetaModel& m : models.subspan(1)) {
    const std::vector<double> f = m.dense.flatten();
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(ref[k] - f[k]));
  }
  return worst;
}

void save_model(std::ostream& out, const SerialModel& model) {
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(model.dense.layers.size()));
  for (const DenseLayer& layer : model.dense.layers) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weight.rows()));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weight.cols()));
    binary::write<std::uint8_t>(out, static_cast<std::uint8_t>(layer.activation));
    for (double v : layer.weight.data()) binary::write(out, v);
    for (double v : layer.bias.data()) binary::write(out, v);
  }
  model.table.save(out);
}

SerialModel load_model(std::istream& in, std::uint64_t seed) {
  DenseParams dense;
  const auto layers = binary::read<std::uint32_t>(in);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const auto rows = binary::read<std::uint32_t>(in);
    const auto cols = binary::read<std::uint32_t>(in);
    const auto act = binary::read<std::uint8_t>(in);
    if (act > static_cast<std::uint8_t>(Activation::kSigmoid)) throw DataCorruption("bad activation tag");
    DenseLayer layer{Tensor(rows, cols), Tensor(1, cols), static_cast<Activation>(act)};
    for (double& v : layer.weight.data()) v = binary::read<double>(in);
    for (double& v : layer.bias.data()) v = binary::read<double>(in);
    dense.layers.push_back(std::move(layer));
  }
  dense.validate();
  return SerialModel{EmbeddingShard::load(in, 0, 1, seed), std::move(dense)};
}

void save_model(const std::filesystem::path& path, const SerialModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save_model(out, model);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

AdaptationReport evaluate_adaptation(const SerialModel& model, std::span<const TaskBatch> batches,
                                     const HyperParams& hyper) {
  EmbeddingShard table = model.table;
  // Forward values of both modes are identical; first-order skips the
  // second-order tape.
  HyperParams eval = hyper;
  eval.mode = GradMode::kFirstOrder;
  AdaptationReport report;
  for (const TaskBatch& batch : batches) {
    const PrefetchResult prefetch = local_prefetch(table, batch);
    report.unadapted_query_loss += evaluate_loss(prefetch, model.dense, batch.query, hyper.loss);
    InnerOutputs inner = inner_step(prefetch, model.dense, batch.support, eval);
    const QueryView view = overlap_update(inner, prefetch, batch.query);
    const NodeId loss =
        task_loss(inner.graph, view.embedding, inner.adapted_dense, prefetch, batch.query, hyper.loss);
    report.adapted_query_loss += inner.graph.value(loss).item();
    ++report.tasks;
  }
  if (report.tasks > 0) {
    report.unadapted_query_loss /= static_cast<double>(report.tasks);
    report.adapted_query_loss /= static_cast<double>(report.tasks);
  }
  return report;
}

void TrainConfig::validate() const {
  if (n_workers == 0) throw std::invalid_argument("n_workers must be >= 1");
  hyper.validate();
  model.validate();
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(support_ratio > 0.0 && support_ratio < 1.0)) {
    throw std::invalid_argument("support_ratio must lie in (0, 1)");
  }
  if (convergence_tol > 0.0 && convergence_window == 0) {
    throw std::invalid_argument("convergence_window must be >= 1");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"n_workers", c.n_workers},
                     {"alpha", c.hyper.alpha},
                     {"beta", c.hyper.beta},
                     {"inner_steps", c.hyper.inner_steps},
                     {"mode", to_string(c.hyper.mode)},
                     {"loss", to_string(c.hyper.loss)},
                     {"clip_norm", c.hyper.clip_norm},
                     {"batch_size", c.batch_size},
                     {"embedding_dim", c.model.embedding_dim},
                     {"mlp_dims", c.model.mlp_dims},
                     {"activation", to_string(c.model.hidden)},
                     {"iterations", c.iterations},
                     {"seed", c.model.seed},
                     {"data_path", c.data_path},
                     {"metrics_path", c.metrics_path},
                     {"support_ratio", c.support_ratio},
                     {"convergence_tol", c.convergence_tol},
                     {"convergence_window", c.convergence_window},
                     {"check_replicas", c.check_replicas}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{
      "n_workers",  "alpha",         "beta",     "inner_steps",     "mode",
      "loss",       "clip_norm",     "batch_size", "embedding_dim", "mlp_dims",
      "activation", "iterations",    "seed",     "data_path",       "metrics_path",
      "support_ratio", "convergence_tol", "convergence_window", "check_replicas"};
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  TrainConfig out;
  out.n_workers = j.at("n_workers").get<std::size_t>();
  out.hyper.alpha = j.at("alpha").get<double>();
  out.hyper.beta = j.at("beta").get<double>();
  out.hyper.inner_steps = j.at("inner_steps").get<std::size_t>();
  out.hyper.mode = parse_grad_mode(j.at("mode").get<std::string>());
  out.batch_size = j.at("batch_size").get<std::size_t>();
  out.model.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  out.model.mlp_dims = j.at("mlp_dims").get<std::vector<std::size_t>>();
  out.iterations = j.at("iterations").get<std::size_t>();
  out.model.seed = j.at("seed").get<std::uint64_t>();
  out.data_path = j.at("data_path").get<std::string>();
  out.metrics_path = j.at("metrics_path").get<std::string>();
  if (j.contains("loss")) out.hyper.loss = parse_loss(j["loss"].get<std::string>());
  if (j.contains("clip_norm")) out.hyper.clip_norm = j["clip_norm"].get<double>();
  if (j.contains("activation")) out.model.hidden = parse_activation(j["activation"].get<std::string>());
  if (j.contains("support_ratio")) out.support_ratio = j["support_ratio"].get<double>();
  if (j.contains("convergence_tol")) out.convergence_tol = j["convergence_tol"].get<double>();
  if (j.contains("convergence_window")) out.convergence_window = j["convergence_window"].get<std::size_t>();
  if (j.contains("check_replicas")) out.check_replicas = j["check_replicas"].get<bool>();
  out.validate();
  c = std::move(out);
}

nlohmann::json IterationRecord::to_json() const {
  return nlohmann::json{{"iter", iter},
                        {"worker", worker},
                        {"query_loss", query_loss},
                        {"samples", samples},
                        {"elapsed_ns", elapsed_ns}};
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kBudget: return "budget";
    case StopReason::kConverged: return "converged";
    case StopReason::kDataExhausted: return "data_exhausted";
  }
  return "?";
}

bool improvement_stalled(std::span<const double> history, std::size_t window, double tol) {
  if (tol <= 0.0 || window == 0 || history.size() < 2 * window) return false;
  const auto recent = history.last(window);
  const auto before = history.last(2 * window).first(window);
  double prev = 0.0;
  double cur = 0.0;
  for (double v : before) prev += v;
  for (double v : recent) cur += v;
  prev /= static_cast<double>(window);
  cur /= static_cast<double>(window);
  if (prev == 0.0) return true;
  return (prev - cur) / std::abs(prev) < tol;
}

TrainResult train_loop(const TrainConfig& config, comm::WorkerGroup& group,
                       const std::vector<std::vector<TaskBatch>>& worker_batches,
                       const IterationHook& hook) {
  config.validate();
  const std::size_t n = group.size();
  if (worker_batches.size() != n) {
    throw std::invalid_argument("train_loop: " + std::to_string(worker_batches.size()) +
                                " batch lists for " + std::to_string(n) + " workers");
  }
  std::size_t available = std::numeric_limits<std::size_t>::max();
  for (const auto& list : worker_batches) available = std::min(available, list.size());
  const std::size_t budget = std::min(config.iterations, available);

  TrainResult result;
  result.models.reserve(n);
  for (std::size_t me = 0; me < n; ++me) result.models.push_back(init_model(config.model, config.hyper, me, n));

  std::vector<std::vector<IterationRecord>> records(n);
  std::vector<std::vector<double>> histories(n);
  std::vector<bool> converged(n, false);
  std::vector<TaskBatch> hook_batches(n);
  group.reset_stats();

  const auto t0 = std::chrono::steady_clock::now();
  group.run([&](std::size_t me) {
    MetaModel& model = result.models[me];
    for (std::size_t it = 0; it < budget; ++it) {
      const auto start = std::chrono::steady_clock::now();
      const StepResult step = meta_iteration(group, me, model, worker_batches[me][it]);
      const auto stop = std::chrono::steady_clock::now();
      records[me].push_back(IterationRecord{
          it, me, step.query_loss, step.samples,
          std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count()});

      // Identical on every worker, so the stop decision is too.
      const std::vector<double> total = group.ring_all_reduce(me, {step.query_loss}, "metrics");
      histories[me].push_back(total[0] / static_cast<double>(n));

      if (config.check_replicas) {
        const std::vector<double> mine = model.dense.flatten();
        if (group.broadcast(me, 0, mine, "replica_check") != mine) {
          throw CollectiveFault("dense replica of worker " + std::to_string(me) +
                                " diverged from worker 0 at iteration " + std::to_string(it));
        }
      }
      if (hook) {
        group.barrier(me);
        if (me == 0) {
          for (std::size_t w = 0; w < n; ++w) hook_batches[w] = worker_batches[w][it];
          hook(it, result.models, hook_batches);
        }
        group.barrier(me);
      }
      if (improvement_stalled(histories[me], config.convergence_window, config.convergence_tol)) {
        converged[me] = true;
        break;
      }
    }
  });
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  result.mean_query_loss = histories.front();
  result.iterations = result.mean_query_loss.size();
  if (converged.front()) {
    result.stop = StopReason::kConverged;
  } else if (budget < config.iterations) {
    result.stop = StopReason::kDataExhausted;
  }
  for (std::size_t it = 0; it < result.iterations; ++it) {
    for (std::size_t w = 0; w < n; ++w) {
      result.metrics.push_back(records[w][it]);
      result.samples += records[w][it].samples;
    }
  }
  result.comm = group.total_stats();
  return result;
}

std::vector<std::vector<TaskBatch>> load_training_batches(const TrainConfig& config) {
  const io::RecordFile file = io::RecordFile::open(config.data_path);
  if (file.header().batch_size != config.batch_size) {
    throw std::invalid_argument("record file was built with batch_size " +
                                std::to_string(file.header().batch_size) + ", config says " +
                                std::to_string(config.batch_size));
  }
  std::vector<std::vector<TaskBatch>> out;
  for (std::size_t w = 0; w < config.n_workers; ++w) {
    out.push_back(io::load_task_batches(file, w, config.n_workers, config.support_ratio).batches);
  }
  return out;
}

void write_metrics(std::ostream& out, std::span<const IterationRecord> metrics) {
  for (const IterationRecord& r : metrics) out << r.to_json().dump() << '\n';
}

}  // namespace metashard
