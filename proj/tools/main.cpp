// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

// metashard: generate data, build record files, train, verify, benchmark.
//
// Exit codes: 0 ok, 1 bad input (missing file, invalid config, corrupt
// data), 2 verification tolerance exceeded, 3 internal fault.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "commands.hpp"

namespace {

using namespace metashard;
using namespace metashard::cli;

void write_report(const nlohmann::json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw InputError("cannot write " + out);
  f << j.dump(2) << '\n';
}

struct TrainFlags {
  std::string config;
  std::optional<std::size_t> workers;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "training config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--workers", workers, "worker count (overrides config and $METASHARD_WORKERS)");
    cmd->add_option("--mode", mode, "full_second_order | first_order");
    cmd->add_option("--seed", seed, "model initialization seed");
    cmd->add_option("--out", out, "output directory or report path");
  }

  TrainConfig resolve() const {
    TrainConfig c = load_train_config(config);
    c.n_workers = resolve_workers(workers, c.n_workers);
    if (mode) c.hyper.mode = parse_grad_mode(*mode);
    if (seed) c.model.seed = *seed;
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metashard: sharded-embedding meta-learning trainer"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic task family as CSV");
  std::string gen_config;
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "task family (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "CSV output path")->required();
  gen->add_option("--seed", gen_seed, "overrides the family seed");

  auto* pre = app.add_subcommand("preprocess", "sort, batch, shuffle and write a record file");
  std::string pre_input;
  std::string pre_out;
  std::size_t pre_batch = 32;
  std::uint64_t pre_seed = 1;
  pre->add_option("--input", pre_input, "CSV input")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "record file output")->required();
  pre->add_option("--batch-size", pre_batch, "samples per batch (>= 2)");
  pre->add_option("--seed", pre_seed, "batch shuffle seed");

  auto* train = app.add_subcommand("train", "run meta-training");
  TrainFlags train_flags;
  train_flags.add_to(train);

  auto* verify = app.add_subcommand("verify", "compare parallel training with the serial reference");
  TrainFlags verify_flags;
  verify_flags.add_to(verify);
  std::vector<std::size_t> verify_workers{1, 2, 4};
  double verify_tol = 1e-9;
  verify->add_option("--worker-counts", verify_workers, "worker counts to check");
  verify->add_option("--tol", verify_tol, "max absolute per-parameter divergence");

  auto* bench = app.add_subcommand("bench", "throughput, speedup and traffic report");
  TrainFlags bench_flags;
  bench_flags.add_to(bench);
  std::vector<std::size_t> bench_workers{1, 2, 4};
  std::size_t bench_repeats = 3;
  bench->add_option("--worker-counts", bench_workers, "worker counts to run");
  bench->add_option("--repeats", bench_repeats, "runs per configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  const char* name = app.get_subcommands().front()->get_name().c_str();
  try {
    if (*gen) {
      auto family = read_json_file(gen_config).get<datagen::TaskFamily>();
      if (gen_seed) family.seed = *gen_seed;
      const std::size_t count = cmd_gen_data(family, gen_out);
      std::cout << "wrote " << count << " samples to " << gen_out << '\n';
    } else if (*pre) {
      const auto data = cmd_preprocess(pre_input, pre_batch, pre_seed, pre_out);
      std::cout << "wrote " << data.record_count() << " records in " << data.batches.size()
                << " batches (" << data.partial_batches() << " partial) to " << pre_out << '\n';
    } else if (*train) {
      const TrainConfig config = train_flags.resolve();
      const TrainResult result = cmd_train(config, train_flags.out);
      std::cout << "trained " << result.iterations << " iterations on " << config.n_workers
                << " workers (stop: " << to_string(result.stop) << "), final mean query loss "
                << (result.mean_query_loss.empty() ? 0.0 : result.mean_query_loss.back()) << ", "
                << result.samples_per_second() << " samples/s\n";
    } else if (*verify) {
      const TrainConfig config = verify_flags.resolve();
      std::vector<GradMode> modes{GradMode::kFullSecondOrder, GradMode::kFirstOrder};
      if (verify_flags.mode) modes = {config.hyper.mode};
      const VerifyReport report = cmd_verify(config, verify_workers, modes, verify_tol);
      for (const auto& run : report.runs) {
        std::cerr << "n=" << run.workers << " " << to_string(run.mode)
                  << " max divergence " << run.max_divergence << (run.passed ? " ok" : " BREACH") << '\n';
      }
      write_report(report.to_json(), verify_flags.out);
      return report.passed ? kOk : kToleranceBreach;
    } else if (*bench) {
      const TrainConfig config = bench_flags.resolve();
      write_report(cmd_bench(config, bench_workers, bench_repeats).to_json(), bench_flags.out);
    }
  } catch (...) {
    return report_exception(name);
  }
  return kOk;
}
