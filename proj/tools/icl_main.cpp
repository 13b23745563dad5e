// Copyright 2026 The ICL Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "icl/errors.hpp"
#include "icl/experiment.hpp"

namespace fs = std::filesystem;
using namespace icl;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;
constexpr int kClientFailure = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::HeadDivisibility:
      return kConfigError;
    case ErrorKind::ClientFailure:
      return kClientFailure;
    default:
      return kDataError;
  }
}

void print_rows(const std::string& protocol, const AccuracyMatrix& m) {
  for (std::size_t T = 0; T < m.tasks(); ++T) {
    if (!m.row_complete(T)) continue;
    std::printf("%-18s after task %zu  A_T = %.4f\n", protocol.c_str(), T, incremental_accuracy(m, T));
  }
}

int gen_synthetic_cmd(const fs::path& config, const fs::path& out) {
  const auto cfg = load_config(config);
  if (!cfg.data.synthetic) throw Error(ErrorKind::ConfigError, "data.synthetic: required for gen-synthetic");
  const auto data = gen_synthetic(*cfg.data.synthetic);
  write_synthetic(data, out);
  std::size_t n = 0;
  for (const auto& s : data.train) n += s.samples.size();
  std::printf("wrote %zu train shards (%zu samples) and %zu test shards to %s\n", data.train.size(), n,
              data.test.size(), out.string().c_str());
  return kOk;
}

int train_cmd(const fs::path& config, const fs::path& out) {
  const auto cfg = load_config(config);
  const auto data = load_dataset(cfg);
  const auto result = run_experiment(cfg, data, out);
  for (const auto& r : result.reports) {
    std::printf("task %u: %zu batches, loss %.4f -> %.4f, %zu classes, buffer %zu\n", r.task.index, r.batches,
                r.first_loss, r.last_loss, r.total_classes, r.buffer_size);
  }
  print_rows("class_il", result.class_il);
  if (cfg.eval.task_il) print_rows("task_il", result.task_il);
  if (result.collaborative) {
    print_rows("class_il_system2", *result.collaborative);
    const auto& s = result.collaboration;
    std::printf("system2: %zu hard, %zu exact answers, %zu failures\n", s.hard, s.exact_answers, s.failures);
    if (s.queries > 0 && s.failures == s.queries) return kClientFailure;
  }
  std::printf("reports written to %s\n", out.string().c_str());
  return kOk;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path shards;
  std::string client = "none";
  std::size_t k = 2;
  double reliability = 1.0;
  fs::path truth;
  fs::path transcript;
  std::string url;
  std::int64_t timeout_ms = 10000;
  std::size_t parallelism = 1;
  std::size_t batch_size = 10;
  double alpha = -0.842;
  std::uint64_t seed = 0;
  fs::path out;
};

int eval_cmd(const EvalArgs& a) {
  const Engine engine = load_checkpoint(a.checkpoint);
  const auto manifest = load_manifest(a.shards / "manifest.json");
  Dataset data;
  data.test = load_shards(a.shards, manifest.test.empty() ? manifest.train : manifest.test);
  data.names = manifest.labels;

  ClientConfig cc;
  cc.kind = a.client;
  cc.k = a.k;
  cc.reliability = a.reliability;
  cc.transcript = a.transcript;
  cc.url = a.url;
  cc.timeout_ms = a.timeout_ms;
  cc.parallelism = a.parallelism;
  std::unique_ptr<System2Backend> client;
  if (cc.kind == "mock" && !a.truth.empty()) {
    std::map<std::uint32_t, std::string> names;
    for (Label y : engine.store().labels()) names[y] = engine.store().name_of(y);
    for (const auto& [y, n] : data.names) names.emplace(y, n);
    client = std::make_unique<MockBackend>(MockBackend::load_truth_table(a.truth, names), a.reliability, a.seed);
  } else {
    client = make_backend(cc, data, a.seed);
  }

  CollaborationOptions options;
  options.k = a.k;
  options.odi.alpha = a.alpha;
  options.parallelism = a.parallelism;
  const System1View view{engine.params(), engine.store(), engine.config().vmf.kappa};

  std::vector<PredictionRecord> all;
  CollaborationStats stats;
  double sum = 0.0;
  for (const auto& shard : data.test) {
    const auto r = evaluate_samples(view, shard.samples, std::nullopt, a.batch_size, client.get(), options);
    std::printf("task %u: accuracy %.4f over %zu samples\n", shard.task_id, r.accuracy, shard.samples.size());
    sum += r.accuracy;
    stats.hard += r.stats.hard;
    stats.queries += r.stats.queries;
    stats.failures += r.stats.failures;
    stats.exact_answers += r.stats.exact_answers;
    all.insert(all.end(), r.records.begin(), r.records.end());
  }
  if (!data.test.empty()) std::printf("mean accuracy %.4f\n", sum / static_cast<double>(data.test.size()));
  if (client) {
    std::printf("system2 (%s): %zu hard, %zu exact answers, %zu failures\n", std::string(client->kind()).c_str(),
                stats.hard, stats.exact_answers, stats.failures);
  }
  fs::create_directories(a.out);
  write_predictions_csv(a.out / "predictions.csv", all);
  std::printf("predictions written to %s\n", (a.out / "predictions.csv").string().c_str());
  if (client && stats.queries > 0 && stats.failures == stats.queries) return kClientFailure;
  return kOk;
}

int report_cmd(const fs::path& run) {
  const auto class_il = AccuracyMatrix::from_csv(read_text(run / "accuracy_matrix.csv"),
                                                 (run / "accuracy_matrix.csv").string());
  print_rows("class_il", class_il);
  for (const auto& [file, name] : {std::pair{"accuracy_matrix_task_il.csv", "task_il"},
                                   std::pair{"accuracy_matrix_system2.csv", "class_il_system2"}}) {
    if (fs::exists(run / file)) {
      print_rows(name, AccuracyMatrix::from_csv(read_text(run / file), (run / file).string()));
    }
  }
  write_text(run / "forgetting_curves.csv", forgetting_curves_csv(class_il));
  std::printf("forgetting curves written to %s\n", (run / "forgetting_curves.csv").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning engine with value memory and System2 collaboration", "icl"};
  app.require_subcommand(1);

  fs::path config, out;
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic shard set");
  gen->add_option("--config", config, "experiment config")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "Train all tasks and write reports");
  train->add_option("--config", config, "experiment config")->required();
  train->add_option("--out", out, "run directory")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on shards");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint directory")->required();
  eval->add_option("--shards", ea.shards, "directory holding manifest.json")->required();
  eval->add_option("--client", ea.client, "System2 backend")
      ->check(CLI::IsMember({"none", "mock", "scripted", "http"}));
  eval->add_option("--k", ea.k, "candidates per System2 query")->check(CLI::PositiveNumber);
  eval->add_option("--reliability", ea.reliability, "mock answer reliability")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--truth", ea.truth, "mock truth table CSV (sample_id,label)");
  eval->add_option("--transcript", ea.transcript, "scripted transcript (JSON lines)");
  eval->add_option("--url", ea.url, "HTTP backend base URL");
  eval->add_option("--timeout-ms", ea.timeout_ms, "HTTP timeout")->check(CLI::PositiveNumber);
  eval->add_option("--parallelism", ea.parallelism, "concurrent System2 requests")->check(CLI::PositiveNumber);
  eval->add_option("--batch-size", ea.batch_size, "evaluation batch size")->check(CLI::PositiveNumber);
  eval->add_option("--alpha", ea.alpha, "hard-sample threshold");
  eval->add_option("--seed", ea.seed, "mock seed");
  eval->add_option("--out", ea.out, "output directory (default: <checkpoint>/../eval)");

  fs::path run;
  auto* report = app.add_subcommand("report", "Print A_T per row and write forgetting curves");
  report->add_option("--run", run, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*gen) return gen_synthetic_cmd(config, out);
    if (*train) return train_cmd(config, out);
    if (*eval) {
      if (ea.out.empty()) ea.out = ea.checkpoint.parent_path() / "eval";
      if (ea.client == "scripted" && ea.transcript.empty()) {
        throw Error(ErrorKind::ConfigError, "--transcript is required with --client scripted");
      }
      if (ea.client == "http" && ea.url.empty()) throw Error(ErrorKind::ConfigError, "--url is required with --client http");
      return eval_cmd(ea);
    }
    if (*report) return report_cmd(run);
  } catch (const Error& e) {
    std::cerr << "icl: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "icl: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
