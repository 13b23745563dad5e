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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/inference.hpp"
#include "icl/metrics.hpp"
#include "icl/shard.hpp"
#include "icl/system2.hpp"
#include "icl/trainer.hpp"

namespace icl {

/// engine: rehearsal + freezing; naive: plain sequential fine-tuning over all
/// registered classes; joint: every task pooled into a single one.
enum class RunMode { Engine, Naive, Joint };

std::string_view to_string(RunMode m);

struct ClientConfig {
  std::string kind = "none";  // none | mock | scripted | http
  double reliability = 1.0;
  std::size_t k = 2;
  std::filesystem::path transcript;
  std::string url;
  std::int64_t timeout_ms = 10000;
  std::size_t parallelism = 1;
};

struct DataConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::filesystem::path> manifest;
};

struct EvalConfig {
  std::size_t batch_size = 10;
  bool task_il = true;
};

struct ExperimentConfig {
  InteractorDims dims;
  VmfConfig vmf;
  TrainConfig train;
  RunMode mode = RunMode::Engine;
  OdiConfig odi;
  ClientConfig client;
  DataConfig data;
  EvalConfig eval;
  std::uint64_t init_seed = 0;
  std::uint64_t client_seed = 0;

  /// Engine configuration after the mode's training discipline is applied.
  EngineConfig engine_config() const;
  void validate() const;
};

/// Parses the {dims, vmf, train, odi, client, data, eval, seeds} document.
/// Unknown keys and wrong types raise ConfigError naming the field path.
/// Relative data paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct Dataset {
  std::vector<EmbeddingShard> train;
  std::vector<EmbeddingShard> test;
  std::map<Label, std::string> names;

  static Dataset from_synthetic(SyntheticData data);
};

/// Synthetic data is generated in memory; a manifest is loaded from disk.
Dataset load_dataset(const ExperimentConfig& cfg);

std::unique_ptr<System2Backend> make_backend(const ClientConfig& cfg, const Dataset& data,
                                             std::uint64_t seed);
/// Mock truth for every test sample: sample id -> class name.
std::map<std::uint64_t, std::string> truth_table(const Dataset& data);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<PredictionRecord> records;
  CollaborationStats stats;
};

/// Batched evaluation of `samples`. Without a client the final label is the
/// System1 top-1; with one, hard samples go through System2.
EvalResult evaluate_samples(const System1View& system1, std::span<const Sample> samples,
                            std::optional<std::span<const Label>> candidates, std::size_t batch_size,
                            System2Backend* client = nullptr, const CollaborationOptions& options = {});

struct ExperimentResult {
  AccuracyMatrix class_il;
  AccuracyMatrix task_il;
  std::optional<AccuracyMatrix> collaborative;
  std::vector<TaskReport> reports;
  std::vector<PredictionRecord> predictions;
  std::vector<PredictionRecord> collaborative_predictions;
  CollaborationStats collaboration;
  double value_separation = 0.0;
  std::size_t final_row = 0;
  std::optional<Engine> engine;

  double final_class_il() const { return incremental_accuracy(class_il, final_row); }
  double final_task_il() const { return incremental_accuracy(task_il, final_row); }
  std::optional<double> final_collaborative() const;
};

/// Trains the tasks in order and evaluates every seen task after each one.
/// With `out_dir` every report file and the checkpoint are written there.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                const std::optional<std::filesystem::path>& out_dir = {});
ExperimentResult run_experiment(const std::filesystem::path& config_path,
                                const std::filesystem::path& out_dir);

/// Mean of 1 - cos over all pairs of registered value vectors.
double mean_value_separation(const ValueMemoryStore& store);

std::string value_memory_csv(const ValueMemoryStore& store);
std::string train_metrics_csv(const std::vector<TaskReport>& reports);

/// protocol,after_task,A_T for every complete row of each protocol.
std::string summary_csv(const ExperimentResult& r);

// Checkpoints: store.iclz, params.iclp and engine.json in one directory.

std::vector<std::uint8_t> serialize_params(const QueryInteractorParams& params);
QueryInteractorParams deserialize_params(std::vector<std::uint8_t> bytes, const std::string& origin);

void save_checkpoint(const Engine& engine, const std::filesystem::path& dir);
Engine load_checkpoint(const std::filesystem::path& dir);

}  // namespace icl
