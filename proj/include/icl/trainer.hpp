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
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "icl/adam.hpp"
#include "icl/buffer.hpp"
#include "icl/interactor.hpp"
#include "icl/memory_store.hpp"
#include "icl/sample.hpp"
#include "icl/vmf.hpp"

namespace icl {

/// How value memory and query parameters are stepped within one batch.
enum class UpdateRule {
  Alternating,   // E-step on value memory, then M-step on the query path at the updated memory
  Simultaneous,  // one gradient evaluation, both groups stepped from it
};

enum class StepMode { EM, MOnly };

struct TrainConfig {
  std::size_t batch_size = 10;
  std::size_t epochs = 1;
  double lr = 1e-4;
  /// Batches per task that run the full E+M step; later batches only update
  /// the query path. Unset means every batch.
  std::optional<std::size_t> em_batches;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t buffer_capacity = 40;
  bool rehearsal = true;
  bool freeze = true;
  CandidateScope scope = CandidateScope::Batch;
  UpdateRule update = UpdateRule::Alternating;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
};

struct EngineConfig {
  InteractorDims dims;
  VmfConfig vmf;
  TrainConfig train;
  std::uint64_t init_seed = 0;

  MemoryDims memory_dims() const { return {dims.task_dim, dims.model_dim}; }
};

struct TaskReport {
  TaskId task;
  std::size_t batches = 0;
  std::size_t em_batches = 0;
  std::size_t new_classes = 0;
  std::size_t total_classes = 0;
  std::size_t buffer_size = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double mean_loss = 0.0;
};

/// System1 state and its training loop: query parameters, value memory,
/// two optimizers and the rehearsal buffer.
class Engine {
 public:
  explicit Engine(EngineConfig cfg);
  Engine(EngineConfig cfg, QueryInteractorParams params, ValueMemoryStore store);

  /// One optimization step on the batch; returns the total loss before it.
  double em_train_batch(std::span<const Sample> batch, StepMode mode);

  /// Streams a task's data in batches with rehearsal mixing, buffer upkeep and
  /// final freezing of the task's memory.
  TaskReport train_task(TaskId t, std::span<const Sample> data);

  void set_class_names(std::map<Label, std::string> names) { names_ = std::move(names); }
  std::string class_name(Label y) const;

  const EngineConfig& config() const noexcept { return cfg_; }
  const QueryInteractorParams& params() const noexcept { return params_; }
  const ValueMemoryStore& store() const noexcept { return store_; }
  const RehearsalBuffer& buffer() const noexcept { return buffer_; }
  std::size_t tasks_trained() const noexcept { return tasks_trained_; }

 private:
  void register_new_classes(std::span<const Sample> batch);
  void step_memory(const GradTape::Gradients& grads, std::span<const Sample> batch);
  void step_query(const GradTape::Gradients& grads);

  EngineConfig cfg_;
  QueryInteractorParams params_;
  ValueMemoryStore store_;
  RehearsalBuffer buffer_;
  Adam memory_opt_;
  Adam query_opt_;
  std::mt19937_64 rng_;
  std::map<Label, std::string> names_;
  std::optional<std::uint32_t> last_task_;
  std::size_t tasks_trained_ = 0;
};

}  // namespace icl
