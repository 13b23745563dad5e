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

#include "icl/trainer.hpp"

#include <algorithm>
#include <set>

#include "icl/errors.hpp"

namespace icl {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::ConfigError, "train.batch_size must be >= 1");
  if (epochs < 1) throw Error(ErrorKind::ConfigError, "train.epochs must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorKind::ConfigError, "train.lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(ErrorKind::ConfigError, "train.beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorKind::ConfigError, "train.beta2 must be in [0,1)");
  if (!(eps > 0.0)) throw Error(ErrorKind::ConfigError, "train.eps must be > 0");
}

Engine::Engine(EngineConfig cfg)
    : Engine(cfg, QueryInteractorParams::init(cfg.dims, cfg.init_seed),
             ValueMemoryStore(cfg.memory_dims(), cfg.init_seed ^ 0x5eedc0ffee123457ULL)) {}

Engine::Engine(EngineConfig cfg, QueryInteractorParams params, ValueMemoryStore store)
    : cfg_(cfg),
      params_(std::move(params)),
      store_(std::move(store)),
      buffer_(cfg.train.buffer_capacity, cfg.train.seed ^ 0xb0ffe7ULL),
      memory_opt_(cfg.train.adam()),
      query_opt_(cfg.train.adam()),
      rng_(cfg.train.seed) {
  cfg_.train.validate();
  cfg_.vmf.validate();
  params_.validate();
  if (params_.dims != cfg_.dims) throw Error(ErrorKind::ShapeMismatch, "params dims differ from config");
  if (store_.dims() != cfg_.memory_dims()) {
    throw Error(ErrorKind::ShapeMismatch, "value memory dims must be (task_dim, d_c) of the interactor");
  }
  for (TaskId t : store_.tasks()) last_task_ = t.index;
  tasks_trained_ = store_.num_tasks();
}

std::string Engine::class_name(Label y) const {
  auto it = names_.find(y);
  return it != names_.end() ? it->second : "class_" + std::to_string(y);
}

void Engine::register_new_classes(std::span<const Sample> batch) {
  for (const auto& s : batch) {
    if (!store_.contains(s.label)) store_.register_class(ClassId{s.label, class_name(s.label)}, s.task);
  }
}

void Engine::step_memory(const GradTape::Gradients& grads,
                         std::span<const Sample> batch) {
  std::set<std::uint32_t> tasks;
  for (Label y : batch_classes(batch)) {
    const TaskId t = store_.task_of(y);
    if (store_.is_frozen(t)) continue;
    tasks.insert(t.index);
    const std::string key = BatchObjective::class_key(y);
    std::vector<double> z = store_.class_vector(y);
    memory_opt_.step(key, z, grads.at(key).data);
    store_.set_class_vector(y, z);
  }
  for (std::uint32_t ti : tasks) {
    const TaskId t{ti};
    const std::string key = BatchObjective::task_key(t);
    std::vector<double> z = store_.task_vector(t);
    memory_opt_.step(key, z, grads.at(key).data);
    store_.set_task_vector(t, z);
  }
}

void Engine::step_query(const GradTape::Gradients& grads) {
  for (auto& [name, m] : params_.named()) {
    query_opt_.step(name, m->data, grads.at(name).data);
    round_to_float(m->data);
  }
}

double Engine::em_train_batch(std::span<const Sample> batch, StepMode mode) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "training batch has no samples");
  std::uint32_t current = 0;
  for (const auto& s : batch) current = std::max(current, s.task.index);
  if (store_.is_frozen(TaskId{current})) {
    throw Error(ErrorKind::FrozenTask, "task " + std::to_string(current) + " is frozen");
  }
  register_new_classes(batch);

  BatchObjective obj(batch, store_, params_, cfg_.vmf, cfg_.train.scope);
  const double loss = obj.evaluate(store_, params_);
  auto grads = obj.gradients();

  if (mode == StepMode::EM) {
    step_memory(grads, batch);
    if (cfg_.train.update == UpdateRule::Alternating) {
      obj.evaluate(store_, params_);
      grads = obj.gradients();
    }
  }
  step_query(grads);
  return loss;
}

TaskReport Engine::train_task(TaskId t, std::span<const Sample> data) {
  if (last_task_ && t.index <= *last_task_) {
    throw Error(ErrorKind::OutOfOrderTask, "task " + std::to_string(t.index) +
                                               " presented after task " + std::to_string(*last_task_));
  }
  if (data.empty()) throw Error(ErrorKind::EmptyBatch, "task " + std::to_string(t.index) + " has no data");

  TaskReport report;
  report.task = t;
  const std::size_t classes_before = store_.num_classes();
  const bool mix = cfg_.train.rehearsal && tasks_trained_ > 0;
  const std::size_t bs = cfg_.train.batch_size;

  std::vector<Sample> order(data.begin(), data.end());
  for (auto& s : order) s.task = t;
  double loss_sum = 0.0;
  for (std::size_t epoch = 0; epoch < cfg_.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      std::vector<Sample> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                order.begin() + static_cast<std::ptrdiff_t>(hi));
      const std::size_t incoming = batch.size();
      if (mix && !buffer_.empty()) {
        auto replay = buffer_.sample(bs, rng_());
        batch.insert(batch.end(), replay.begin(), replay.end());
      }
      const bool em = !cfg_.train.em_batches || report.batches < *cfg_.train.em_batches;
      const double loss = em_train_batch(batch, em ? StepMode::EM : StepMode::MOnly);
      if (report.batches == 0) report.first_loss = loss;
      report.last_loss = loss;
      loss_sum += loss;
      ++report.batches;
      if (em) ++report.em_batches;
      if (cfg_.train.rehearsal) {
        for (std::size_t i = 0; i < incoming; ++i) buffer_.insert(batch[i]);
      }
    }
  }
  if (cfg_.train.freeze) store_.freeze_task(t);
  report.mean_loss = loss_sum / static_cast<double>(report.batches);
  report.new_classes = store_.num_classes() - classes_before;
  report.total_classes = store_.num_classes();
  report.buffer_size = buffer_.size();
  last_task_ = t.index;
  ++tasks_trained_;
  return report;
}

}  // namespace icl
