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

#include <doctest.h>

#include <cmath>
#include <functional>
#include <set>
#include <random>

#include "icl/adam.hpp"
#include "icl/buffer.hpp"
#include "icl/errors.hpp"
#include "icl/shard.hpp"
#include "icl/trainer.hpp"
#include "support.hpp"

using namespace icl;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::ConfigError;
}

Sample make_sample(std::uint64_t id, Label y) {
  return Sample{id, Matrix(1, 1, static_cast<double>(id)), y, TaskId{0}, ""};
}

SyntheticData small_data(std::uint64_t seed, std::size_t n = 20) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.tasks = 2;
  spec.n_per_class = n;
  spec.n_test_per_class = 5;
  spec.seed = seed;
  return gen_synthetic(spec);
}

EngineConfig small_config() {
  EngineConfig cfg;
  cfg.dims = {4, 16, 2, 8};
  cfg.train.buffer_capacity = 8;
  cfg.train.lr = 1e-3;
  cfg.init_seed = 5;
  cfg.train.seed = 6;
  return cfg;
}

}  // namespace

TEST_CASE("Adam follows the bias-corrected scalar recurrence") {
  Adam opt({0.01, 0.9, 0.999, 1e-8});
  std::vector<double> p{1.0, -2.0};
  double m0 = 0, v0 = 0, m1 = 0, v1 = 0, r0 = 1.0, r1 = -2.0;
  for (int t = 1; t <= 30; ++t) {
    const std::vector<double> g{2 * p[0], std::sin(p[1])};
    const double g0 = 2 * r0, g1 = std::sin(r1);
    m0 = 0.9 * m0 + 0.1 * g0;
    v0 = 0.999 * v0 + 0.001 * g0 * g0;
    m1 = 0.9 * m1 + 0.1 * g1;
    v1 = 0.999 * v1 + 0.001 * g1 * g1;
    const double c1 = 1 - std::pow(0.9, t), c2 = 1 - std::pow(0.999, t);
    r0 -= 0.01 * (m0 / c1) / (std::sqrt(v0 / c2) + 1e-8);
    r1 -= 0.01 * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8);
    opt.step("p", p, g);
    CHECK(p[0] == doctest::Approx(r0).epsilon(1e-13));
    CHECK(p[1] == doctest::Approx(r1).epsilon(1e-13));
  }
  CHECK(opt.steps("p") == 30);
  CHECK(opt.steps("q") == 0);
  std::vector<double> q{1.0};
  CHECK(kind_of([&] { opt.step("q", q, std::vector<double>{1, 2}); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("a full buffer is class balanced") {
  RehearsalBuffer b(4, 1);
  for (std::uint64_t i = 0; i < 5; ++i) b.insert(make_sample(i, 0));
  for (std::uint64_t i = 5; i < 10; ++i) b.insert(make_sample(i, 1));
  CHECK(b.size() == 4);
  CHECK(b.class_counts() == std::map<Label, std::size_t>{{0, 2}, {1, 2}});
}

TEST_CASE("buffer never exceeds its capacity and stays near balance") {
  std::mt19937_64 rng(3);
  RehearsalBuffer b(10, 2);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    b.insert(make_sample(i, static_cast<Label>(rng() % (1 + i / 200))));
    CHECK(b.size() <= 10);
  }
  for (const auto& [y, n] : b.class_counts()) CHECK(n <= b.quota(y) + 1);
}

TEST_CASE("buffer is deterministic under a fixed seed") {
  RehearsalBuffer a(6, 9), c(6, 9);
  for (std::uint64_t i = 0; i < 100; ++i) {
    a.insert(make_sample(i, static_cast<Label>(i % 3)));
    c.insert(make_sample(i, static_cast<Label>(i % 3)));
  }
  std::vector<std::uint64_t> ia, ic;
  for (const auto& s : a.slots()) ia.push_back(s.id);
  for (const auto& s : c.slots()) ic.push_back(s.id);
  CHECK(ia == ic);
}

TEST_CASE("buffer sampling") {
  RehearsalBuffer b(6, 1);
  CHECK(b.sample(3, 1).empty());
  for (std::uint64_t i = 0; i < 6; ++i) b.insert(make_sample(i, static_cast<Label>(i % 2)));
  CHECK(b.sample(100, 1).size() == 6);
  const auto s = b.sample(3, 7);
  CHECK(s.size() == 3);
  std::set<std::uint64_t> ids;
  for (const auto& r : s) ids.insert(r.id);
  CHECK(ids.size() == 3);
  std::vector<std::uint64_t> x, y;
  for (const auto& r : b.sample(3, 7)) x.push_back(r.id);
  for (const auto& r : s) y.push_back(r.id);
  CHECK(x == y);
}

TEST_CASE("E-step touches only the classes of the batch") {
  const auto data = small_data(1);
  Engine e(small_config());
  std::vector<Sample> first(data.train[0].samples.begin(), data.train[0].samples.end());
  e.train_task(TaskId{0}, first);
  const auto frozen = e.store();

  std::vector<Sample> batch;
  for (const auto& s : data.train[1].samples) {
    if (s.label == 2) batch.push_back(s);
    if (batch.size() == 4) break;
  }
  // Register both new classes first so class 3 is unbatched but unfrozen.
  std::vector<Sample> warmup{batch[0]};
  for (const auto& s : data.train[1].samples) {
    if (s.label == 3) {
      warmup.push_back(s);
      break;
    }
  }
  e.em_train_batch(warmup, StepMode::MOnly);
  const auto before = e.store();
  e.em_train_batch(batch, StepMode::EM);
  CHECK(e.store().class_vector(3) == before.class_vector(3));
  CHECK(e.store().class_vector(2) != before.class_vector(2));
  CHECK(e.store().task_vector(TaskId{1}) != before.task_vector(TaskId{1}));
  for (Label y : {0u, 1u}) CHECK(e.store().value_vector(y) == frozen.value_vector(y));
}

TEST_CASE("M-only steps leave the value memory unchanged") {
  const auto data = small_data(2);
  Engine e(small_config());
  std::vector<Sample> batch(data.train[0].samples.begin(), data.train[0].samples.begin() + 6);
  e.em_train_batch(batch, StepMode::MOnly);
  const auto store = e.store();
  const auto params = e.params();
  e.em_train_batch(batch, StepMode::MOnly);
  CHECK(e.store() == store);
  CHECK(!(e.params() == params));
}

TEST_CASE("repeated EM steps reduce the loss on a fixed batch") {
  const auto data = small_data(3);
  Engine e(small_config());
  std::vector<Sample> batch(data.train[0].samples.begin(), data.train[0].samples.begin() + 10);
  const double first = e.em_train_batch(batch, StepMode::EM);
  double last = first;
  for (int i = 0; i < 50; ++i) last = e.em_train_batch(batch, StepMode::EM);
  CHECK(last < first);
}

TEST_CASE("train_task registers, freezes and keeps the buffer bounded") {
  const auto data = small_data(4);
  Engine e(small_config());
  const auto r0 = e.train_task(TaskId{0}, data.train[0].samples);
  CHECK(r0.new_classes == 2);
  CHECK(r0.total_classes == 2);
  CHECK(r0.batches == 4);
  CHECK(e.store().is_frozen(TaskId{0}));
  CHECK(e.buffer().size() <= 8);
  const auto frozen = e.store();
  const auto r1 = e.train_task(TaskId{1}, data.train[1].samples);
  CHECK(r1.new_classes == 2);
  CHECK(r1.total_classes == 4);
  CHECK(e.buffer().size() <= 8);
  for (Label y : {0u, 1u}) CHECK(e.store().value_vector(y) == frozen.value_vector(y));
  CHECK(e.tasks_trained() == 2);
}

TEST_CASE("task ordering and frozen tasks are enforced") {
  const auto data = small_data(5);
  Engine e(small_config());
  e.train_task(TaskId{1}, data.train[1].samples);
  CHECK(kind_of([&] { e.train_task(TaskId{0}, data.train[0].samples); }) == ErrorKind::OutOfOrderTask);
  CHECK(kind_of([&] { e.train_task(TaskId{1}, data.train[1].samples); }) == ErrorKind::OutOfOrderTask);
  std::vector<Sample> stale(data.train[1].samples.begin(), data.train[1].samples.begin() + 2);
  for (auto& s : stale) s.task = TaskId{1};
  CHECK(kind_of([&] { e.em_train_batch(stale, StepMode::EM); }) == ErrorKind::FrozenTask);
  CHECK(kind_of([&] { e.em_train_batch({}, StepMode::EM); }) == ErrorKind::EmptyBatch);
}

TEST_CASE("training is deterministic for fixed seeds") {
  const auto data = small_data(6);
  Engine a(small_config()), b(small_config());
  for (std::uint32_t t = 0; t < 2; ++t) {
    a.train_task(TaskId{t}, data.train[t].samples);
    b.train_task(TaskId{t}, data.train[t].samples);
  }
  CHECK(a.store() == b.store());
  CHECK(a.params() == b.params());
}

TEST_CASE("parameters stay float32 after training") {
  const auto data = small_data(7);
  Engine e(small_config());
  e.train_task(TaskId{0}, data.train[0].samples);
  for (const auto& [name, m] : e.params().named()) {
    for (double v : m->data) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
}

TEST_CASE("config validation") {
  TrainConfig t;
  t.batch_size = 0;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::ConfigError);
  t = {};
  t.lr = 0.0;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::ConfigError);
  t = {};
  t.beta2 = 1.0;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::ConfigError);
  EngineConfig cfg = small_config();
  auto params = QueryInteractorParams::init({4, 16, 2, 4}, 1);
  CHECK(kind_of([&] { Engine(cfg, params, ValueMemoryStore(cfg.memory_dims(), 1)); }) ==
        ErrorKind::ShapeMismatch);
}
