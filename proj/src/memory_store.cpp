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

#include "icl/memory_store.hpp"

#include <random>

#include "icl/binary_io.hpp"
#include "icl/errors.hpp"
#include "icl/matrix.hpp"

namespace icl {

namespace {

constexpr std::uint64_t kTaskStream = 1;
constexpr std::uint64_t kClassStream = 2;

std::string label_str(Label y) { return "class " + std::to_string(y); }

}  // namespace

ValueMemoryStore::ValueMemoryStore(MemoryDims dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
  if (dims.task_dim == 0 || dims.class_dim == 0) {
    throw Error(ErrorKind::ShapeMismatch, "value memory dims must be positive");
  }
}

std::vector<double> ValueMemoryStore::initial_vector(std::uint64_t kind, std::uint64_t id,
                                                     std::size_t dim) const {
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(id),
                    static_cast<std::uint32_t>(id >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  // Isotropic Gaussian, normalized: uniform on the sphere.
  do {
    for (double& x : v) x = gauss(rng);
  } while (norm(v) <= 1e-6);
  v = l2_normalize(v);
  round_to_float(v);
  return v;
}

Label ValueMemoryStore::register_class(const ClassId& y, TaskId t) {
  if (is_frozen(t)) {
    throw Error(ErrorKind::FrozenTask, "task " + std::to_string(t.index) + " is frozen");
  }
  if (auto it = classes_.find(y.label); it != classes_.end()) {
    if (it->second.task != t.index) {
      throw Error(ErrorKind::ConflictingTask, label_str(y.label) + " already belongs to task " +
                                                  std::to_string(it->second.task));
    }
    return y.label;
  }
  if (latest_task_ && t.index < *latest_task_) {
    throw Error(ErrorKind::OutOfOrderTask, "task " + std::to_string(t.index) +
                                               " registered after task " +
                                               std::to_string(*latest_task_));
  }
  if (!task_vectors_.contains(t.index)) {
    task_vectors_.emplace(t.index, initial_vector(kTaskStream, t.index, dims_.task_dim));
  }
  classes_.emplace(y.label,
                   ClassEntry{y.name, t.index, initial_vector(kClassStream, y.label, dims_.class_dim)});
  latest_task_ = t.index;
  return y.label;
}

const ValueMemoryStore::ClassEntry& ValueMemoryStore::entry(Label y) const {
  auto it = classes_.find(y);
  if (it == classes_.end()) throw Error(ErrorKind::UnknownClass, label_str(y) + " is not registered");
  return it->second;
}

std::vector<double> ValueMemoryStore::value_vector(Label y) const {
  const ClassEntry& e = entry(y);
  const auto& zt = task_vectors_.at(e.task);
  std::vector<double> out;
  out.reserve(dims_.total());
  out.insert(out.end(), zt.begin(), zt.end());
  out.insert(out.end(), e.vector.begin(), e.vector.end());
  return out;
}

void ValueMemoryStore::freeze_task(TaskId t) { frozen_.insert(t.index); }

TaskId ValueMemoryStore::task_of(Label y) const { return TaskId{entry(y).task}; }

const std::string& ValueMemoryStore::name_of(Label y) const { return entry(y).name; }

const std::vector<double>& ValueMemoryStore::task_vector(TaskId t) const {
  auto it = task_vectors_.find(t.index);
  if (it == task_vectors_.end()) {
    throw Error(ErrorKind::UnknownClass, "task " + std::to_string(t.index) + " has no vector");
  }
  return it->second;
}

const std::vector<double>& ValueMemoryStore::class_vector(Label y) const { return entry(y).vector; }

void ValueMemoryStore::set_task_vector(TaskId t, std::span<const double> values) {
  if (is_frozen(t)) {
    throw Error(ErrorKind::FrozenTask, "task " + std::to_string(t.index) + " is frozen");
  }
  auto it = task_vectors_.find(t.index);
  if (it == task_vectors_.end()) {
    throw Error(ErrorKind::UnknownClass, "task " + std::to_string(t.index) + " has no vector");
  }
  if (values.size() != dims_.task_dim) throw Error(ErrorKind::ShapeMismatch, "task vector size");
  it->second.assign(values.begin(), values.end());
  round_to_float(it->second);
}

void ValueMemoryStore::set_class_vector(Label y, std::span<const double> values) {
  auto it = classes_.find(y);
  if (it == classes_.end()) throw Error(ErrorKind::UnknownClass, label_str(y) + " is not registered");
  if (is_frozen(TaskId{it->second.task})) {
    throw Error(ErrorKind::FrozenTask, label_str(y) + " belongs to frozen task " +
                                           std::to_string(it->second.task));
  }
  if (values.size() != dims_.class_dim) throw Error(ErrorKind::ShapeMismatch, "class vector size");
  it->second.vector.assign(values.begin(), values.end());
  round_to_float(it->second.vector);
}

std::vector<Label> ValueMemoryStore::labels() const {
  std::vector<Label> out;
  out.reserve(classes_.size());
  for (const auto& [y, e] : classes_) out.push_back(y);
  return out;
}

std::vector<Label> ValueMemoryStore::classes_of(TaskId t) const {
  std::vector<Label> out;
  for (const auto& [y, e] : classes_) {
    if (e.task == t.index) out.push_back(y);
  }
  return out;
}

std::vector<TaskId> ValueMemoryStore::tasks() const {
  std::vector<TaskId> out;
  for (const auto& [t, v] : task_vectors_) out.push_back(TaskId{t});
  return out;
}

std::size_t ValueMemoryStore::parameter_count() const noexcept {
  return dims_.task_dim * task_vectors_.size() + dims_.class_dim * classes_.size();
}

std::vector<std::uint8_t> ValueMemoryStore::serialize() const {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dims_.task_dim));
  w.u32(static_cast<std::uint32_t>(dims_.class_dim));
  w.u64(seed_);
  w.u32(static_cast<std::uint32_t>(task_vectors_.size()));
  w.u32(static_cast<std::uint32_t>(classes_.size()));
  for (const auto& [t, v] : task_vectors_) {
    w.u32(t);
    w.f32s(v);
  }
  for (const auto& [y, e] : classes_) {
    w.u32(y);
    w.u32(e.task);
    w.str(e.name);
    w.f32s(e.vector);
  }
  for (const auto& [t, v] : task_vectors_) w.u8(frozen_.contains(t) ? 1 : 0);
  return w.buffer();
}

ValueMemoryStore ValueMemoryStore::deserialize(std::vector<std::uint8_t> bytes,
                                               const std::string& origin) {
  io::ByteReader r(std::move(bytes), origin);
  if (r.bytes(4) != kMagic) r.fail("bad magic");
  if (const auto v = r.u32(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
  MemoryDims dims;
  dims.task_dim = r.u32();
  dims.class_dim = r.u32();
  if (dims.task_dim == 0 || dims.class_dim == 0) r.fail("zero dimension");
  const std::uint64_t seed = r.u64();
  ValueMemoryStore s(dims, seed);
  const std::uint32_t n_tasks = r.u32();
  const std::uint32_t n_classes = r.u32();
  std::vector<std::uint32_t> task_order;
  for (std::uint32_t i = 0; i < n_tasks; ++i) {
    const std::uint32_t t = r.u32();
    if (!s.task_vectors_.emplace(t, r.f32s(dims.task_dim)).second) r.fail("duplicate task");
    task_order.push_back(t);
    s.latest_task_ = s.latest_task_ ? std::max(*s.latest_task_, t) : t;
  }
  for (std::uint32_t i = 0; i < n_classes; ++i) {
    const Label y = r.u32();
    ClassEntry e;
    e.task = r.u32();
    e.name = r.str();
    e.vector = r.f32s(dims.class_dim);
    if (!s.task_vectors_.contains(e.task)) r.fail("class refers to unknown task");
    if (!s.classes_.emplace(y, std::move(e)).second) r.fail("duplicate class");
  }
  for (std::uint32_t t : task_order) {
    const std::uint8_t flag = r.u8();
    if (flag > 1) r.fail("bad freeze flag");
    if (flag) s.frozen_.insert(t);
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return s;
}

void ValueMemoryStore::persist(const std::filesystem::path& path) const {
  io::write_file(path, serialize());
}

ValueMemoryStore ValueMemoryStore::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path), path.string());
}

}  // namespace icl
