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

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace icl {

using Label = std::uint32_t;

struct ClassId {
  Label label = 0;
  std::string name;
};

struct TaskId {
  std::uint32_t index = 0;
  friend auto operator<=>(const TaskId&, const TaskId&) = default;
};

struct MemoryDims {
  std::size_t task_dim = 0;
  std::size_t class_dim = 0;
  std::size_t total() const noexcept { return task_dim + class_dim; }
  friend bool operator==(const MemoryDims&, const MemoryDims&) = default;
};

/// Value memory: one vector per task and one per class, concatenated
/// task-part-first on retrieval. Vectors of frozen tasks never change again.
///
/// Stored values are kept at float32 precision so the on-disk form is exact.
class ValueMemoryStore {
 public:
  static constexpr std::string_view kMagic = "ICLZ";
  static constexpr std::uint32_t kVersion = 1;

  ValueMemoryStore(MemoryDims dims, std::uint64_t seed);

  /// Allocates the class vector (and the task vector on first use of the task).
  /// Re-registering the same pair is a no-op.
  Label register_class(const ClassId& y, TaskId t);

  /// Concat[z_task(task of y), z_class(y)].
  std::vector<double> value_vector(Label y) const;

  void freeze_task(TaskId t);
  bool is_frozen(TaskId t) const { return frozen_.contains(t.index); }
  bool is_class_frozen(Label y) const { return is_frozen(task_of(y)); }

  bool contains(Label y) const { return classes_.contains(y); }
  bool has_task(TaskId t) const { return task_vectors_.contains(t.index); }
  TaskId task_of(Label y) const;
  const std::string& name_of(Label y) const;
  const std::vector<double>& task_vector(TaskId t) const;
  const std::vector<double>& class_vector(Label y) const;

  /// Throws FrozenTask when the owning task is frozen.
  void set_task_vector(TaskId t, std::span<const double> values);
  void set_class_vector(Label y, std::span<const double> values);

  /// Registered labels in ascending order.
  std::vector<Label> labels() const;
  std::vector<Label> classes_of(TaskId t) const;
  std::vector<TaskId> tasks() const;

  std::size_t num_tasks() const noexcept { return task_vectors_.size(); }
  std::size_t num_classes() const noexcept { return classes_.size(); }
  /// Number of stored scalars: task_dim * tasks + class_dim * classes.
  std::size_t parameter_count() const noexcept;
  const MemoryDims& dims() const noexcept { return dims_; }
  std::uint64_t seed() const noexcept { return seed_; }

  void persist(const std::filesystem::path& path) const;
  static ValueMemoryStore load(const std::filesystem::path& path);

  std::vector<std::uint8_t> serialize() const;
  static ValueMemoryStore deserialize(std::vector<std::uint8_t> bytes, const std::string& origin);

  friend bool operator==(const ValueMemoryStore&, const ValueMemoryStore&) = default;

 private:
  struct ClassEntry {
    std::string name;
    std::uint32_t task = 0;
    std::vector<double> vector;
    friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
  };

  std::vector<double> initial_vector(std::uint64_t kind, std::uint64_t id, std::size_t dim) const;
  const ClassEntry& entry(Label y) const;

  MemoryDims dims_;
  std::uint64_t seed_ = 0;
  std::map<std::uint32_t, std::vector<double>> task_vectors_;
  std::map<Label, ClassEntry> classes_;
  std::set<std::uint32_t> frozen_;
  std::optional<std::uint32_t> latest_task_;
};

}  // namespace icl
