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
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace icl {

/// Lower-triangular a[T][t]: accuracy on task t after training through task T.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks) : tasks_(tasks) {}

  /// Throws IncompleteRow for t > T or indices outside the task count.
  void set(std::size_t T, std::size_t t, double accuracy);
  std::optional<double> get(std::size_t T, std::size_t t) const;

  std::size_t tasks() const noexcept { return tasks_; }
  std::size_t entries() const noexcept { return cells_.size(); }
  bool row_complete(std::size_t T) const;
  /// Entries of row T in task order; IncompleteRow unless complete.
  std::vector<double> row(std::size_t T) const;
  /// a[T][t] for every recorded T >= t.
  std::vector<std::pair<std::size_t, double>> curve(std::size_t t) const;

  /// Long format: after_task,task,accuracy.
  std::string to_csv() const;
  static AccuracyMatrix from_csv(const std::string& text, const std::string& origin);

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::size_t tasks_ = 0;
  std::map<std::pair<std::size_t, std::size_t>, double> cells_;
};

/// Mean of row T.
double incremental_accuracy(const AccuracyMatrix& m, std::size_t T);

/// task,after_task,accuracy for every task's curve.
std::string forgetting_curves_csv(const AccuracyMatrix& m);

double accuracy(const std::vector<std::uint32_t>& predicted, const std::vector<std::uint32_t>& truth);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace icl
