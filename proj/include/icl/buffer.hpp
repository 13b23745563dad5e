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
#include <random>
#include <vector>

#include "icl/sample.hpp"

namespace icl {

/// Bounded class-balanced rehearsal store.
///
/// Capacity is split evenly over every class seen so far (earlier classes take
/// the remainder). A class under its quota is admitted, evicting a random slot
/// of an over-quota class when full; a class at quota keeps a uniform
/// reservoir sample of its own stream.
class RehearsalBuffer {
 public:
  RehearsalBuffer(std::size_t capacity, std::uint64_t seed);

  void insert(const Sample& record);
  /// min(n, size()) records drawn uniformly without replacement.
  std::vector<Sample> sample(std::size_t n, std::uint64_t seed) const;

  std::size_t size() const noexcept { return slots_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return slots_.empty(); }
  const std::vector<Sample>& slots() const noexcept { return slots_; }
  std::map<Label, std::size_t> class_counts() const;
  /// Current quota of a seen class.
  std::size_t quota(Label y) const;

 private:
  std::vector<std::size_t> slots_of(Label y) const;

  std::size_t capacity_;
  std::mt19937_64 rng_;
  std::vector<Sample> slots_;
  std::vector<Label> class_order_;
  std::map<Label, std::uint64_t> seen_;
};

}  // namespace icl
