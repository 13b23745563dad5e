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

#include "icl/buffer.hpp"

#include <algorithm>
#include <numeric>

namespace icl {

RehearsalBuffer::RehearsalBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {}

std::map<Label, std::size_t> RehearsalBuffer::class_counts() const {
  std::map<Label, std::size_t> counts;
  for (const auto& s : slots_) ++counts[s.label];
  return counts;
}

std::size_t RehearsalBuffer::quota(Label y) const {
  auto it = std::find(class_order_.begin(), class_order_.end(), y);
  if (it == class_order_.end() || class_order_.empty()) return 0;
  const std::size_t n = class_order_.size();
  const auto rank = static_cast<std::size_t>(it - class_order_.begin());
  return capacity_ / n + (rank < capacity_ % n ? 1 : 0);
}

std::vector<std::size_t> RehearsalBuffer::slots_of(Label y) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].label == y) idx.push_back(i);
  }
  return idx;
}

void RehearsalBuffer::insert(const Sample& record) {
  if (capacity_ == 0) return;
  if (!seen_.contains(record.label)) class_order_.push_back(record.label);
  const std::uint64_t seen = ++seen_[record.label];

  const auto own = slots_of(record.label);
  const std::size_t target = quota(record.label);

  if (own.size() < target) {
    if (slots_.size() < capacity_) {
      slots_.push_back(record);
      return;
    }
    // Full: take a slot from the class furthest over its quota.
    const auto counts = class_counts();
    Label victim = record.label;
    std::size_t worst = 0;
    for (const auto& [y, c] : counts) {
      const std::size_t q = quota(y);
      if (c > q && c - q > worst) {
        worst = c - q;
        victim = y;
      }
    }
    if (worst == 0) return;
    const auto pool = slots_of(victim);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    slots_[pool[pick(rng_)]] = record;
    return;
  }
  if (own.empty()) return;
  std::uniform_int_distribution<std::uint64_t> draw(0, seen - 1);
  const std::uint64_t j = draw(rng_);
  if (j < own.size()) slots_[own[j]] = record;
}

std::vector<Sample> RehearsalBuffer::sample(std::size_t n, std::uint64_t seed) const {
  const std::size_t k = std::min(n, slots_.size());
  std::vector<std::size_t> idx(slots_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(slots_[idx[i]]);
  }
  return out;
}

}  // namespace icl
