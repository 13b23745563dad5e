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
#include <span>
#include <string>
#include <vector>

namespace icl {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with per-parameter moment state and step count.
/// Parameters that receive no step keep their state untouched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::string& key, std::span<double> param, std::span<const double> grad);

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps(const std::string& key) const;

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace icl
