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

#include "icl/adam.hpp"

#include <cmath>

#include "icl/errors.hpp"

namespace icl {

void Adam::step(const std::string& key, std::span<double> param, std::span<const double> grad) {
  if (param.size() != grad.size()) {
    throw Error(ErrorKind::ShapeMismatch, "gradient for '" + key + "' has the wrong size");
  }
  State& s = state_[key];
  if (s.m.empty()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * grad[i];
    s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double m_hat = s.m[i] / c1;
    const double v_hat = s.v[i] / c2;
    param[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
  }
}

std::uint64_t Adam::steps(const std::string& key) const {
  auto it = state_.find(key);
  return it == state_.end() ? 0 : it->second.t;
}

}  // namespace icl
