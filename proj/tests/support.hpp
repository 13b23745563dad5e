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
#include <random>
#include <string>
#include <vector>

#include "icl/finite_diff.hpp"
#include "icl/matrix.hpp"
#include "icl/tape.hpp"

namespace icl::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  return random_matrix(1, n, rng).data;
}

/// Relative error between tape gradients and central differences, taken over
/// the concatenation of every trainable binding.
inline double tape_fd_error(GradTape& tape, GradTape::Bindings bindings, double h = 1e-5) {
  tape.forward(bindings);
  const auto grads = tape.backward();
  std::vector<double> analytic, numeric;
  for (const auto& [name, g] : grads) {
    auto f = [&](std::span<const double> x) {
      auto b = bindings;
      b[name].data.assign(x.begin(), x.end());
      return tape.forward(b)(0, 0);
    };
    const auto fd = finite_diff_grad(f, bindings.at(name).data, h);
    analytic.insert(analytic.end(), g.data.begin(), g.data.end());
    numeric.insert(numeric.end(), fd.begin(), fd.end());
  }
  tape.forward(bindings);
  return relative_error(analytic, numeric);
}

}  // namespace icl::testing
