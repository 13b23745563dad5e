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

#include "icl/matrix.hpp"

#include <cmath>

#include "icl/errors.hpp"

namespace icl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroNorm: return "ZeroNorm";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::HeadDivisibility: return "HeadDivisibility";
    case ErrorKind::NoForwardPass: return "NoForwardPass";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::FrozenTask: return "FrozenTask";
    case ErrorKind::ConflictingTask: return "ConflictingTask";
    case ErrorKind::OutOfOrderTask: return "OutOfOrderTask";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::EmptyCandidates: return "EmptyCandidates";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptyStore: return "EmptyStore";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::InvalidPartition: return "InvalidPartition";
    case ErrorKind::IncompleteRow: return "IncompleteRow";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::ClientFailure: return "ClientFailure";
  }
  return "Unknown";
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw Error(ErrorKind::ShapeMismatch, "matrix data length " + std::to_string(data.size()) +
                                              " does not match " + std::to_string(r) + "x" +
                                              std::to_string(c));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> init) {
  Matrix m;
  m.rows = init.size();
  m.cols = m.rows ? init.begin()->size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : init) {
    if (r.size() != m.cols) throw Error(ErrorKind::ShapeMismatch, "ragged row in from_rows");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const noexcept {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "dot of unequal lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > kNormEpsilon)) throw Error(ErrorKind::ZeroNorm, "vector norm below 1e-12");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > kNormEpsilon) || !(nb > kNormEpsilon)) {
    throw Error(ErrorKind::ZeroNorm, "cosine of a zero vector");
  }
  return dot(a, b) / (na * nb);
}

void round_to_float(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace icl
