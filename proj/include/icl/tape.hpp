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
#include <string>
#include <unordered_map>
#include <vector>

#include "icl/matrix.hpp"

namespace icl {

/// Handle to a node recorded on a GradTape.
struct Node {
  std::uint32_t id = 0;
};

/// Records a fixed graph of dense primitives, evaluates it for bound inputs and
/// accumulates reverse-mode gradients for every trainable input.
///
/// Nodes are appended in topological order, so the recording order is the
/// forward order and its reverse is a valid backward schedule. The tape may be
/// replayed with new bindings any number of times; the structure never changes
/// after recording.
class GradTape {
 public:
  using Bindings = std::unordered_map<std::string, Matrix>;
  using Gradients = std::map<std::string, Matrix>;

  enum class Op : std::uint8_t {
    Input,
    Constant,
    MatMul,
    MatMulNT,
    Add,
    Scale,
    AddScalar,
    RowSoftmax,
    RowLogSoftmax,
    MeanRows,
    ConcatCols,
    ConcatRows,
    SliceCols,
    NormalizeRows,
    Gelu,
    Dot,
    Sum,
    Log,
    Abs,
    Relu,
  };

  Node input(std::string name, bool trainable = true);
  Node constant(Matrix value);

  Node matmul(Node a, Node b);
  /// a * b^T
  Node matmul_nt(Node a, Node b);
  /// Elementwise sum; b may also be a 1 x cols row broadcast over the rows of a.
  Node add(Node a, Node b);
  Node scale(Node a, double s);
  Node add_scalar(Node a, double s);
  Node row_softmax(Node a);
  Node row_log_softmax(Node a);
  Node mean_rows(Node a);
  Node concat_cols(const std::vector<Node>& parts);
  Node concat_rows(const std::vector<Node>& parts);
  /// Columns [begin, end).
  Node slice_cols(Node a, std::size_t begin, std::size_t end);
  Node normalize_rows(Node a);
  Node gelu(Node a);
  /// Frobenius inner product, 1 x 1.
  Node dot(Node a, Node b);
  Node sum(Node a);
  Node log(Node a);
  Node abs(Node a);
  Node relu(Node a);

  /// Selects the node returned by forward and seeded by backward. Defaults to
  /// the most recently recorded node.
  void set_output(Node n);
  Node output() const;

  const Matrix& forward(const Bindings& inputs);
  Gradients backward(const Matrix& output_grad);
  /// Seeds a 1 x 1 output with gradient 1.
  Gradients backward();

  const Matrix& value(Node n) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool has_forward() const noexcept { return forwarded_; }

  /// Node ids visited by the most recent backward pass, in visit order.
  const std::vector<std::uint32_t>& backward_visits() const noexcept { return visits_; }

 private:
  struct Record {
    Op op{};
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::vector<std::uint32_t> parts;
    double scalar = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string name;
    bool trainable = false;
  };

  Node push(Record r);
  void check(Node n) const;
  void eval(std::uint32_t i);
  void propagate(std::uint32_t i);
  [[noreturn]] void shape_error(std::uint32_t i, const std::string& detail) const;

  std::vector<Record> nodes_;
  std::vector<Matrix> constants_;
  std::vector<Matrix> values_;
  std::vector<Matrix> grads_;
  std::vector<char> has_grad_;
  std::vector<std::uint32_t> visits_;
  std::uint32_t output_ = 0;
  bool output_set_ = false;
  bool forwarded_ = false;
};

std::string_view op_name(GradTape::Op op);

/// Gaussian-error linear unit, exact erf form.
double gelu(double x);
double gelu_derivative(double x);

}  // namespace icl
