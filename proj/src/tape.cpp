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

#include "icl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "icl/errors.hpp"

namespace icl {

namespace {

void accumulate(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

std::string_view op_name(GradTape::Op op) {
  using Op = GradTape::Op;
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::RowSoftmax: return "row_softmax";
    case Op::RowLogSoftmax: return "row_log_softmax";
    case Op::MeanRows: return "mean_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::NormalizeRows: return "normalize_rows";
    case Op::Gelu: return "gelu";
    case Op::Dot: return "dot";
    case Op::Sum: return "sum";
    case Op::Log: return "log";
    case Op::Abs: return "abs";
    case Op::Relu: return "relu";
  }
  return "?";
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Node GradTape::push(Record r) {
  nodes_.push_back(std::move(r));
  forwarded_ = false;
  return Node{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void GradTape::check(Node n) const {
  if (n.id >= nodes_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "node " + std::to_string(n.id) + " not on this tape");
  }
}

Node GradTape::input(std::string name, bool trainable) {
  Record r;
  r.op = Op::Input;
  r.name = std::move(name);
  r.trainable = trainable;
  return push(std::move(r));
}

Node GradTape::constant(Matrix value) {
  Record r;
  r.op = Op::Constant;
  r.a = static_cast<std::uint32_t>(constants_.size());
  constants_.push_back(std::move(value));
  return push(std::move(r));
}

#define ICL_UNARY(fn, opcode)      \
  Node GradTape::fn(Node a) {      \
    check(a);                      \
    Record r;                      \
    r.op = Op::opcode;             \
    r.a = a.id;                    \
    return push(std::move(r));     \
  }

#define ICL_BINARY(fn, opcode)         \
  Node GradTape::fn(Node a, Node b) {  \
    check(a);                          \
    check(b);                          \
    Record r;                          \
    r.op = Op::opcode;                 \
    r.a = a.id;                        \
    r.b = b.id;                        \
    return push(std::move(r));         \
  }

ICL_BINARY(matmul, MatMul)
ICL_BINARY(matmul_nt, MatMulNT)
ICL_BINARY(add, Add)
ICL_BINARY(dot, Dot)
ICL_UNARY(row_softmax, RowSoftmax)
ICL_UNARY(row_log_softmax, RowLogSoftmax)
ICL_UNARY(mean_rows, MeanRows)
ICL_UNARY(normalize_rows, NormalizeRows)
ICL_UNARY(gelu, Gelu)
ICL_UNARY(sum, Sum)
ICL_UNARY(log, Log)
ICL_UNARY(abs, Abs)
ICL_UNARY(relu, Relu)

#undef ICL_UNARY
#undef ICL_BINARY

Node GradTape::scale(Node a, double s) {
  check(a);
  Record r;
  r.op = Op::Scale;
  r.a = a.id;
  r.scalar = s;
  return push(std::move(r));
}

Node GradTape::add_scalar(Node a, double s) {
  check(a);
  Record r;
  r.op = Op::AddScalar;
  r.a = a.id;
  r.scalar = s;
  return push(std::move(r));
}

Node GradTape::concat_cols(const std::vector<Node>& parts) {
  Record r;
  r.op = Op::ConcatCols;
  for (Node p : parts) {
    check(p);
    r.parts.push_back(p.id);
  }
  return push(std::move(r));
}

Node GradTape::concat_rows(const std::vector<Node>& parts) {
  Record r;
  r.op = Op::ConcatRows;
  for (Node p : parts) {
    check(p);
    r.parts.push_back(p.id);
  }
  return push(std::move(r));
}

Node GradTape::slice_cols(Node a, std::size_t begin, std::size_t end) {
  check(a);
  Record r;
  r.op = Op::SliceCols;
  r.a = a.id;
  r.begin = begin;
  r.end = end;
  return push(std::move(r));
}

void GradTape::set_output(Node n) {
  check(n);
  output_ = n.id;
  output_set_ = true;
}

Node GradTape::output() const {
  if (nodes_.empty()) throw Error(ErrorKind::ShapeMismatch, "empty tape has no output");
  return Node{output_set_ ? output_ : static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Matrix& GradTape::value(Node n) const {
  if (!forwarded_) throw Error(ErrorKind::NoForwardPass, "value requested before forward");
  check(n);
  return values_[n.id];
}

void GradTape::shape_error(std::uint32_t i, const std::string& detail) const {
  throw Error(ErrorKind::ShapeMismatch, "node " + std::to_string(i) + " (" +
                                            std::string(op_name(nodes_[i].op)) + "): " + detail);
}

const Matrix& GradTape::forward(const Bindings& inputs) {
  forwarded_ = false;
  values_.resize(nodes_.size());
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    const Record& r = nodes_[i];
    if (r.op == Op::Input) {
      auto it = inputs.find(r.name);
      if (it == inputs.end()) shape_error(i, "input '" + r.name + "' is not bound");
      if (!it->second.all_finite()) {
        throw Error(ErrorKind::NonFiniteValue, "input '" + r.name + "' has non-finite entries");
      }
      values_[i] = it->second;
    } else if (r.op == Op::Constant) {
      values_[i] = constants_[r.a];
    } else {
      eval(i);
      if (!values_[i].all_finite()) {
        throw Error(ErrorKind::NonFiniteValue, "node " + std::to_string(i) + " (" +
                                                   std::string(op_name(r.op)) +
                                                   ") produced a non-finite value");
      }
    }
  }
  forwarded_ = true;
  return values_[output().id];
}

void GradTape::eval(std::uint32_t i) {
  const Record& r = nodes_[i];
  Matrix& out = values_[i];
  const Matrix& A = values_[r.a];
  const Matrix& B = values_[r.b];
  switch (r.op) {
    case Op::Input:
    case Op::Constant:
      break;
    case Op::MatMul: {
      if (A.cols != B.rows) shape_error(i, A.shape_string() + " * " + B.shape_string());
      out = Matrix(A.rows, B.cols);
      for (std::size_t m = 0; m < A.rows; ++m) {
        for (std::size_t k = 0; k < A.cols; ++k) {
          const double a = A(m, k);
          const double* brow = &B.data[k * B.cols];
          double* orow = &out.data[m * B.cols];
          for (std::size_t n = 0; n < B.cols; ++n) orow[n] += a * brow[n];
        }
      }
      break;
    }
    case Op::MatMulNT: {
      if (A.cols != B.cols) shape_error(i, A.shape_string() + " * (" + B.shape_string() + ")^T");
      out = Matrix(A.rows, B.rows);
      for (std::size_t m = 0; m < A.rows; ++m) {
        for (std::size_t n = 0; n < B.rows; ++n) {
          double s = 0.0;
          for (std::size_t k = 0; k < A.cols; ++k) s += A(m, k) * B(n, k);
          out(m, n) = s;
        }
      }
      break;
    }
    case Op::Add: {
      if (A.same_shape(B)) {
        out = A;
        accumulate(out, B);
      } else if (B.rows == 1 && B.cols == A.cols) {
        out = A;
        for (std::size_t m = 0; m < A.rows; ++m) {
          for (std::size_t n = 0; n < A.cols; ++n) out(m, n) += B(0, n);
        }
      } else {
        shape_error(i, A.shape_string() + " + " + B.shape_string());
      }
      break;
    }
    case Op::Scale:
      out = A;
      for (double& v : out.data) v *= r.scalar;
      break;
    case Op::AddScalar:
      out = A;
      for (double& v : out.data) v += r.scalar;
      break;
    case Op::RowSoftmax:
    case Op::RowLogSoftmax: {
      if (A.cols == 0) shape_error(i, "softmax over zero columns");
      out = A;
      for (std::size_t m = 0; m < A.rows; ++m) {
        auto row = out.row(m);
        const double mx = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) total += std::exp(v - mx);
        if (r.op == Op::RowSoftmax) {
          for (double& v : row) v = std::exp(v - mx) / total;
        } else {
          const double lse = mx + std::log(total);
          for (double& v : row) v -= lse;
        }
      }
      break;
    }
    case Op::MeanRows: {
      if (A.rows == 0) shape_error(i, "mean over zero rows");
      out = Matrix(1, A.cols);
      for (std::size_t m = 0; m < A.rows; ++m) {
        for (std::size_t n = 0; n < A.cols; ++n) out(0, n) += A(m, n);
      }
      for (double& v : out.data) v /= static_cast<double>(A.rows);
      break;
    }
    case Op::ConcatCols: {
      if (r.parts.empty()) shape_error(i, "concat of nothing");
      const std::size_t rows = values_[r.parts.front()].rows;
      std::size_t cols = 0;
      for (auto p : r.parts) {
        if (values_[p].rows != rows) shape_error(i, "row counts differ in concat_cols");
        cols += values_[p].cols;
      }
      out = Matrix(rows, cols);
      std::size_t off = 0;
      for (auto p : r.parts) {
        const Matrix& P = values_[p];
        for (std::size_t m = 0; m < rows; ++m) {
          std::copy(P.row(m).begin(), P.row(m).end(), out.row(m).begin() + off);
        }
        off += P.cols;
      }
      break;
    }
    case Op::ConcatRows: {
      if (r.parts.empty()) shape_error(i, "concat of nothing");
      const std::size_t cols = values_[r.parts.front()].cols;
      out = Matrix(0, cols);
      for (auto p : r.parts) {
        if (values_[p].cols != cols) shape_error(i, "column counts differ in concat_rows");
        out.data.insert(out.data.end(), values_[p].data.begin(), values_[p].data.end());
        out.rows += values_[p].rows;
      }
      break;
    }
    case Op::SliceCols: {
      if (r.begin >= r.end || r.end > A.cols) {
        shape_error(i, "slice [" + std::to_string(r.begin) + "," + std::to_string(r.end) +
                           ") of " + A.shape_string());
      }
      out = Matrix(A.rows, r.end - r.begin);
      for (std::size_t m = 0; m < A.rows; ++m) {
        for (std::size_t n = r.begin; n < r.end; ++n) out(m, n - r.begin) = A(m, n);
      }
      break;
    }
    case Op::NormalizeRows: {
      out = A;
      for (std::size_t m = 0; m < A.rows; ++m) {
        auto row = out.row(m);
        const double n = norm(row);
        if (!(n > kNormEpsilon)) {
          throw Error(ErrorKind::ZeroNorm, "node " + std::to_string(i) + " normalizes a zero row");
        }
        for (double& v : row) v /= n;
      }
      break;
    }
    case Op::Gelu:
      out = A;
      for (double& v : out.data) v = icl::gelu(v);
      break;
    case Op::Dot: {
      if (!A.same_shape(B)) shape_error(i, A.shape_string() + " . " + B.shape_string());
      out = Matrix::scalar(icl::dot(A.data, B.data));
      break;
    }
    case Op::Sum: {
      double s = 0.0;
      for (double v : A.data) s += v;
      out = Matrix::scalar(s);
      break;
    }
    case Op::Log:
      out = A;
      for (double& v : out.data) v = std::log(v);
      break;
    case Op::Abs:
      out = A;
      for (double& v : out.data) v = std::fabs(v);
      break;
    case Op::Relu:
      out = A;
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      break;
  }
}

GradTape::Gradients GradTape::backward() { return backward(Matrix::scalar(1.0)); }

GradTape::Gradients GradTape::backward(const Matrix& output_grad) {
  if (!forwarded_) throw Error(ErrorKind::NoForwardPass, "backward called before forward");
  const std::uint32_t out = output().id;
  if (!output_grad.same_shape(values_[out])) {
    throw Error(ErrorKind::ShapeMismatch, "output gradient " + output_grad.shape_string() +
                                              " vs output " + values_[out].shape_string());
  }
  grads_.assign(nodes_.size(), Matrix());
  has_grad_.assign(nodes_.size(), 0);
  visits_.clear();
  grads_[out] = output_grad;
  has_grad_[out] = 1;

  for (std::int64_t i = out; i >= 0; --i) {
    const auto idx = static_cast<std::uint32_t>(i);
    if (!has_grad_[idx]) continue;
    visits_.push_back(idx);
    propagate(idx);
  }

  Gradients result;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    const Record& r = nodes_[i];
    if (r.op != Op::Input || !r.trainable) continue;
    Matrix g = has_grad_[i] ? grads_[i] : Matrix(values_[i].rows, values_[i].cols);
    auto [it, inserted] = result.try_emplace(r.name, std::move(g));
    if (!inserted && has_grad_[i]) accumulate(it->second, grads_[i]);
  }
  return result;
}

void GradTape::propagate(std::uint32_t i) {
  const Record& r = nodes_[i];
  const Matrix& G = grads_[i];
  const Matrix& Y = values_[i];

  auto slot = [&](std::uint32_t j) -> Matrix& {
    if (!has_grad_[j]) {
      grads_[j] = Matrix(values_[j].rows, values_[j].cols);
      has_grad_[j] = 1;
    }
    return grads_[j];
  };

  switch (r.op) {
    case Op::Input:
    case Op::Constant:
      break;
    case Op::MatMul: {
      const Matrix& A = values_[r.a];
      const Matrix& B = values_[r.b];
      {
        Matrix& dA = slot(r.a);
        for (std::size_t m = 0; m < A.rows; ++m) {
          for (std::size_t k = 0; k < A.cols; ++k) {
            double s = 0.0;
            for (std::size_t n = 0; n < B.cols; ++n) s += G(m, n) * B(k, n);
            dA(m, k) += s;
          }
        }
      }
      {
        Matrix& dB = slot(r.b);
        for (std::size_t m = 0; m < A.rows; ++m) {
          for (std::size_t k = 0; k < A.cols; ++k) {
            const double a = A(m, k);
            for (std::size_t n = 0; n < B.cols; ++n) dB(k, n) += a * G(m, n);
          }
        }
      }
      break;
    }
    case Op::MatMulNT: {
      const Matrix& A = values_[r.a];
      const Matrix& B = values_[r.b];
      {
        Matrix& dA = slot(r.a);
        for (std::size_t m = 0; m < A.rows; ++m) {
          for (std::size_t n = 0; n < B.rows; ++n) {
            const double g = G(m, n);
            for (std::size_t k = 0; k < A.cols; ++k) dA(m, k) += g * B(n, k);
          }
        }
      }
      {
        Matrix& dB = slot(r.b);
        for (std::size_t m = 0; m < A.rows; ++m) {
          for (std::size_t n = 0; n < B.rows; ++n) {
            const double g = G(m, n);
            for (std::size_t k = 0; k < A.cols; ++k) dB(n, k) += g * A(m, k);
          }
        }
      }
      break;
    }
    case Op::Add: {
      accumulate(slot(r.a), G);
      Matrix& dB = slot(r.b);
      if (dB.same_shape(G)) {
        accumulate(dB, G);
      } else {
        for (std::size_t m = 0; m < G.rows; ++m) {
          for (std::size_t n = 0; n < G.cols; ++n) dB(0, n) += G(m, n);
        }
      }
      break;
    }
    case Op::Scale: {
      Matrix& dA = slot(r.a);
      for (std::size_t k = 0; k < G.data.size(); ++k) dA.data[k] += r.scalar * G.data[k];
      break;
    }
    case Op::AddScalar:
      accumulate(slot(r.a), G);
      break;
    case Op::RowSoftmax: {
      Matrix& dA = slot(r.a);
      for (std::size_t m = 0; m < Y.rows; ++m) {
        const double inner = icl::dot(G.row(m), Y.row(m));
        for (std::size_t n = 0; n < Y.cols; ++n) dA(m, n) += Y(m, n) * (G(m, n) - inner);
      }
      break;
    }
    case Op::RowLogSoftmax: {
      Matrix& dA = slot(r.a);
      for (std::size_t m = 0; m < Y.rows; ++m) {
        double gsum = 0.0;
        for (double g : G.row(m)) gsum += g;
        for (std::size_t n = 0; n < Y.cols; ++n) dA(m, n) += G(m, n) - std::exp(Y(m, n)) * gsum;
      }
      break;
    }
    case Op::MeanRows: {
      Matrix& dA = slot(r.a);
      const double inv = 1.0 / static_cast<double>(dA.rows);
      for (std::size_t m = 0; m < dA.rows; ++m) {
        for (std::size_t n = 0; n < dA.cols; ++n) dA(m, n) += G(0, n) * inv;
      }
      break;
    }
    case Op::ConcatCols: {
      std::size_t off = 0;
      for (auto p : r.parts) {
        Matrix& dP = slot(p);
        for (std::size_t m = 0; m < dP.rows; ++m) {
          for (std::size_t n = 0; n < dP.cols; ++n) dP(m, n) += G(m, off + n);
        }
        off += dP.cols;
      }
      break;
    }
    case Op::ConcatRows: {
      std::size_t off = 0;
      for (auto p : r.parts) {
        Matrix& dP = slot(p);
        for (std::size_t k = 0; k < dP.data.size(); ++k) dP.data[k] += G.data[off + k];
        off += dP.data.size();
      }
      break;
    }
    case Op::SliceCols: {
      Matrix& dA = slot(r.a);
      for (std::size_t m = 0; m < G.rows; ++m) {
        for (std::size_t n = 0; n < G.cols; ++n) dA(m, r.begin + n) += G(m, n);
      }
      break;
    }
    case Op::NormalizeRows: {
      const Matrix& X = values_[r.a];
      Matrix& dA = slot(r.a);
      for (std::size_t m = 0; m < Y.rows; ++m) {
        const double n = norm(X.row(m));
        const double inner = icl::dot(G.row(m), Y.row(m));
        for (std::size_t k = 0; k < Y.cols; ++k) dA(m, k) += (G(m, k) - Y(m, k) * inner) / n;
      }
      break;
    }
    case Op::Gelu: {
      const Matrix& X = values_[r.a];
      Matrix& dA = slot(r.a);
      for (std::size_t k = 0; k < X.data.size(); ++k) {
        dA.data[k] += G.data[k] * gelu_derivative(X.data[k]);
      }
      break;
    }
    case Op::Dot: {
      const double g = G(0, 0);
      const Matrix& A = values_[r.a];
      const Matrix& B = values_[r.b];
      {
        Matrix& dA = slot(r.a);
        for (std::size_t k = 0; k < A.data.size(); ++k) dA.data[k] += g * B.data[k];
      }
      Matrix& dB = slot(r.b);
      for (std::size_t k = 0; k < B.data.size(); ++k) dB.data[k] += g * A.data[k];
      break;
    }
    case Op::Sum: {
      Matrix& dA = slot(r.a);
      for (double& v : dA.data) v += G(0, 0);
      break;
    }
    case Op::Log: {
      const Matrix& X = values_[r.a];
      Matrix& dA = slot(r.a);
      for (std::size_t k = 0; k < X.data.size(); ++k) dA.data[k] += G.data[k] / X.data[k];
      break;
    }
    case Op::Abs: {
      const Matrix& X = values_[r.a];
      Matrix& dA = slot(r.a);
      for (std::size_t k = 0; k < X.data.size(); ++k) {
        const double s = X.data[k] > 0.0 ? 1.0 : (X.data[k] < 0.0 ? -1.0 : 0.0);
        dA.data[k] += G.data[k] * s;
      }
      break;
    }
    case Op::Relu: {
      const Matrix& X = values_[r.a];
      Matrix& dA = slot(r.a);
      for (std::size_t k = 0; k < X.data.size(); ++k) {
        if (X.data[k] > 0.0) dA.data[k] += G.data[k];
      }
      break;
    }
  }
}

}  // namespace icl
