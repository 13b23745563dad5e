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

#include "icl/interactor.hpp"

#include <cmath>
#include <random>

#include "icl/errors.hpp"

namespace icl {

namespace {

void check_tokens(const InteractorDims& dims, const Matrix& m, const char* what) {
  if (m.rows != dims.tokens || m.cols != dims.model_dim) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " is " + m.shape_string() +
                                              ", expected " + std::to_string(dims.tokens) + "x" +
                                              std::to_string(dims.model_dim));
  }
}

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data) v = u(rng);
  round_to_float(m.data);
  return m;
}

std::string head_name(const char* base, std::size_t h) { return std::string(base) + "." + std::to_string(h); }

}  // namespace

void InteractorDims::validate() const {
  if (tokens == 0 || model_dim == 0 || task_dim == 0 || heads == 0) {
    throw Error(ErrorKind::ShapeMismatch, "interactor dims must be positive");
  }
  if (model_dim % heads != 0) {
    throw Error(ErrorKind::HeadDivisibility, "d_c=" + std::to_string(model_dim) +
                                                 " is not divisible by " + std::to_string(heads) +
                                                 " heads");
  }
}

QueryInteractorParams QueryInteractorParams::init(const InteractorDims& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(seed);
  const std::size_t dc = dims.model_dim;
  const std::size_t dh = dims.head_dim();
  QueryInteractorParams p;
  p.dims = dims;
  p.class_weight = uniform_matrix(rng, dc, dc);
  p.class_bias = Matrix(1, dc);
  p.value_weight = uniform_matrix(rng, dc, dc);
  p.value_bias = Matrix(1, dc);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    p.query_weight.push_back(uniform_matrix(rng, dh, dh));
    p.query_bias.emplace_back(1, dh);
    p.key_weight.push_back(uniform_matrix(rng, dh, dh));
    p.key_bias.emplace_back(1, dh);
  }
  p.out_weight = uniform_matrix(rng, dc, dims.task_dim);
  p.out_bias = Matrix(1, dims.task_dim);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> QueryInteractorParams::named() {
  std::vector<std::pair<std::string, Matrix*>> out{
      {"theta_c.weight", &class_weight},
      {"theta_c.bias", &class_bias},
      {"theta_tau.weight", &value_weight},
      {"theta_tau.bias", &value_bias},
  };
  for (std::size_t h = 0; h < query_weight.size(); ++h) {
    out.emplace_back(head_name("theta_sa.query.weight", h), &query_weight[h]);
    out.emplace_back(head_name("theta_sa.query.bias", h), &query_bias[h]);
    out.emplace_back(head_name("theta_sa.key.weight", h), &key_weight[h]);
    out.emplace_back(head_name("theta_sa.key.bias", h), &key_bias[h]);
  }
  out.emplace_back("theta_o.weight", &out_weight);
  out.emplace_back("theta_o.bias", &out_bias);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> QueryInteractorParams::named() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<QueryInteractorParams*>(this)->named()) out.emplace_back(name, m);
  return out;
}

void QueryInteractorParams::validate() const {
  dims.validate();
  const std::size_t dc = dims.model_dim;
  const std::size_t dh = dims.head_dim();
  auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
    if (m.rows != r || m.cols != c) {
      throw Error(ErrorKind::ShapeMismatch, name + " is " + m.shape_string() + ", expected " +
                                                std::to_string(r) + "x" + std::to_string(c));
    }
    if (!m.all_finite()) throw Error(ErrorKind::NonFiniteValue, name + " has non-finite entries");
  };
  expect(class_weight, dc, dc, "theta_c.weight");
  expect(class_bias, 1, dc, "theta_c.bias");
  expect(value_weight, dc, dc, "theta_tau.weight");
  expect(value_bias, 1, dc, "theta_tau.bias");
  if (query_weight.size() != dims.heads || query_bias.size() != dims.heads ||
      key_weight.size() != dims.heads || key_bias.size() != dims.heads) {
    throw Error(ErrorKind::ShapeMismatch, "per-head parameter count differs from head count");
  }
  for (std::size_t h = 0; h < dims.heads; ++h) {
    expect(query_weight[h], dh, dh, head_name("theta_sa.query.weight", h));
    expect(query_bias[h], 1, dh, head_name("theta_sa.query.bias", h));
    expect(key_weight[h], dh, dh, head_name("theta_sa.key.weight", h));
    expect(key_bias[h], 1, dh, head_name("theta_sa.key.bias", h));
  }
  expect(out_weight, dc, dims.task_dim, "theta_o.weight");
  expect(out_bias, 1, dims.task_dim, "theta_o.bias");
}

InteractorNodes bind_interactor(GradTape& tape, const QueryInteractorParams& params, bool trainable) {
  InteractorNodes n;
  n.class_weight = tape.input("theta_c.weight", trainable);
  n.class_bias = tape.input("theta_c.bias", trainable);
  n.value_weight = tape.input("theta_tau.weight", trainable);
  n.value_bias = tape.input("theta_tau.bias", trainable);
  for (std::size_t h = 0; h < params.dims.heads; ++h) {
    n.query_weight.push_back(tape.input(head_name("theta_sa.query.weight", h), trainable));
    n.query_bias.push_back(tape.input(head_name("theta_sa.query.bias", h), trainable));
    n.key_weight.push_back(tape.input(head_name("theta_sa.key.weight", h), trainable));
    n.key_bias.push_back(tape.input(head_name("theta_sa.key.bias", h), trainable));
  }
  n.out_weight = tape.input("theta_o.weight", trainable);
  n.out_bias = tape.input("theta_o.bias", trainable);
  return n;
}

void add_bindings(GradTape::Bindings& bindings, const QueryInteractorParams& params) {
  for (const auto& [name, m] : params.named()) bindings[name] = *m;
}

Node record_projection(GradTape& tape, const InteractorNodes& p, Node knowledge, bool nonlinearity) {
  Node affine = tape.add(tape.matmul(knowledge, p.class_weight), p.class_bias);
  return nonlinearity ? tape.gelu(affine) : affine;
}

Node record_ckt_mha(GradTape& tape, const InteractorNodes& p, const InteractorDims& dims,
                    Node class_tokens, Node knowledge, std::vector<Node>* attention) {
  dims.validate();
  const std::size_t dh = dims.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Node values = tape.add(tape.matmul(knowledge, p.value_weight), p.value_bias);
  std::vector<Node> heads;
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const std::size_t lo = h * dh;
    const std::size_t hi = lo + dh;
    Node q = tape.add(tape.matmul(tape.slice_cols(class_tokens, lo, hi), p.query_weight[h]),
                      p.query_bias[h]);
    Node k = tape.add(tape.matmul(tape.slice_cols(knowledge, lo, hi), p.key_weight[h]),
                      p.key_bias[h]);
    Node weights = tape.row_softmax(tape.scale(tape.matmul_nt(q, k), inv_sqrt));
    if (attention) attention->push_back(weights);
    heads.push_back(tape.matmul(weights, tape.slice_cols(values, lo, hi)));
  }
  Node joined = heads.size() == 1 ? heads.front() : tape.concat_cols(heads);
  return tape.add(tape.matmul(joined, p.out_weight), p.out_bias);
}

Node record_composition(GradTape& tape, Node task_tokens, Node class_tokens) {
  return tape.concat_cols({tape.mean_rows(task_tokens), tape.mean_rows(class_tokens)});
}

QueryPathNodes record_query_path(GradTape& tape, const InteractorNodes& p,
                                 const QueryInteractorParams& params, Node knowledge) {
  QueryPathNodes out;
  out.class_tokens = record_projection(tape, p, knowledge, params.use_nonlinearity);
  out.task_tokens =
      record_ckt_mha(tape, p, params.dims, out.class_tokens, knowledge, &out.attention);
  out.feature = record_composition(tape, out.task_tokens, out.class_tokens);
  return out;
}

Matrix project_tokens(const QueryInteractorParams& params, const TokenEmbedding& knowledge) {
  check_tokens(params.dims, knowledge, "knowledge");
  GradTape tape;
  auto p = bind_interactor(tape, params, false);
  Node out = record_projection(tape, p, tape.constant(knowledge), params.use_nonlinearity);
  tape.set_output(out);
  GradTape::Bindings b;
  add_bindings(b, params);
  return tape.forward(b);
}

namespace {

struct MhaRun {
  Matrix output;
  std::vector<Matrix> attention;
};

MhaRun run_mha(const QueryInteractorParams& params, const Matrix& class_tokens, const Matrix& knowledge) {
  check_tokens(params.dims, class_tokens, "class tokens");
  check_tokens(params.dims, knowledge, "knowledge");
  GradTape tape;
  auto p = bind_interactor(tape, params, false);
  std::vector<Node> att;
  Node out = record_ckt_mha(tape, p, params.dims, tape.constant(class_tokens),
                            tape.constant(knowledge), &att);
  tape.set_output(out);
  GradTape::Bindings b;
  add_bindings(b, params);
  MhaRun run;
  run.output = tape.forward(b);
  for (Node a : att) run.attention.push_back(tape.value(a));
  return run;
}

}  // namespace

Matrix ckt_mha(const QueryInteractorParams& params, const Matrix& class_tokens, const Matrix& knowledge) {
  return run_mha(params, class_tokens, knowledge).output;
}

std::vector<Matrix> attention_weights(const QueryInteractorParams& params, const Matrix& class_tokens,
                                      const Matrix& knowledge) {
  return run_mha(params, class_tokens, knowledge).attention;
}

std::vector<double> compose_feature(const Matrix& task_tokens, const Matrix& class_tokens) {
  if (task_tokens.rows != class_tokens.rows || task_tokens.rows == 0) {
    throw Error(ErrorKind::ShapeMismatch, "task tokens " + task_tokens.shape_string() +
                                              " vs class tokens " + class_tokens.shape_string());
  }
  GradTape tape;
  tape.set_output(record_composition(tape, tape.constant(task_tokens), tape.constant(class_tokens)));
  return tape.forward({}).data;
}

std::vector<double> query_feature(const QueryInteractorParams& params, const TokenEmbedding& knowledge) {
  return query_features(params, std::span<const TokenEmbedding>(&knowledge, 1)).front();
}

std::vector<std::vector<double>> query_features(const QueryInteractorParams& params,
                                                std::span<const TokenEmbedding> samples) {
  if (samples.empty()) return {};
  GradTape tape;
  auto p = bind_interactor(tape, params, false);
  std::vector<Node> features;
  features.reserve(samples.size());
  for (const auto& s : samples) {
    check_tokens(params.dims, s, "knowledge");
    features.push_back(record_query_path(tape, p, params, tape.constant(s)).feature);
  }
  GradTape::Bindings b;
  add_bindings(b, params);
  tape.forward(b);
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (Node f : features) out.push_back(tape.value(f).data);
  return out;
}

}  // namespace icl
