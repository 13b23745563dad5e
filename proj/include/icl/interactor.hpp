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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icl/matrix.hpp"
#include "icl/tape.hpp"

namespace icl {

/// Token embedding of one sample: L x d_c frozen backbone tokens.
using TokenEmbedding = Matrix;

struct InteractorDims {
  std::size_t tokens = 4;      // L
  std::size_t model_dim = 16;  // d_c
  std::size_t heads = 2;       // N_h
  std::size_t task_dim = 8;    // width of the task-feature stream

  std::size_t head_dim() const noexcept { return model_dim / heads; }
  /// Width of the composed retrieval feature (task part + class part).
  std::size_t feature_dim() const noexcept { return task_dim + model_dim; }
  /// Throws HeadDivisibility / ShapeMismatch on an unusable configuration.
  void validate() const;

  friend bool operator==(const InteractorDims&, const InteractorDims&) = default;
};

/// Trainable query-path parameters. Affine maps act on row vectors: y = x W + b.
struct QueryInteractorParams {
  InteractorDims dims;
  Matrix class_weight, class_bias;  // projector, d_c -> d_c
  Matrix value_weight, value_bias;  // task-value map, d_c -> d_c
  std::vector<Matrix> query_weight, query_bias, key_weight, key_bias;  // per head
  Matrix out_weight, out_bias;      // d_c -> task_dim
  /// Disables the projector nonlinearity; test hook only.
  bool use_nonlinearity = true;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
  static QueryInteractorParams init(const InteractorDims& dims, std::uint64_t seed);

  /// Stable (name, matrix) enumeration used by optimizers and checkpoints.
  std::vector<std::pair<std::string, Matrix*>> named();
  std::vector<std::pair<std::string, const Matrix*>> named() const;

  void validate() const;
  friend bool operator==(const QueryInteractorParams&, const QueryInteractorParams&) = default;
};

/// Parameter leaves of one tape.
struct InteractorNodes {
  Node class_weight, class_bias, value_weight, value_bias;
  std::vector<Node> query_weight, query_bias, key_weight, key_bias;
  Node out_weight, out_bias;
};

/// Records every parameter as a named input on the tape.
InteractorNodes bind_interactor(GradTape& tape, const QueryInteractorParams& params,
                                bool trainable = true);
/// Name -> value bindings matching bind_interactor.
void add_bindings(GradTape::Bindings& bindings, const QueryInteractorParams& params);

struct QueryPathNodes {
  Node class_tokens;  // projector output, L x d_c
  Node task_tokens;   // attention output, L x task_dim
  Node feature;       // 1 x (task_dim + d_c)
  std::vector<Node> attention;  // per head, L x L
};

Node record_projection(GradTape& tape, const InteractorNodes& p, Node knowledge, bool nonlinearity);
Node record_ckt_mha(GradTape& tape, const InteractorNodes& p, const InteractorDims& dims,
                    Node class_tokens, Node knowledge, std::vector<Node>* attention = nullptr);
Node record_composition(GradTape& tape, Node task_tokens, Node class_tokens);
QueryPathNodes record_query_path(GradTape& tape, const InteractorNodes& p,
                                 const QueryInteractorParams& params, Node knowledge);

// Direct evaluation entry points.

/// Class tokens: nonlinearity(knowledge W_c + b_c), L x d_c.
Matrix project_tokens(const QueryInteractorParams& params, const TokenEmbedding& knowledge);
/// Task tokens from class-token queries over knowledge keys, L x task_dim.
Matrix ckt_mha(const QueryInteractorParams& params, const Matrix& class_tokens,
               const Matrix& knowledge);
/// Per-head row-stochastic attention weights of ckt_mha.
std::vector<Matrix> attention_weights(const QueryInteractorParams& params,
                                      const Matrix& class_tokens, const Matrix& knowledge);
/// Concat[token-mean(task_tokens), token-mean(class_tokens)].
std::vector<double> compose_feature(const Matrix& task_tokens, const Matrix& class_tokens);
/// Full query path for one sample.
std::vector<double> query_feature(const QueryInteractorParams& params, const TokenEmbedding& knowledge);
/// Full query path for many samples, one tape.
std::vector<std::vector<double>> query_features(const QueryInteractorParams& params,
                                                std::span<const TokenEmbedding> samples);

}  // namespace icl
