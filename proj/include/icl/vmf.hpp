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

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icl/interactor.hpp"
#include "icl/memory_store.hpp"
#include "icl/sample.hpp"
#include "icl/tape.hpp"

namespace icl {

struct VmfConfig {
  double kappa = 1.0;   // concentration
  double delta = 0.2;   // margin threshold
  double lambda = 0.1;  // gradient-stabilization weight
  void validate() const;
};

struct PosteriorResult {
  std::vector<Label> candidate_classes;
  std::vector<double> probabilities;
  std::vector<double> similarities;  // cosine to each candidate
};

using Candidate = std::pair<Label, std::vector<double>>;

/// Softmax over kappa * cos(z, xi). The normalizing constant of the vMF
/// density cancels and is never evaluated.
PosteriorResult vmf_posterior(std::span<const double> xi, std::span<const Candidate> candidates,
                              double kappa);

/// max(|1 - cos(z, xi)| - delta, 0)
double margin_loss(std::span<const double> z, std::span<const double> xi, double delta);

/// Which classes compete in the training softmax.
enum class CandidateScope {
  Batch,       // classes present in the batch
  Registered,  // every registered class
};

struct LossNodes {
  Node total;
  Node vmf;
  Node gs;
};

/// Records the batch objective over already-recorded feature nodes (1 x D each)
/// and value nodes keyed by label. `candidates` fixes the softmax index set and
/// its order. With normalize=false the inputs are taken to be unit vectors
/// already, which exposes gradients w.r.t. the normalized variables.
LossNodes record_batch_loss(GradTape& tape, std::span<const Node> features,
                            std::span<const Label> labels, const std::map<Label, Node>& values,
                            std::span<const Label> candidates, const VmfConfig& cfg,
                            bool normalize = true);

/// Batch objective through the full query path. Parameter leaves are named
/// after QueryInteractorParams::named(); value-memory leaves use task_key and
/// class_key.
class BatchObjective {
 public:
  BatchObjective(std::span<const Sample> batch, const ValueMemoryStore& store,
                 const QueryInteractorParams& params, const VmfConfig& cfg,
                 CandidateScope scope = CandidateScope::Batch);

  /// Forward pass at the given state; returns the total loss.
  double evaluate(const ValueMemoryStore& store, const QueryInteractorParams& params);
  GradTape::Gradients gradients() { return tape_.backward(); }

  double total() const { return tape_.value(nodes_.total)(0, 0); }
  double vmf() const { return tape_.value(nodes_.vmf)(0, 0); }
  double gs() const { return tape_.value(nodes_.gs)(0, 0); }

  const std::vector<Label>& candidates() const noexcept { return candidates_; }
  const std::vector<TaskId>& tasks() const noexcept { return tasks_; }

  static std::string task_key(TaskId t) { return "z_tau." + std::to_string(t.index); }
  static std::string class_key(Label y) { return "z_c." + std::to_string(y); }

 private:
  GradTape tape_;
  LossNodes nodes_;
  std::vector<Label> candidates_;
  std::vector<TaskId> tasks_;
};

double vmf_batch_loss(std::span<const Sample> batch, const ValueMemoryStore& store,
                      const QueryInteractorParams& params, double kappa);
double gs_batch_loss(std::span<const Sample> batch, const ValueMemoryStore& store,
                     const QueryInteractorParams& params, double delta);
double total_loss(std::span<const Sample> batch, const ValueMemoryStore& store,
                  const QueryInteractorParams& params, const VmfConfig& cfg);

/// Closed-form gradients of the batch-mean vMF loss w.r.t. the normalized
/// value vectors and normalized features.
struct AnalyticGradients {
  std::map<Label, std::vector<double>> value_dirs;
  std::vector<std::vector<double>> feature_dirs;
};

AnalyticGradients analytic_grad_oracle(std::span<const std::vector<double>> features,
                                       std::span<const Label> labels,
                                       std::span<const Candidate> candidates, double kappa);
AnalyticGradients analytic_grad_oracle(std::span<const Sample> batch, const ValueMemoryStore& store,
                                       const QueryInteractorParams& params, double kappa);

/// Ascending unique labels of a batch.
std::vector<Label> batch_classes(std::span<const Sample> batch);

}  // namespace icl
