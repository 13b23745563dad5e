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

#include "icl/vmf.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "icl/errors.hpp"

namespace icl {

void VmfConfig::validate() const {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) {
    throw Error(ErrorKind::ConfigError, "vmf.kappa must be > 0");
  }
  if (!(delta >= 0.0 && delta <= 1.0)) throw Error(ErrorKind::ConfigError, "vmf.delta must be in [0,1]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::ConfigError, "vmf.lambda must be >= 0");
  }
}

PosteriorResult vmf_posterior(std::span<const double> xi, std::span<const Candidate> candidates,
                              double kappa) {
  if (candidates.empty()) throw Error(ErrorKind::EmptyCandidates, "posterior over no classes");
  const auto unit_xi = l2_normalize(xi);
  PosteriorResult r;
  r.candidate_classes.reserve(candidates.size());
  r.similarities.reserve(candidates.size());
  for (const auto& [label, z] : candidates) {
    if (z.size() != xi.size()) {
      throw Error(ErrorKind::ShapeMismatch, "value vector of class " + std::to_string(label) +
                                                " has dim " + std::to_string(z.size()) +
                                                ", feature has " + std::to_string(xi.size()));
    }
    r.candidate_classes.push_back(label);
    r.similarities.push_back(dot(l2_normalize(z), unit_xi));
  }
  const double mx = *std::max_element(r.similarities.begin(), r.similarities.end());
  double total = 0.0;
  r.probabilities.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.probabilities[i] = std::exp(kappa * (r.similarities[i] - mx));
    total += r.probabilities[i];
  }
  for (double& p : r.probabilities) p /= total;
  return r;
}

double margin_loss(std::span<const double> z, std::span<const double> xi, double delta) {
  return std::max(std::fabs(1.0 - cosine(z, xi)) - delta, 0.0);
}

std::vector<Label> batch_classes(std::span<const Sample> batch) {
  std::set<Label> unique;
  for (const auto& s : batch) unique.insert(s.label);
  return {unique.begin(), unique.end()};
}

LossNodes record_batch_loss(GradTape& tape, std::span<const Node> features,
                            std::span<const Label> labels, const std::map<Label, Node>& values,
                            std::span<const Label> candidates, const VmfConfig& cfg, bool normalize) {
  if (features.empty()) throw Error(ErrorKind::EmptyBatch, "batch has no samples");
  if (features.size() != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "feature and label counts differ");
  }
  if (candidates.empty()) throw Error(ErrorKind::EmptyCandidates, "no candidate classes");

  std::vector<Node> dirs;
  dirs.reserve(candidates.size());
  for (Label y : candidates) {
    auto it = values.find(y);
    if (it == values.end()) {
      throw Error(ErrorKind::UnknownClass, "class " + std::to_string(y) + " has no value node");
    }
    dirs.push_back(normalize ? tape.normalize_rows(it->second) : it->second);
  }
  Node prototypes = tape.concat_rows(dirs);

  const std::size_t k = candidates.size();
  std::vector<Node> nll;
  std::vector<Node> gs;
  nll.reserve(features.size());
  gs.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto pos = std::find(candidates.begin(), candidates.end(), labels[i]);
    if (pos == candidates.end()) {
      throw Error(ErrorKind::UnknownClass,
                  "label " + std::to_string(labels[i]) + " is not among the candidates");
    }
    Matrix onehot(1, k);
    onehot(0, static_cast<std::size_t>(pos - candidates.begin())) = 1.0;
    Matrix others(1, k, 1.0);
    others.data[static_cast<std::size_t>(pos - candidates.begin())] = 0.0;
    Node pick = tape.constant(onehot);

    Node dir = normalize ? tape.normalize_rows(features[i]) : features[i];
    Node cos = tape.matmul_nt(dir, prototypes);  // 1 x K
    Node logp = tape.row_log_softmax(tape.scale(cos, cfg.kappa));
    nll.push_back(tape.scale(tape.dot(logp, pick), -1.0));

    // |1 - cos| for the true class, |1 + cos| = |1 - cos(-z, xi)| for the others.
    Node pos_hinge =
        tape.relu(tape.add_scalar(tape.abs(tape.add_scalar(tape.scale(cos, -1.0), 1.0)), -cfg.delta));
    Node neg_hinge = tape.relu(tape.add_scalar(tape.abs(tape.add_scalar(cos, 1.0)), -cfg.delta));
    gs.push_back(tape.add(tape.dot(pos_hinge, pick), tape.dot(neg_hinge, tape.constant(others))));
  }
  const double inv_b = 1.0 / static_cast<double>(features.size());
  LossNodes out;
  out.vmf = tape.scale(tape.sum(tape.concat_cols(nll)), inv_b);
  out.gs = tape.scale(tape.sum(tape.concat_cols(gs)), inv_b);
  out.total = tape.add(out.vmf, tape.scale(out.gs, cfg.lambda));
  tape.set_output(out.total);
  return out;
}

BatchObjective::BatchObjective(std::span<const Sample> batch, const ValueMemoryStore& store,
                               const QueryInteractorParams& params, const VmfConfig& cfg,
                               CandidateScope scope) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "batch has no samples");
  cfg.validate();
  for (const auto& s : batch) {
    if (!store.contains(s.label)) {
      throw Error(ErrorKind::UnknownClass, "class " + std::to_string(s.label) + " is not registered");
    }
  }
  candidates_ = scope == CandidateScope::Batch ? batch_classes(batch) : store.labels();

  std::map<std::uint32_t, Node> task_nodes;
  std::map<Label, Node> values;
  for (Label y : candidates_) {
    const TaskId t = store.task_of(y);
    auto it = task_nodes.find(t.index);
    if (it == task_nodes.end()) {
      it = task_nodes.emplace(t.index, tape_.input(task_key(t))).first;
      tasks_.push_back(t);
    }
    values.emplace(y, tape_.concat_cols({it->second, tape_.input(class_key(y))}));
  }

  auto p = bind_interactor(tape_, params);
  std::vector<Node> features;
  std::vector<Label> labels;
  features.reserve(batch.size());
  for (const auto& s : batch) {
    features.push_back(record_query_path(tape_, p, params, tape_.constant(s.tokens)).feature);
    labels.push_back(s.label);
  }
  nodes_ = record_batch_loss(tape_, features, labels, values, candidates_, cfg);
}

double BatchObjective::evaluate(const ValueMemoryStore& store, const QueryInteractorParams& params) {
  GradTape::Bindings b;
  add_bindings(b, params);
  for (TaskId t : tasks_) b[task_key(t)] = Matrix::row_vector(store.task_vector(t));
  for (Label y : candidates_) b[class_key(y)] = Matrix::row_vector(store.class_vector(y));
  return tape_.forward(b)(0, 0);
}

double vmf_batch_loss(std::span<const Sample> batch, const ValueMemoryStore& store,
                      const QueryInteractorParams& params, double kappa) {
  VmfConfig cfg{kappa, 0.0, 0.0};
  BatchObjective obj(batch, store, params, cfg);
  obj.evaluate(store, params);
  return obj.vmf();
}

double gs_batch_loss(std::span<const Sample> batch, const ValueMemoryStore& store,
                     const QueryInteractorParams& params, double delta) {
  VmfConfig cfg{1.0, delta, 1.0};
  BatchObjective obj(batch, store, params, cfg);
  obj.evaluate(store, params);
  return obj.gs();
}

double total_loss(std::span<const Sample> batch, const ValueMemoryStore& store,
                  const QueryInteractorParams& params, const VmfConfig& cfg) {
  BatchObjective obj(batch, store, params, cfg);
  return obj.evaluate(store, params);
}

AnalyticGradients analytic_grad_oracle(std::span<const std::vector<double>> features,
                                       std::span<const Label> labels,
                                       std::span<const Candidate> candidates, double kappa) {
  if (features.empty()) throw Error(ErrorKind::EmptyBatch, "batch has no samples");
  if (features.size() != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "feature and label counts differ");
  }
  if (candidates.empty()) throw Error(ErrorKind::EmptyCandidates, "no candidate classes");
  const double inv_b = 1.0 / static_cast<double>(features.size());
  const std::size_t dim = features.front().size();

  std::vector<std::vector<double>> unit_z;
  AnalyticGradients g;
  for (const auto& [y, z] : candidates) {
    unit_z.push_back(l2_normalize(z));
    g.value_dirs[y] = std::vector<double>(dim, 0.0);
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto unit_xi = l2_normalize(features[i]);
    const auto post = vmf_posterior(features[i], candidates, kappa);
    std::size_t true_idx = candidates.size();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (candidates[c].first == labels[i]) true_idx = c;
    }
    if (true_idx == candidates.size()) {
      throw Error(ErrorKind::UnknownClass, "label " + std::to_string(labels[i]) + " not a candidate");
    }
    std::vector<double> gxi(dim, 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double p = post.probabilities[c];
      // d/dPi(z_y): (p - 1) k Pi(xi) for the true class, p k Pi(xi) otherwise.
      const double coef = (c == true_idx ? p - 1.0 : p) * kappa * inv_b;
      auto& gz = g.value_dirs[candidates[c].first];
      for (std::size_t d = 0; d < dim; ++d) {
        gz[d] += coef * unit_xi[d];
        gxi[d] += p * unit_z[c][d];
      }
    }
    for (std::size_t d = 0; d < dim; ++d) gxi[d] = kappa * inv_b * (gxi[d] - unit_z[true_idx][d]);
    g.feature_dirs.push_back(std::move(gxi));
  }
  return g;
}

AnalyticGradients analytic_grad_oracle(std::span<const Sample> batch, const ValueMemoryStore& store,
                                       const QueryInteractorParams& params, double kappa) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "batch has no samples");
  std::vector<TokenEmbedding> tokens;
  std::vector<Label> labels;
  for (const auto& s : batch) {
    if (!store.contains(s.label)) {
      throw Error(ErrorKind::UnknownClass, "class " + std::to_string(s.label) + " is not registered");
    }
    tokens.push_back(s.tokens);
    labels.push_back(s.label);
  }
  std::vector<Candidate> candidates;
  for (Label y : batch_classes(batch)) candidates.emplace_back(y, store.value_vector(y));
  return analytic_grad_oracle(query_features(params, tokens), labels, candidates, kappa);
}

}  // namespace icl
