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

#include "icl/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "icl/errors.hpp"
#include "icl/vmf.hpp"

namespace icl {

std::string_view to_string(Source s) { return s == Source::System1 ? "SYSTEM1" : "SYSTEM2"; }

std::vector<PredictionRecord> predict_batch(const System1View& system1, std::span<const Sample> batch,
                                            std::size_t k, std::optional<std::span<const Label>> candidates) {
  if (system1.store.num_classes() == 0) throw Error(ErrorKind::EmptyStore, "no classes registered");
  if (k == 0) throw Error(ErrorKind::ConfigError, "top-k must be >= 1");
  std::vector<Label> labels =
      candidates ? std::vector<Label>(candidates->begin(), candidates->end()) : system1.store.labels();
  if (labels.empty()) throw Error(ErrorKind::EmptyCandidates, "empty candidate set");
  std::vector<Candidate> values;
  values.reserve(labels.size());
  for (Label y : labels) values.emplace_back(y, system1.store.value_vector(y));

  std::vector<TokenEmbedding> tokens;
  tokens.reserve(batch.size());
  for (const auto& s : batch) tokens.push_back(s.tokens);
  const auto features = query_features(system1.params, tokens);

  std::vector<PredictionRecord> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto post = vmf_posterior(features[i], values, system1.kappa);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (post.probabilities[a] != post.probabilities[b]) {
        return post.probabilities[a] > post.probabilities[b];
      }
      return labels[a] < labels[b];
    });
    PredictionRecord r;
    r.sample_id = batch[i].id;
    const std::size_t kk = std::min(k, labels.size());
    for (std::size_t j = 0; j < kk; ++j) {
      r.topk.push_back(labels[order[j]]);
      r.topk_probabilities.push_back(post.probabilities[order[j]]);
    }
    r.top1 = r.topk.front();
    r.nu = post.similarities[order.front()];
    r.final_label = r.top1;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::size_t> odi_filter(std::span<const double> nu, const OdiConfig& cfg) {
  std::vector<std::size_t> flagged;
  const std::size_t n = nu.size();
  if (n < std::max<std::size_t>(cfg.min_batch, 2)) return flagged;
  const double mean = std::accumulate(nu.begin(), nu.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : nu) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > cfg.sigma_floor)) return flagged;
  for (std::size_t i = 0; i < n; ++i) {
    if ((nu[i] - mean) / sd < cfg.alpha) flagged.push_back(i);
  }
  return flagged;
}

std::vector<std::size_t> odi_filter(std::vector<PredictionRecord>& records, const OdiConfig& cfg) {
  std::vector<double> nu;
  nu.reserve(records.size());
  for (const auto& r : records) nu.push_back(r.nu);
  auto flagged = odi_filter(nu, cfg);
  for (std::size_t i : flagged) records[i].hard = true;
  return flagged;
}

std::vector<PredictionRecord> collaborate_infer(const System1View& system1,
                                                std::span<const Sample> batch,
                                                System2Backend& client,
                                                const CollaborationOptions& options,
                                                std::optional<std::span<const Label>> candidates,
                                                CollaborationStats* stats) {
  auto records = predict_batch(system1, batch, options.k, candidates);
  const auto hard = odi_filter(records, options.odi);
  CollaborationStats local;
  local.hard = hard.size();
  if (hard.empty()) {
    if (stats) *stats = local;
    return records;
  }

  struct Outcome {
    std::optional<Label> answer;
    std::optional<std::string> failure;
  };
  std::vector<Outcome> outcomes(hard.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t h = next++; h < hard.size(); h = next++) {
      const std::size_t i = hard[h];
      const auto& rec = records[i];
      PromptRequest req;
      req.sample_id = rec.sample_id;
      if (!batch[i].image_ref.empty()) req.image_ref = batch[i].image_ref;
      for (Label y : rec.topk) req.candidate_names.push_back(system1.store.name_of(y));
      try {
        const auto response = client.query(req);
        if (auto name = parse_answer(response, req.candidate_names)) {
          const auto pos = std::find(req.candidate_names.begin(), req.candidate_names.end(), *name);
          outcomes[h].answer = rec.topk[static_cast<std::size_t>(pos - req.candidate_names.begin())];
        }
      } catch (const Error& e) {
        outcomes[h].failure = "system2: sample " + std::to_string(rec.sample_id) + ": " + e.what();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.parallelism, 1, hard.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t h = 0; h < hard.size(); ++h) {
    PredictionRecord& rec = records[hard[h]];
    ++local.queries;
    if (outcomes[h].failure) {
      ++local.failures;
      if (options.log) {
        options.log(*outcomes[h].failure);
      } else {
        std::cerr << *outcomes[h].failure << '\n';
      }
      continue;
    }
    if (outcomes[h].answer) {
      ++local.exact_answers;
      rec.final_label = *outcomes[h].answer;
      rec.source = Source::System2;
    }
  }
  if (stats) *stats = local;
  return records;
}

std::string predictions_csv(std::span<const PredictionRecord> records) {
  std::ostringstream os;
  os << "sample_id,top1,topk,nu,hard,final,source\n";
  char nu[32];
  for (const auto& r : records) {
    std::snprintf(nu, sizeof nu, "%.9g", r.nu);
    os << r.sample_id << ',' << r.top1 << ',';
    for (std::size_t j = 0; j < r.topk.size(); ++j) os << (j ? "|" : "") << r.topk[j];
    os << ',' << nu << ',' << (r.hard ? 1 : 0) << ',' << r.final_label << ',' << to_string(r.source)
       << '\n';
  }
  return os.str();
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << predictions_csv(records);
}

}  // namespace icl
