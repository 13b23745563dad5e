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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icl/interactor.hpp"
#include "icl/memory_store.hpp"
#include "icl/sample.hpp"
#include "icl/system2.hpp"

namespace icl {

enum class Source { System1, System2 };

std::string_view to_string(Source s);

struct PredictionRecord {
  std::uint64_t sample_id = 0;
  Label top1 = 0;
  std::vector<Label> topk;
  std::vector<double> topk_probabilities;
  double nu = 0.0;  // cosine between the feature and the predicted class's value vector
  bool hard = false;
  Label final_label = 0;
  Source source = Source::System1;
};

struct OdiConfig {
  double alpha = -0.842;
  std::size_t min_batch = 2;
  double sigma_floor = 1e-9;
};

/// Read-only view of System1 used at inference.
struct System1View {
  const QueryInteractorParams& params;
  const ValueMemoryStore& store;
  double kappa = 1.0;
};

/// Posterior retrieval over `candidates` (all registered classes when unset),
/// top-k by probability with ties to the lower label.
std::vector<PredictionRecord> predict_batch(const System1View& system1, std::span<const Sample> batch,
                                            std::size_t k,
                                            std::optional<std::span<const Label>> candidates = {});

/// Indices i with (nu_i - mean) / sd < alpha, sd using the n-1 denominator.
/// Nothing is flagged for batches below min_batch or with sd <= sigma_floor.
std::vector<std::size_t> odi_filter(std::span<const double> nu, const OdiConfig& cfg);
/// Sets the hard flag on the flagged records and returns their indices.
std::vector<std::size_t> odi_filter(std::vector<PredictionRecord>& records, const OdiConfig& cfg);

struct CollaborationStats {
  std::size_t hard = 0;
  std::size_t queries = 0;
  std::size_t failures = 0;
  std::size_t exact_answers = 0;
};

struct CollaborationOptions {
  std::size_t k = 2;
  OdiConfig odi;
  std::size_t parallelism = 1;
  /// Receives one line per backend failure; stderr when unset.
  std::function<void(const std::string&)> log;
};

/// Two-stage inference: System1 predictions, hard-sample detection, and a
/// System2 query for each hard sample restricted to its top-k candidates.
std::vector<PredictionRecord> collaborate_infer(const System1View& system1,
                                                std::span<const Sample> batch,
                                                System2Backend& client,
                                                const CollaborationOptions& options,
                                                std::optional<std::span<const Label>> candidates = {},
                                                CollaborationStats* stats = nullptr);

/// sample_id,top1,topk,nu,hard,final,source with pipe-separated topk.
void write_predictions_csv(const std::filesystem::path& path,
                           std::span<const PredictionRecord> records);
std::string predictions_csv(std::span<const PredictionRecord> records);

}  // namespace icl
