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
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "icl/sample.hpp"

namespace icl {

/// One task's worth of backbone embeddings as exchanged on disk.
///
/// Layout (little-endian): "ICLE", u32 version, u32 n_samples, u32 L,
/// u32 d_c, u32 task_id, then per sample L*d_c f32 tokens (row-major),
/// u32 label, u32 image_ref length and its bytes (length 0 when absent).
struct EmbeddingShard {
  static constexpr std::string_view kMagic = "ICLE";
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t task_id = 0;
  std::uint32_t tokens = 0;     // L
  std::uint32_t model_dim = 0;  // d_c
  std::vector<Sample> samples;

  friend bool operator==(const EmbeddingShard& a, const EmbeddingShard& b);
};

std::vector<std::uint8_t> serialize_shard(const EmbeddingShard& shard);
/// Strict: bad magic or version, truncation, trailing bytes, non-finite
/// values and shape disagreement all raise FormatError. Sample ids are
/// numbered from `first_id`.
EmbeddingShard deserialize_shard(std::vector<std::uint8_t> bytes, const std::string& origin,
                                 std::uint64_t first_id = 0);

void write_shard(const EmbeddingShard& shard, const std::filesystem::path& path);
EmbeddingShard load_shard(const std::filesystem::path& path, std::uint64_t first_id = 0);

/// manifest.json next to the shards: {"train": [...], "test": [...],
/// "labels": {"<label>": "<name>"}, "backbone": "<id>"} with paths relative
/// to the manifest's directory.
struct Manifest {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> test;
  std::map<Label, std::string> labels;
  std::string backbone;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Shards in manifest order. Sample ids run consecutively across the list.
std::vector<EmbeddingShard> load_shards(const std::filesystem::path& dir,
                                        const std::vector<std::filesystem::path>& files);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t tasks = 5;
  std::size_t n_per_class = 100;
  std::size_t n_test_per_class = 50;
  std::size_t tokens = 4;
  std::size_t model_dim = 16;
  double kappa_data = 30.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  std::vector<EmbeddingShard> train;
  std::vector<EmbeddingShard> test;
  std::map<Label, std::string> names;
};

/// Classes 0..C-1 split into T consecutive blocks. Each class gets a uniform
/// unit mean direction; every token is an independent vMF draw around it.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

/// Writes train_<t>.icle, test_<t>.icle, manifest.json and truth.csv
/// (sample_id,label of the test split).
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

/// Draws one unit vector from vMF(mean, kappa) with Wood's rejection scheme.
std::vector<double> sample_vmf(std::span<const double> mean, double kappa, std::mt19937_64& rng);

std::string default_class_name(Label y);

}  // namespace icl
