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

#include "icl/shard.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "icl/binary_io.hpp"
#include "icl/errors.hpp"

namespace icl {

namespace {

constexpr std::array<const char*, 10> kCifarNames = {"airplane", "automobile", "bird", "cat",
                                                     "deer",     "dog",        "frog", "horse",
                                                     "ship",     "truck"};

std::vector<double> unit_gaussian(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    std::vector<double> v(dim);
    for (double& x : v) x = n(rng);
    if (norm(v) > 1e-6) return l2_normalize(v);
  }
}

double beta_draw(double a, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(a, 1.0);
  const double x = g(rng);
  const double y = g(rng);
  return x / (x + y);
}

}  // namespace

std::string default_class_name(Label y) {
  return y < kCifarNames.size() ? kCifarNames[y] : "class_" + std::to_string(y);
}

bool operator==(const EmbeddingShard& a, const EmbeddingShard& b) {
  if (a.task_id != b.task_id || a.tokens != b.tokens || a.model_dim != b.model_dim ||
      a.samples.size() != b.samples.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto& x = a.samples[i];
    const auto& y = b.samples[i];
    if (x.tokens != y.tokens || x.label != y.label || x.image_ref != y.image_ref) return false;
  }
  return true;
}

std::vector<std::uint8_t> serialize_shard(const EmbeddingShard& shard) {
  io::ByteWriter w;
  w.bytes(EmbeddingShard::kMagic);
  w.u32(EmbeddingShard::kVersion);
  w.u32(static_cast<std::uint32_t>(shard.samples.size()));
  w.u32(shard.tokens);
  w.u32(shard.model_dim);
  w.u32(shard.task_id);
  for (const auto& s : shard.samples) {
    if (s.tokens.rows != shard.tokens || s.tokens.cols != shard.model_dim) {
      throw Error(ErrorKind::ShapeMismatch, "sample " + std::to_string(s.id) + " has tokens " +
                                                s.tokens.shape_string() + ", shard declares " +
                                                std::to_string(shard.tokens) + "x" +
                                                std::to_string(shard.model_dim));
    }
    if (!s.tokens.all_finite()) {
      throw Error(ErrorKind::NonFiniteValue, "sample " + std::to_string(s.id) + " has non-finite tokens");
    }
    w.f32s(s.tokens.data);
    w.u32(s.label);
    w.str(s.image_ref);
  }
  return w.buffer();
}

EmbeddingShard deserialize_shard(std::vector<std::uint8_t> bytes, const std::string& origin,
                                 std::uint64_t first_id) {
  io::ByteReader r(std::move(bytes), origin);
  if (r.bytes(4) != EmbeddingShard::kMagic) r.fail("bad magic, not an embedding shard");
  if (const auto v = r.u32(); v != EmbeddingShard::kVersion) {
    r.fail("unsupported version " + std::to_string(v));
  }
  EmbeddingShard shard;
  const std::uint32_t n = r.u32();
  shard.tokens = r.u32();
  shard.model_dim = r.u32();
  shard.task_id = r.u32();
  if (shard.tokens == 0 || shard.model_dim == 0) r.fail("zero token shape");
  const std::size_t per = static_cast<std::size_t>(shard.tokens) * shard.model_dim;
  // Each record holds at least its tokens, label and string length.
  if (static_cast<std::uint64_t>(n) * (per * 4 + 8) > r.remaining()) {
    r.fail("header declares " + std::to_string(n) + " samples but the payload is shorter");
  }
  shard.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.id = first_id + i;
    s.tokens = Matrix(shard.tokens, shard.model_dim, r.f32s(per));
    if (!s.tokens.all_finite()) r.fail("sample " + std::to_string(i) + " has non-finite tokens");
    s.label = r.u32();
    s.task = TaskId{shard.task_id};
    s.image_ref = r.str();
    shard.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) {
    r.fail(std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(n) + " samples");
  }
  return shard;
}

void write_shard(const EmbeddingShard& shard, const std::filesystem::path& path) {
  io::write_file(path, serialize_shard(shard));
}

EmbeddingShard load_shard(const std::filesystem::path& path, std::uint64_t first_id) {
  return deserialize_shard(io::read_file(path), path.string(), first_id);
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["train"] = nlohmann::json::array();
  j["test"] = nlohmann::json::array();
  for (const auto& p : manifest.train) j["train"].push_back(p.generic_string());
  for (const auto& p : manifest.test) j["test"].push_back(p.generic_string());
  j["labels"] = nlohmann::json::object();
  for (const auto& [y, name] : manifest.labels) j["labels"][std::to_string(y)] = name;
  j["backbone"] = manifest.backbone;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open manifest " + path.string());
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& p : j.at("train")) m.train.emplace_back(p.get<std::string>());
    const auto test = j.value("test", nlohmann::json::array());
    for (const auto& p : test) m.test.emplace_back(p.get<std::string>());
    const auto labels = j.value("labels", nlohmann::json::object());
    for (const auto& [k, v] : labels.items()) {
      m.labels[static_cast<Label>(std::stoul(k))] = v.get<std::string>();
    }
    m.backbone = j.value("backbone", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::FormatError, path.string() + ": bad label key");
  }
  return m;
}

std::vector<EmbeddingShard> load_shards(const std::filesystem::path& dir,
                                        const std::vector<std::filesystem::path>& files) {
  std::vector<EmbeddingShard> shards;
  std::uint64_t next_id = 0;
  for (const auto& f : files) {
    shards.push_back(load_shard(f.is_absolute() ? f : dir / f, next_id));
    next_id += shards.back().samples.size();
  }
  return shards;
}

std::vector<double> sample_vmf(std::span<const double> mean, double kappa, std::mt19937_64& rng) {
  const std::size_t dim = mean.size();
  if (dim < 2) throw Error(ErrorKind::ShapeMismatch, "vMF sampling needs dimension >= 2");
  const auto mu = l2_normalize(mean);
  const double m1 = static_cast<double>(dim - 1);
  const double b = m1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + m1 * std::log(1.0 - x0 * x0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double w = 0.0;
  for (;;) {
    const double z = beta_draw(m1 / 2.0, rng);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = unif(rng);
    if (kappa * w + m1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  // Uniform direction in the tangent space at mu.
  std::vector<double> v;
  for (;;) {
    v = unit_gaussian(dim, rng);
    const double proj = dot(v, mu);
    for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * mu[i];
    if (norm(v) > 1e-6) break;
  }
  v = l2_normalize(v);
  const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < dim; ++i) x[i] = w * mu[i] + s * v[i];
  return x;
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.tasks == 0 || spec.classes == 0 || spec.classes % spec.tasks != 0) {
    throw Error(ErrorKind::InvalidPartition, std::to_string(spec.classes) + " classes cannot be split into " +
                                                 std::to_string(spec.tasks) + " equal tasks");
  }
  if (spec.tokens == 0 || spec.model_dim < 2) {
    throw Error(ErrorKind::ConfigError, "synthetic token shape must be at least 1 x 2");
  }
  if (!(spec.kappa_data > 0.0)) throw Error(ErrorKind::ConfigError, "kappa_data must be > 0");

  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<double>> means;
  for (std::size_t y = 0; y < spec.classes; ++y) means.push_back(unit_gaussian(spec.model_dim, rng));

  SyntheticData data;
  const std::size_t per_task = spec.classes / spec.tasks;
  std::uint64_t train_id = 0;
  std::uint64_t test_id = 0;
  auto draw = [&](Label y, std::uint32_t t, std::uint64_t id) {
    Sample s;
    s.id = id;
    s.label = y;
    s.task = TaskId{t};
    s.tokens = Matrix(spec.tokens, spec.model_dim);
    for (std::size_t l = 0; l < spec.tokens; ++l) {
      const auto tok = sample_vmf(means[y], spec.kappa_data, rng);
      std::copy(tok.begin(), tok.end(), s.tokens.row(l).begin());
    }
    round_to_float(s.tokens.data);
    return s;
  };
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    EmbeddingShard train{static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(spec.tokens),
                         static_cast<std::uint32_t>(spec.model_dim), {}};
    EmbeddingShard test = train;
    for (std::size_t k = 0; k < per_task; ++k) {
      const auto y = static_cast<Label>(t * per_task + k);
      data.names[y] = default_class_name(y);
      for (std::size_t i = 0; i < spec.n_per_class; ++i) {
        train.samples.push_back(draw(y, train.task_id, train_id++));
      }
      for (std::size_t i = 0; i < spec.n_test_per_class; ++i) {
        test.samples.push_back(draw(y, test.task_id, test_id++));
      }
    }
    data.train.push_back(std::move(train));
    data.test.push_back(std::move(test));
  }
  return data;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.labels = data.names;
  m.backbone = "synthetic-vmf";
  for (const auto& s : data.train) {
    const std::filesystem::path name = "train_" + std::to_string(s.task_id) + ".icle";
    write_shard(s, dir / name);
    m.train.push_back(name);
  }
  for (const auto& s : data.test) {
    const std::filesystem::path name = "test_" + std::to_string(s.task_id) + ".icle";
    write_shard(s, dir / name);
    m.test.push_back(name);
  }
  write_manifest(m, dir / "manifest.json");
  std::ofstream truth(dir / "truth.csv");
  if (!truth) throw Error(ErrorKind::IoError, "cannot write " + (dir / "truth.csv").string());
  truth << "sample_id,label\n";
  for (const auto& s : data.test) {
    for (const auto& x : s.samples) truth << x.id << ',' << x.label << '\n';
  }
}

}  // namespace icl
