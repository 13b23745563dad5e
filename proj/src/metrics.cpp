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

#include "icl/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "icl/errors.hpp"

namespace icl {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void AccuracyMatrix::set(std::size_t T, std::size_t t, double accuracy) {
  if (t > T || T >= tasks_) {
    throw Error(ErrorKind::IncompleteRow, "entry (" + std::to_string(T) + "," + std::to_string(t) +
                                              ") outside a " + std::to_string(tasks_) +
                                              "-task lower triangle");
  }
  cells_[{T, t}] = accuracy;
}

std::optional<double> AccuracyMatrix::get(std::size_t T, std::size_t t) const {
  auto it = cells_.find({T, t});
  if (it == cells_.end()) return std::nullopt;
  return it->second;
}

bool AccuracyMatrix::row_complete(std::size_t T) const {
  if (T >= tasks_) return false;
  for (std::size_t t = 0; t <= T; ++t) {
    if (!cells_.contains({T, t})) return false;
  }
  return true;
}

std::vector<double> AccuracyMatrix::row(std::size_t T) const {
  if (!row_complete(T)) throw Error(ErrorKind::IncompleteRow, "row " + std::to_string(T) + " is incomplete");
  std::vector<double> r;
  for (std::size_t t = 0; t <= T; ++t) r.push_back(cells_.at({T, t}));
  return r;
}

std::vector<std::pair<std::size_t, double>> AccuracyMatrix::curve(std::size_t t) const {
  std::vector<std::pair<std::size_t, double>> c;
  for (const auto& [key, v] : cells_) {
    if (key.second == t) c.emplace_back(key.first, v);
  }
  return c;
}

std::string AccuracyMatrix::to_csv() const {
  std::ostringstream os;
  os << "after_task,task,accuracy\n";
  for (const auto& [key, v] : cells_) os << key.first << ',' << key.second << ',' << fmt(v) << '\n';
  return os.str();
}

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::tuple<std::size_t, std::size_t, double>> rows;
  std::size_t lineno = 0;
  std::size_t tasks = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.rfind("after_task", 0) == 0) continue;
    std::size_t T = 0, t = 0;
    double a = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> T >> c1 >> t >> c2 >> a) || c1 != ',' || c2 != ',') {
      throw Error(ErrorKind::FormatError, origin + ":" + std::to_string(lineno) + ": bad row");
    }
    rows.emplace_back(T, t, a);
    tasks = std::max(tasks, T + 1);
  }
  AccuracyMatrix m(tasks);
  for (const auto& [T, t, a] : rows) m.set(T, t, a);
  return m;
}

double incremental_accuracy(const AccuracyMatrix& m, std::size_t T) {
  const auto r = m.row(T);
  double s = 0.0;
  for (double v : r) s += v;
  return s / static_cast<double>(r.size());
}

std::string forgetting_curves_csv(const AccuracyMatrix& m) {
  std::ostringstream os;
  os << "task,after_task,accuracy\n";
  for (std::size_t t = 0; t < m.tasks(); ++t) {
    for (const auto& [T, v] : m.curve(t)) os << t << ',' << T << ',' << fmt(v) << '\n';
  }
  return os.str();
}

double accuracy(const std::vector<std::uint32_t>& predicted, const std::vector<std::uint32_t>& truth) {
  if (predicted.size() != truth.size()) throw Error(ErrorKind::ShapeMismatch, "prediction count differs from truth");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace icl
