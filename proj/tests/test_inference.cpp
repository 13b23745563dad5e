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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "icl/errors.hpp"
#include "icl/inference.hpp"
#include "icl/system2.hpp"
#include "icl/vmf.hpp"
#include "support.hpp"
#include "toy_system1.hpp"

using namespace icl;
using icl::testing::ToySystem1;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::ConfigError;
}

class FailingBackend final : public System2Backend {
 public:
  std::string query(const PromptRequest&) override {
    throw ClientFailure(ClientFailureReason::Timeout, "deadline exceeded");
  }
  std::string_view kind() const override { return "failing"; }
};

// Four samples near class 0 and one ambiguous sample between classes 1 and 2.
struct HardBatch {
  ToySystem1 toy{3};
  std::vector<Sample> batch;
  HardBatch() {
    toy.add(0, "cat", {1, 0, 0});
    toy.add(1, "dog", {0, 1, 0});
    toy.add(2, "sea lion", {0, 0, 1});
    for (std::uint64_t i = 0; i < 4; ++i) batch.push_back(ToySystem1::sample(i, {1, 0.01 * i, 0}, 0));
    batch.push_back(ToySystem1::sample(4, {0, 1, 0.9}, 2));
  }
};

}  // namespace

TEST_CASE("a single registered class is always predicted") {
  ToySystem1 toy(2);
  toy.add(7, "only", {0.3, 0.4});
  const auto r = predict_batch(toy.view(), std::vector{ToySystem1::sample(0, {-1, 0.2}, 7)}, 3);
  REQUIRE(r.size() == 1);
  CHECK(r[0].top1 == 7);
  CHECK(r[0].topk == std::vector<Label>{7});
  CHECK(r[0].topk_probabilities[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r[0].final_label == 7);
  CHECK(r[0].source == Source::System1);
}

TEST_CASE("aligned feature has similarity one") {
  ToySystem1 toy(2);
  toy.add(0, "a", {1, 0});
  toy.add(1, "b", {0, 1});
  const auto r = predict_batch(toy.view(), std::vector{ToySystem1::sample(0, {0, 2}, 1)}, 2);
  CHECK(r[0].top1 == 1);
  CHECK(r[0].nu == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r[0].topk == std::vector<Label>{1, 0});
}

TEST_CASE("top-k agrees with a brute-force sort of the posterior") {
  std::mt19937_64 rng(4);
  for (int inst = 0; inst < 50; ++inst) {
    ToySystem1 toy(4);
    const std::size_t classes = 2 + inst % 5;
    std::vector<Candidate> cands;
    for (Label y = 0; y < classes; ++y) {
      auto proto = icl::testing::random_vector(4, rng);
      toy.add(y, "c" + std::to_string(y), proto);
      cands.emplace_back(y, toy.store.value_vector(y));
    }
    const auto token = icl::testing::random_vector(4, rng);
    const std::size_t k = 1 + inst % 3;
    const auto r = predict_batch(toy.view(2.0), std::vector{ToySystem1::sample(0, token, 0)}, k)[0];
    std::vector<double> feature{0, 0};
    feature.insert(feature.end(), token.begin(), token.end());
    const auto post = vmf_posterior(feature, cands, 2.0);
    std::vector<Label> order(classes);
    for (Label y = 0; y < classes; ++y) order[y] = y;
    std::stable_sort(order.begin(), order.end(),
                     [&](Label a, Label b) { return post.probabilities[a] > post.probabilities[b]; });
    order.resize(std::min(k, classes));
    CHECK(r.topk == order);
    CHECK(r.top1 == order[0]);
    CHECK(r.nu == doctest::Approx(post.similarities[order[0]]).epsilon(1e-12));
  }
}

TEST_CASE("ties go to the lower label") {
  ToySystem1 toy(2);
  toy.add(5, "a", {1, 0});
  toy.add(3, "b", {1, 0});
  const auto r = predict_batch(toy.view(), std::vector{ToySystem1::sample(0, {1, 1}, 3)}, 2);
  CHECK(r[0].topk == std::vector<Label>{3, 5});
}

TEST_CASE("prediction errors") {
  ToySystem1 empty(2);
  const std::vector s{ToySystem1::sample(0, {1, 0}, 0)};
  CHECK(kind_of([&] { predict_batch(empty.view(), s, 1); }) == ErrorKind::EmptyStore);
  ToySystem1 toy(2);
  toy.add(0, "a", {1, 0});
  CHECK(kind_of([&] { predict_batch(toy.view(), s, 0); }) == ErrorKind::ConfigError);
  const std::vector<Label> none;
  CHECK(kind_of([&] { predict_batch(toy.view(), s, 1, std::span<const Label>(none)); }) ==
        ErrorKind::EmptyCandidates);
}

TEST_CASE("candidate restriction") {
  ToySystem1 toy(2);
  toy.add(0, "a", {1, 0});
  toy.add(1, "b", {0, 1});
  const std::vector<Label> only{1};
  const auto r = predict_batch(toy.view(), std::vector{ToySystem1::sample(0, {1, 0.1}, 0)}, 2,
                               std::span<const Label>(only));
  CHECK(r[0].top1 == 1);
  CHECK(r[0].topk.size() == 1);
}

TEST_CASE("ODI flags the low outlier") {
  const std::vector<double> nu{0.9, 0.9, 0.9, 0.1};
  CHECK(odi_filter(nu, {}) == std::vector<std::size_t>{3});
  CHECK(odi_filter(std::vector<double>{0.5, 0.5, 0.5, 0.5}, {}).empty());
  CHECK(odi_filter(std::vector<double>{0.1}, {}).empty());
  CHECK(odi_filter(std::vector<double>{}, {}).empty());
}

TEST_CASE("ODI is invariant to positive affine maps of nu") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> nu(20), m(20);
    for (double& v : nu) v = n(rng);
    const double a = 0.1 + (i % 7), b = -3.0 + i % 5;
    for (std::size_t j = 0; j < nu.size(); ++j) m[j] = a * nu[j] + b;
    CHECK(odi_filter(nu, {}) == odi_filter(m, {}));
  }
}

TEST_CASE("ODI flags about a fifth of a normal stream") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  std::size_t flagged = 0;
  const std::size_t batches = 500;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<double> nu(100);
    for (double& v : nu) v = n(rng);
    flagged += odi_filter(nu, {}).size();
  }
  CHECK(std::abs(static_cast<double>(flagged) / (100.0 * batches) - 0.20) < 0.03);
}

TEST_CASE("record flags follow the filter") {
  HardBatch h;
  auto r = predict_batch(h.toy.view(), h.batch, 2);
  CHECK(odi_filter(r, {}) == std::vector<std::size_t>{4});
  for (std::size_t i = 0; i < 4; ++i) CHECK_FALSE(r[i].hard);
  CHECK(r[4].hard);
}

TEST_CASE("collaboration without hard samples leaves System1 untouched") {
  ToySystem1 toy(2);
  toy.add(0, "cat", {1, 0});
  toy.add(1, "dog", {0, 1});
  std::vector<Sample> batch;
  for (std::uint64_t i = 0; i < 4; ++i) batch.push_back(ToySystem1::sample(i, {1, 0}, 0));
  FailingBackend client;
  CollaborationStats stats;
  const auto r = collaborate_infer(toy.view(), batch, client, {}, std::nullopt, &stats);
  CHECK(stats.hard == 0);
  CHECK(stats.queries == 0);
  for (const auto& rec : r) CHECK(rec.source == Source::System1);
}

TEST_CASE("an exact System2 answer overrides the hard sample") {
  HardBatch h;
  MockBackend mock({{0, "cat"}, {1, "cat"}, {2, "cat"}, {3, "cat"}, {4, "sea lion"}}, 1.0, 3);
  CollaborationStats stats;
  const auto r = collaborate_infer(h.toy.view(), h.batch, mock, {}, std::nullopt, &stats);
  CHECK(r[4].top1 == 1);
  CHECK(r[4].final_label == 2);
  CHECK(r[4].source == Source::System2);
  CHECK(stats.hard == 1);
  CHECK(stats.exact_answers == 1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i].source == Source::System1);
}

TEST_CASE("a non-committal answer keeps the System1 label") {
  HardBatch h;
  ScriptedBackend scripted({{4, "Neither of them, honestly."}});
  const auto r = collaborate_infer(h.toy.view(), h.batch, scripted, {});
  CHECK(r[4].final_label == r[4].top1);
  CHECK(r[4].source == Source::System1);

  MockBackend unreliable({{4, "sea lion"}}, 0.0, 3);
  const auto u = collaborate_infer(h.toy.view(), h.batch, unreliable, {});
  CHECK(u[4].final_label == u[4].top1);
}

TEST_CASE("backend failures fall back to System1 and are logged") {
  HardBatch h;
  FailingBackend client;
  std::vector<std::string> lines;
  CollaborationOptions opt;
  opt.log = [&](const std::string& l) { lines.push_back(l); };
  CollaborationStats stats;
  const auto r = collaborate_infer(h.toy.view(), h.batch, client, opt, std::nullopt, &stats);
  CHECK(r[4].final_label == r[4].top1);
  CHECK(stats.failures == 1);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0].find("sample 4") != std::string::npos);
  CHECK(lines[0].find("deadline exceeded") != std::string::npos);
}

TEST_CASE("parallel queries give the same records as serial ones") {
  ToySystem1 toy(3);
  toy.add(0, "cat", {1, 0, 0});
  toy.add(1, "dog", {0, 1, 0});
  toy.add(2, "frog", {0, 0, 1});
  std::mt19937_64 rng(12);
  std::vector<Sample> batch;
  std::map<std::uint64_t, std::string> truth;
  for (std::uint64_t i = 0; i < 60; ++i) {
    batch.push_back(ToySystem1::sample(i, icl::testing::random_vector(3, rng), static_cast<Label>(i % 3)));
    truth[i] = toy.store.name_of(static_cast<Label>(i % 3));
  }
  MockBackend mock(truth, 0.7, 5);
  CollaborationOptions serial, parallel;
  parallel.parallelism = 8;
  const auto a = collaborate_infer(toy.view(), batch, mock, serial);
  const auto b = collaborate_infer(toy.view(), batch, mock, parallel);
  CHECK(predictions_csv(a) == predictions_csv(b));
}

TEST_CASE("predictions CSV format") {
  PredictionRecord r;
  r.sample_id = 12;
  r.top1 = 3;
  r.topk = {3, 1};
  r.nu = 0.25;
  r.hard = true;
  r.final_label = 1;
  r.source = Source::System2;
  CHECK(predictions_csv(std::vector{r}) ==
        "sample_id,top1,topk,nu,hard,final,source\n12,3,3|1,0.25,1,1,SYSTEM2\n");
}
