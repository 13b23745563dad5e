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
#include <random>

#include "icl/errors.hpp"
#include "icl/vmf.hpp"
#include "support.hpp"

using namespace icl;
using icl::testing::random_matrix;
using icl::testing::random_vector;

namespace {

double ref_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Scalar reference for one sample: -log posterior and the GS term.
struct RefTerms {
  double nll;
  double gs;
};

RefTerms ref_terms(const std::vector<double>& xi, const std::vector<std::vector<double>>& zs, std::size_t y,
                   double kappa, double delta) {
  std::vector<double> c;
  for (const auto& z : zs) c.push_back(ref_cos(z, xi));
  double z = 0.0;
  for (double v : c) z += std::exp(kappa * v);
  RefTerms t{-(kappa * c[y] - std::log(z)), 0.0};
  t.gs = std::max(std::abs(1.0 - c[y]) - delta, 0.0);
  for (std::size_t k = 0; k < zs.size(); ++k) {
    if (k != y) t.gs += std::max(std::abs(1.0 + c[k]) - delta, 0.0);
  }
  return t;
}

struct Fixture {
  InteractorDims dims{4, 16, 2, 8};
  QueryInteractorParams params = QueryInteractorParams::init(dims, 3);
  ValueMemoryStore store{MemoryDims{8, 16}, 4};
  Batch batch;

  Fixture(std::size_t n, std::size_t classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (Label y = 0; y < classes; ++y) store.register_class({y, "c" + std::to_string(y)}, TaskId{0});
    for (std::size_t i = 0; i < n; ++i) {
      Sample s;
      s.id = i;
      s.tokens = random_matrix(4, 16, rng);
      s.label = static_cast<Label>(i % classes);
      batch.push_back(s);
    }
  }
};

}  // namespace

TEST_CASE("posterior over orthonormal candidates") {
  const std::vector<Candidate> c{{0, {1, 0}}, {1, {0, 1}}};
  const auto r = vmf_posterior(std::vector<double>{1, 0}, c, 1.0);
  const double e = std::exp(1.0);
  CHECK(r.probabilities[0] == doctest::Approx(e / (e + 1)).epsilon(1e-14));
  CHECK(r.probabilities[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-14));
  CHECK(r.probabilities[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(r.similarities == std::vector<double>{1.0, 0.0});

  const auto eq = vmf_posterior(std::vector<double>{1, 1}, c, 1.0);
  CHECK(eq.probabilities[0] == doctest::Approx(0.5).epsilon(1e-15));

  const auto flat = vmf_posterior(std::vector<double>{1, 0}, c, 1e-9);
  CHECK(std::abs(flat.probabilities[0] - 0.5) < 1e-8);
}

TEST_CASE("posterior errors") {
  const std::vector<Candidate> c{{0, {1, 0}}};
  auto kind = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::ConfigError;
  };
  CHECK(kind([&] { vmf_posterior(std::vector<double>{0, 0}, c, 1.0); }) == ErrorKind::ZeroNorm);
  CHECK(kind([&] { vmf_posterior(std::vector<double>{1, 0}, {}, 1.0); }) == ErrorKind::EmptyCandidates);
  const std::vector<Candidate> zero{{0, {0, 0}}};
  CHECK(kind([&] { vmf_posterior(std::vector<double>{1, 0}, zero, 1.0); }) == ErrorKind::ZeroNorm);
}

TEST_CASE("posterior is normalized and scale invariant") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + i % 4;
    std::vector<Candidate> c;
    for (std::size_t j = 0; j < k; ++j) c.emplace_back(static_cast<Label>(j), random_vector(6, rng));
    const auto xi = random_vector(6, rng);
    const double kappa = 0.5 + i % 4;
    const auto r = vmf_posterior(xi, c, kappa);
    double s = 0.0;
    for (double p : r.probabilities) s += p;
    CHECK(std::abs(s - 1.0) < 1e-9);

    auto c2 = c;
    for (auto& [y, z] : c2) {
      for (double& v : z) v *= 3.7;
    }
    auto xi2 = xi;
    for (double& v : xi2) v *= 0.01;
    const auto r2 = vmf_posterior(xi2, c2, kappa);
    for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(r.probabilities[j] - r2.probabilities[j]) < 1e-12);
  }
}

TEST_CASE("vMF batch loss examples") {
  // Feature equal to class A's prototype with an orthogonal class B gives -ln(0.7311).
  InteractorDims dims{1, 2, 1, 2};
  auto params = QueryInteractorParams::init(dims, 1);
  params.use_nonlinearity = false;
  params.class_weight = Matrix::identity(2);
  params.class_bias = Matrix(1, 2);
  params.out_weight = Matrix(2, 2);
  params.out_bias = Matrix::from_rows({{1, 0}});
  ValueMemoryStore store({2, 2}, 1);
  store.register_class({0, "a"}, TaskId{0});
  store.register_class({1, "b"}, TaskId{0});
  store.set_task_vector(TaskId{0}, std::vector<double>{1, 0});
  store.set_class_vector(0, std::vector<double>{1, 0});
  store.set_class_vector(1, std::vector<double>{-1, 0});
  // feature = [1, 0, 1, 0]; z_a = [1,0,1,0] (cos 1), z_b = [1,0,-1,0] (cos 0).
  Sample a{0, Matrix::from_rows({{1, 0}}), 0, TaskId{0}, ""};
  Sample b{1, Matrix::from_rows({{1, 0}}), 1, TaskId{0}, ""};
  const double la = vmf_batch_loss(std::vector<Sample>{a, b}, store, params, 1.0);
  const double e = std::exp(1.0);
  const double loss_a = -std::log(e / (e + 1));
  const double loss_b = -std::log(1 / (e + 1));
  CHECK(la == doctest::Approx((loss_a + loss_b) / 2).epsilon(1e-12));
  CHECK(loss_a == doctest::Approx(0.3133).epsilon(1e-3));

  const double single = vmf_batch_loss(std::vector<Sample>{a}, store, params, 1.0);
  CHECK(single == 0.0);
}

TEST_CASE("batch losses match the scalar oracle") {
  for (int seed = 0; seed < 10; ++seed) {
    Fixture f(6, 2 + seed % 3, 100 + seed);
    const VmfConfig cfg{1.0 + seed % 3, 0.2, 0.1};
    std::vector<TokenEmbedding> tokens;
    for (const auto& s : f.batch) tokens.push_back(s.tokens);
    const auto xs = query_features(f.params, tokens);
    const auto classes = batch_classes(f.batch);
    std::vector<std::vector<double>> zs;
    for (Label y : classes) zs.push_back(f.store.value_vector(y));
    double nll = 0.0, gs = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto pos = static_cast<std::size_t>(
          std::find(classes.begin(), classes.end(), f.batch[i].label) - classes.begin());
      const auto t = ref_terms(xs[i], zs, pos, cfg.kappa, cfg.delta);
      nll += t.nll;
      gs += t.gs;
    }
    nll /= static_cast<double>(xs.size());
    gs /= static_cast<double>(xs.size());
    CHECK(std::abs(vmf_batch_loss(f.batch, f.store, f.params, cfg.kappa) - nll) < 1e-12);
    CHECK(std::abs(gs_batch_loss(f.batch, f.store, f.params, cfg.delta) - gs) < 1e-12);
    CHECK(std::abs(total_loss(f.batch, f.store, f.params, cfg) - (nll + cfg.lambda * gs)) < 1e-12);
  }
}

TEST_CASE("margin loss examples") {
  const std::vector<double> x{1, 0};
  CHECK(margin_loss(std::vector<double>{2, 0}, x, 0.1) == 0.0);
  const std::vector<double> half{0.5, std::sqrt(0.75)};
  CHECK(margin_loss(half, x, 0.1) == doctest::Approx(0.4).epsilon(1e-12));
  // A negative pair whose z is anti-aligned: margin_loss(-z, xi) sees cosine +1.
  const std::vector<double> z{-1, 0};
  const std::vector<double> neg{1, 0};
  CHECK(cosine(z, x) == -1.0);
  CHECK(margin_loss(neg, x, 0.1) == 0.0);
}

TEST_CASE("GS loss of a perfectly separated pair is zero") {
  InteractorDims dims{1, 2, 1, 2};
  auto params = QueryInteractorParams::init(dims, 1);
  params.use_nonlinearity = false;
  params.class_weight = Matrix::identity(2);
  params.class_bias = Matrix(1, 2);
  params.out_weight = Matrix(2, 2);
  params.out_bias = Matrix(1, 2);
  ValueMemoryStore store({2, 2}, 1);
  store.register_class({0, "a"}, TaskId{0});
  store.register_class({1, "b"}, TaskId{0});
  store.set_task_vector(TaskId{0}, std::vector<double>{0, 0});
  store.set_class_vector(0, std::vector<double>{1, 0});
  store.set_class_vector(1, std::vector<double>{-1, 0});
  // Feature [0,0,1,0]: cos = 1 with class a, -1 with class b.
  Sample s{0, Matrix::from_rows({{1, 0}}), 0, TaskId{0}, ""};
  Sample t{1, Matrix::from_rows({{-1, 0}}), 1, TaskId{0}, ""};
  CHECK(gs_batch_loss(std::vector<Sample>{s, t}, store, params, 0.1) < 1e-12);
  // One class in the batch: only the positive term.
  Sample off{2, Matrix::from_rows({{0.5, std::sqrt(0.75)}}), 0, TaskId{0}, ""};
  CHECK(gs_batch_loss(std::vector<Sample>{off}, store, params, 0.1) == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("total loss composition") {
  Fixture f(4, 2, 9);
  const double a = vmf_batch_loss(f.batch, f.store, f.params, 1.0);
  const double b = gs_batch_loss(f.batch, f.store, f.params, 0.2);
  CHECK(total_loss(f.batch, f.store, f.params, {1.0, 0.2, 0.0}) == doctest::Approx(a).epsilon(1e-14));
  CHECK(total_loss(f.batch, f.store, f.params, {1.0, 0.2, 1.0}) == doctest::Approx(a + b).epsilon(1e-14));
  VmfConfig fig{1.0, 0.2, 0.1};
  CHECK_NOTHROW(fig.validate());
  VmfConfig bad{0.0, 0.2, 0.1};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("batch loss errors") {
  Fixture f(2, 2, 1);
  Batch empty;
  CHECK_THROWS_AS(vmf_batch_loss(empty, f.store, f.params, 1.0), Error);
  Batch stray = f.batch;
  stray[0].label = 77;
  try {
    vmf_batch_loss(stray, f.store, f.params, 1.0);
    FAIL("expected UnknownClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownClass);
  }
}

TEST_CASE("analytic gradient examples") {
  const std::vector<std::vector<double>> xi{{1, 0}};
  const std::vector<Label> y{0};
  const std::vector<Candidate> one{{0, {0.3, 0.4}}};
  const auto g1 = analytic_grad_oracle(xi, y, one, 1.0);
  for (double v : g1.value_dirs.at(0)) CHECK(v == 0.0);
  for (double v : g1.feature_dirs[0]) CHECK(v == 0.0);

  const std::vector<Candidate> two{{0, {1, 0}}, {1, {0, 1}}};
  const auto g2 = analytic_grad_oracle(xi, y, two, 1.0);
  const double e = std::exp(1.0);
  CHECK(g2.value_dirs.at(0)[0] == doctest::Approx(e / (e + 1) - 1).epsilon(1e-14));
  CHECK(g2.value_dirs.at(0)[0] == doctest::Approx(-0.2689).epsilon(1e-3));
  CHECK(g2.value_dirs.at(0)[1] == 0.0);
}

TEST_CASE("analytic gradients match autodiff on the normalized variables") {
  std::mt19937_64 rng(21);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t k = 2 + inst % 4;
    const std::size_t dim = 3 + inst % 10;
    const std::size_t n = 1 + inst % 5;
    const double kappa = 0.5 + inst % 3;
    std::vector<Candidate> cands;
    for (std::size_t j = 0; j < k; ++j) cands.emplace_back(static_cast<Label>(j), l2_normalize(random_vector(dim, rng)));
    std::vector<std::vector<double>> xs;
    std::vector<Label> labels;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(l2_normalize(random_vector(dim, rng)));
      labels.push_back(static_cast<Label>(rng() % k));
    }
    GradTape tape;
    std::map<Label, Node> values;
    std::vector<Label> order;
    for (const auto& [yy, z] : cands) {
      values[yy] = tape.input("z" + std::to_string(yy));
      order.push_back(yy);
    }
    std::vector<Node> feats;
    for (std::size_t i = 0; i < n; ++i) feats.push_back(tape.input("x" + std::to_string(i)));
    const auto nodes = record_batch_loss(tape, feats, labels, values, order, {kappa, 0.2, 0.0}, false);
    tape.set_output(nodes.vmf);
    GradTape::Bindings b;
    for (const auto& [yy, z] : cands) b["z" + std::to_string(yy)] = Matrix::row_vector(z);
    for (std::size_t i = 0; i < n; ++i) b["x" + std::to_string(i)] = Matrix::row_vector(xs[i]);
    tape.forward(b);
    const auto g = tape.backward();
    const auto oracle = analytic_grad_oracle(xs, labels, cands, kappa);
    for (const auto& [yy, z] : cands) {
      CHECK(relative_error(g.at("z" + std::to_string(yy)).data, oracle.value_dirs.at(yy)) < 1e-6);
    }
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(relative_error(g.at("x" + std::to_string(i)).data, oracle.feature_dirs[i]) < 1e-6);
    }
  }
}

TEST_CASE("objective gradients through the full path match finite differences") {
  Fixture f(3, 2, 33);
  BatchObjective obj(f.batch, f.store, f.params, {1.0, 0.2, 0.1});
  obj.evaluate(f.store, f.params);
  const auto g = obj.gradients();
  const std::string key = BatchObjective::class_key(1);
  // The store rounds to float32, so perturbed values live on a separate tape.
  auto direct = [&](std::span<const double> x) {
    GradTape tape;
    std::map<Label, Node> values;
    const Node t = tape.constant(Matrix::row_vector(f.store.task_vector(TaskId{0})));
    values[0] = tape.concat_cols({t, tape.constant(Matrix::row_vector(f.store.class_vector(0)))});
    values[1] = tape.concat_cols({t, tape.constant(Matrix::row_vector(x))});
    auto p = bind_interactor(tape, f.params, false);
    std::vector<Node> feats;
    std::vector<Label> labels;
    for (const auto& s : f.batch) {
      feats.push_back(record_query_path(tape, p, f.params, tape.constant(s.tokens)).feature);
      labels.push_back(s.label);
    }
    const std::vector<Label> order{0, 1};
    record_batch_loss(tape, feats, labels, values, order, {1.0, 0.2, 0.1});
    GradTape::Bindings b;
    add_bindings(b, f.params);
    return tape.forward(b)(0, 0);
  };
  const auto fd = finite_diff_grad(direct, f.store.class_vector(1));
  CHECK(relative_error(g.at(key).data, fd) < 1e-5);
}
