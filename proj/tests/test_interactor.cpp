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

#include <cmath>
#include <random>

#include "icl/errors.hpp"
#include "icl/interactor.hpp"
#include "support.hpp"

using namespace icl;
using icl::testing::random_matrix;

namespace {

// Scalar-loop reference implementation of the query path.
struct Reference {
  const QueryInteractorParams& p;

  static double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

  Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b, std::size_t col0 = 0,
                std::size_t width = 0) const {
    if (width == 0) width = x.cols;
    Matrix y(x.rows, w.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
      for (std::size_t c = 0; c < w.cols; ++c) {
        double s = b(0, c);
        for (std::size_t k = 0; k < width; ++k) s += x(r, col0 + k) * w(k, c);
        y(r, c) = s;
      }
    }
    return y;
  }

  Matrix project(const Matrix& x) const {
    Matrix y = affine(x, p.class_weight, p.class_bias);
    if (p.use_nonlinearity) {
      for (double& v : y.data) v = gelu_ref(v);
    }
    return y;
  }

  Matrix mha(const Matrix& xc, const Matrix& xk) const {
    const std::size_t L = xc.rows;
    const std::size_t dh = p.dims.head_dim();
    const Matrix v = affine(xk, p.value_weight, p.value_bias);
    Matrix joined(L, p.dims.model_dim);
    for (std::size_t h = 0; h < p.dims.heads; ++h) {
      const Matrix q = affine(xc, p.query_weight[h], p.query_bias[h], h * dh, dh);
      const Matrix k = affine(xk, p.key_weight[h], p.key_bias[h], h * dh, dh);
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(L);
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          double d = 0.0;
          for (std::size_t c = 0; c < dh; ++c) d += q(i, c) * k(j, c);
          s[j] = d / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (double& x : s) z += (x = std::exp(x - mx));
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < L; ++j) acc += s[j] / z * v(j, h * dh + c);
          joined(i, h * dh + c) = acc;
        }
      }
    }
    return affine(joined, p.out_weight, p.out_bias);
  }

  std::vector<double> compose(const Matrix& xt, const Matrix& xc) const {
    std::vector<double> out;
    for (const Matrix* m : {&xt, &xc}) {
      for (std::size_t c = 0; c < m->cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < m->rows; ++r) s += (*m)(r, c);
        out.push_back(s / static_cast<double>(m->rows));
      }
    }
    return out;
  }
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

QueryInteractorParams random_params(const InteractorDims& dims, std::uint64_t seed) {
  auto p = QueryInteractorParams::init(dims, seed);
  std::mt19937_64 rng(seed + 100);
  for (auto& [name, m] : p.named()) *m = random_matrix(m->rows, m->cols, rng, -0.8, 0.8);
  return p;
}

}  // namespace

TEST_CASE("identity projector without nonlinearity returns its input") {
  InteractorDims dims{3, 4, 2, 2};
  auto p = QueryInteractorParams::init(dims, 1);
  p.class_weight = Matrix::identity(4);
  p.class_bias = Matrix(1, 4);
  p.use_nonlinearity = false;
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(3, 4, rng);
  CHECK(project_tokens(p, x) == x);
}

TEST_CASE("projection keeps the token shape and matches the scalar oracle") {
  InteractorDims dims{2, 4, 2, 3};
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto p = random_params(dims, 10 + i);
    const Matrix x = random_matrix(2, 4, rng);
    const Matrix y = project_tokens(p, x);
    CHECK(y.rows == 2);
    CHECK(y.cols == 4);
    CHECK(max_abs_diff(y.data, Reference{p}.project(x).data) < 1e-12);
  }
  const auto p = random_params(dims, 1);
  try {
    project_tokens(p, Matrix(3, 4));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("zero class tokens give uniform attention over the value rows") {
  InteractorDims dims{3, 4, 2, 4};
  auto p = random_params(dims, 3);
  for (auto& b : p.query_bias) b = Matrix(1, 2);
  p.out_weight = Matrix::identity(4);
  p.out_bias = Matrix(1, 4);
  std::mt19937_64 rng(3);
  const Matrix xk = random_matrix(3, 4, rng);
  const Matrix out = ckt_mha(p, Matrix(3, 4), xk);
  Matrix v(3, 4);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      double s = p.value_bias(0, c);
      for (std::size_t k = 0; k < 4; ++k) s += xk(r, k) * p.value_weight(k, c);
      v(r, c) = s;
    }
  }
  for (std::size_t c = 0; c < 4; ++c) {
    const double mean = (v(0, c) + v(1, c) + v(2, c)) / 3.0;
    for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(out(r, c) - mean) < 1e-12);
  }
}

TEST_CASE("zero output map gives zero task tokens") {
  InteractorDims dims{3, 4, 2, 5};
  auto p = random_params(dims, 4);
  p.out_weight = Matrix(4, 5);
  p.out_bias = Matrix(1, 5);
  std::mt19937_64 rng(4);
  CHECK(ckt_mha(p, random_matrix(3, 4, rng), random_matrix(3, 4, rng)) == Matrix(3, 5));
}

TEST_CASE("attention matches the scalar oracle and rows sum to one") {
  InteractorDims dims{2, 4, 2, 3};
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto p = random_params(dims, 50 + i);
    const Matrix xc = random_matrix(2, 4, rng);
    const Matrix xk = random_matrix(2, 4, rng);
    CHECK(max_abs_diff(ckt_mha(p, xc, xk).data, Reference{p}.mha(xc, xk).data) < 1e-12);
    for (const auto& w : attention_weights(p, xc, xk)) {
      for (std::size_t r = 0; r < w.rows; ++r) {
        double s = 0.0;
        for (double v : w.row(r)) s += v;
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("head count must divide d_c") {
  InteractorDims dims{4, 6, 4, 8};
  try {
    dims.validate();
    FAIL("expected HeadDivisibility");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::HeadDivisibility);
  }
}

TEST_CASE("composition examples") {
  const auto f = compose_feature(Matrix::from_rows({{1, 1}, {3, 3}}), Matrix::from_rows({{0, 2}, {2, 0}}));
  CHECK(f == std::vector<double>{2, 2, 1, 1});
  CHECK(compose_feature(Matrix::from_rows({{4, 5}}), Matrix::from_rows({{6, 7, 8}})) ==
        std::vector<double>{4, 5, 6, 7, 8});
  std::mt19937_64 rng(6);
  InteractorDims dims{3, 4, 2, 2};
  const auto p = random_params(dims, 6);
  for (int i = 0; i < 10; ++i) {
    const Matrix t = random_matrix(3, 2, rng);
    const Matrix c = random_matrix(3, 4, rng);
    CHECK(max_abs_diff(compose_feature(t, c), Reference{p}.compose(t, c)) < 1e-12);
  }
  try {
    compose_feature(Matrix(2, 2), Matrix(3, 4));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("full query path matches the oracle and has value-memory width") {
  InteractorDims dims;
  std::mt19937_64 rng(7);
  const auto p = QueryInteractorParams::init(dims, 7);
  std::vector<TokenEmbedding> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(random_matrix(dims.tokens, dims.model_dim, rng));
  const auto batch = query_features(p, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Reference ref{p};
    const Matrix xc = ref.project(xs[i]);
    const auto expect = ref.compose(ref.mha(xc, xs[i]), xc);
    CHECK(batch[i].size() == dims.task_dim + dims.model_dim);
    CHECK(max_abs_diff(batch[i], expect) < 1e-12);
    CHECK(query_feature(p, xs[i]) == batch[i]);
  }
}

TEST_CASE("query path gradients for every parameter group match finite differences") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    InteractorDims dims{static_cast<std::size_t>(1 + i % 4), 8, i % 2 ? 2u : 4u, 3};
    const auto p = random_params(dims, 80 + i);
    GradTape tape;
    auto nodes = bind_interactor(tape, p);
    const auto path = record_query_path(tape, nodes, p, tape.constant(random_matrix(dims.tokens, 8, rng)));
    tape.dot(path.feature, tape.constant(random_matrix(1, dims.feature_dim(), rng)));
    GradTape::Bindings b;
    add_bindings(b, p);
    CHECK(icl::testing::tape_fd_error(tape, b) < 1e-5);
  }
}

TEST_CASE("initialization is deterministic, bounded and float-exact") {
  InteractorDims dims;
  const auto a = QueryInteractorParams::init(dims, 42);
  const auto b = QueryInteractorParams::init(dims, 42);
  CHECK(a == b);
  CHECK(!(a == QueryInteractorParams::init(dims, 43)));
  for (const auto& [name, m] : a.named()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m->rows));
    for (double v : m->data) {
      if (name.find("bias") != std::string::npos) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= bound);
      }
      CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
  }
  CHECK(a.named().size() == 4 + 4 * dims.heads + 2);
}
