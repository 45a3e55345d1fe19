#include <doctest.h>

#include <cmath>

#include "op_cases.hpp"
#include "oracles.hpp"
#include "posdep/autodiff.hpp"
#include "posdep/error.hpp"

using namespace posdep;
using ad::Graph;
using ad::Tensor;

TEST_CASE("tensor shape and data agree") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  t.mutable_grad()[0] = 3.0;
  CHECK(t.grad().size() == t.size());
  t.zero_grad();
  CHECK(t.grad()[0] == 0.0);
}

TEST_CASE("matmul reports both shapes on mismatch") {
  Graph g;
  auto a = g.constant(Tensor({2, 3}));
  auto b = g.constant(Tensor({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL("no throw");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul forward matches a hand product") {
  Graph g;
  auto a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  auto b = g.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  const auto& c = ad::matmul(a, b).value();
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
}

TEST_CASE("backward needs a scalar loss") {
  Graph g;
  Tensor p({2, 2}, 1.0);
  p.set_requires_grad(true);
  auto x = g.parameter(p);
  CHECK_THROWS_AS(g.backward(x), ContractError);
}

TEST_CASE("parameter gradients accumulate until cleared") {
  Tensor p = Tensor::vector({1.0, 2.0});
  p.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(ad::sum(ad::scalar_mul(g.parameter(p), 3.0)));
  }
  CHECK(p.grad()[0] == doctest::Approx(6.0));
  p.zero_grad();
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("every reachable parameter receives a gradient") {
  Tensor a = Tensor::matrix({{1, 2}}), b = Tensor::matrix({{3}, {4}});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Graph g;
  g.backward(ad::sum(ad::matmul(g.parameter(a), g.parameter(b))));
  CHECK(a.has_grad());
  CHECK(b.has_grad());
  CHECK(a.grad()[0] == 3.0);
  CHECK(b.grad()[1] == 2.0);
}

TEST_CASE("softmax is stable for large inputs and rejects NaN") {
  Graph g;
  auto x = g.constant(Tensor::matrix({{1000.0, 1000.0}}));
  const auto& s = ad::softmax(x, 1).value();
  CHECK(s[0] == doctest::Approx(0.5));
  auto bad = g.constant(Tensor::matrix({{std::nan(""), 0.0}}));
  CHECK_THROWS_AS(ad::softmax(bad, 1), NumericError);
}

TEST_CASE("cross entropy closed forms") {
  Graph g;
  const std::vector<int> gold{1};
  CHECK(ad::cross_entropy(g.constant(Tensor::matrix({{0.0, 0.0}})), gold).item() ==
        doctest::Approx(std::log(2.0)));
  CHECK(ad::cross_entropy(g.constant(Tensor::matrix({{0.0, std::log(3.0)}})), gold).item() ==
        doctest::Approx(-std::log(0.75)));
  const std::vector<int> out_of_range{2};
  CHECK_THROWS_AS(ad::cross_entropy(g.constant(Tensor::matrix({{0.0, 0.0}})), out_of_range),
                  IndexError);
}

TEST_CASE("embedding lookup rejects out-of-range ids") {
  Graph g;
  auto table = g.constant(Tensor({3, 2}, 1.0));
  const std::vector<int> ids{0, 3};
  CHECK_THROWS_AS(ad::embedding_lookup(table, ids), IndexError);
}

TEST_CASE("biaffine forward against a direct sum") {
  Rng rng(3);
  const Tensor dep = testing::random_tensor({2, 3}, rng);
  const Tensor w = testing::random_tensor({2, 4, 2}, rng);
  const Tensor head = testing::random_tensor({3, 2}, rng);
  Graph g;
  const auto& out = ad::biaffine(g.constant(dep), g.constant(w), g.constant(head)).value();
  REQUIRE(out.shape() == ad::Shape{2, 3, 2});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t l = 0; l < 2; ++l) {
        double s = 0.0;
        for (std::size_t p = 0; p < 4; ++p) {
          const double d = p < 3 ? dep.at(i, p) : 1.0;
          for (std::size_t q = 0; q < 2; ++q) s += d * w[(l * 4 + p) * 2 + q] * head.at(j, q);
        }
        CHECK(out[(i * 3 + j) * 2 + l] == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("dropout mask values and rate validation") {
  Rng rng(5);
  const Tensor m = ad::dropout_mask({1, 1000}, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : m.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    zeros += v == 0.0;
  }
  CHECK(zeros > 150);
  CHECK(zeros < 350);
  CHECK_THROWS_AS(ad::dropout_mask({2}, 1.0, rng), ParameterError);
  CHECK_THROWS_AS(ad::dropout_mask({2}, -0.1, rng), ParameterError);
}

TEST_CASE("finite-difference checks per op (short run)") {
  Rng rng(11);
  for (const auto& c : testing::op_cases()) {
    CAPTURE(c.name);
    for (int t = 0; t < 10; ++t) CHECK(c.trial(rng).max_error < 1e-4);
  }
}
