#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "posdep/decode.hpp"
#include "posdep/error.hpp"
#include "posdep/tree.hpp"

using namespace posdep;
using ad::Tensor;

TEST_CASE("tag argmax with lowest-id ties") {
  CHECK(decode::decode_tags(Tensor::matrix({{0, 1}, {1, 0}})) == std::vector<int>{1, 0});
  CHECK(decode::decode_tags(Tensor::matrix({{2, 2, 2}})) == std::vector<int>{0});
}

TEST_CASE("tag and label argmax invariant under positive affine maps") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = testing::random_tensor({4, 5}, rng);
    const auto base = decode::decode_tags(x);
    Tensor y = x;
    for (std::size_t r = 0; r < 4; ++r) {
      const double shift = rng.uniform(-5, 5), scale = rng.uniform(0.1, 3);
      for (std::size_t c = 0; c < 5; ++c) y.at(r, c) = scale * x.at(r, c) + shift;
    }
    CHECK(decode::decode_tags(y) == base);
  }
}

TEST_CASE("MST: single token and the hand example") {
  CHECK(decode::decode_tree_mst(Tensor::matrix({{0.3, -1.0}})) == std::vector<int>{0});
  // rows: dependents 1..2, columns: heads 0..2
  const Tensor s = Tensor::matrix({{1, 0, 5}, {4, 0, 0}});
  const auto heads = decode::decode_tree_mst(s);
  CHECK(heads == std::vector<int>{2, 0});
  CHECK(decode::tree_score(s, heads) == doctest::Approx(9.0));
}

TEST_CASE("MST rejects empty and non-finite input") {
  CHECK_THROWS_AS(decode::decode_tree_mst(Tensor()), ValidationError);
  CHECK_THROWS_AS(decode::decode_tree_mst(Tensor::matrix({{NAN, 0.0}})), NumericError);
}

TEST_CASE("MST enforces one root child") {
  // Every token prefers the root; only one may keep it.
  const Tensor s = Tensor::matrix({{10, 0, 1, 1}, {10, 1, 0, 1}, {10, 1, 1, 0}});
  const auto heads = decode::decode_tree_mst(s);
  CHECK(testing::valid_tree(heads));
  CHECK(std::count(heads.begin(), heads.end(), 0) == 1);
}

TEST_CASE("MST matches exhaustive search on small random matrices") {
  Rng rng(2);
  for (std::size_t n = 1; n <= 5; ++n) {
    for (int trial = 0; trial < 40; ++trial) {
      const Tensor s = testing::random_tensor({n, n + 1}, rng, -5, 5);
      const auto heads = decode::decode_tree_mst(s);
      REQUIRE(testing::valid_tree(heads));
      CHECK(decode::tree_score(s, heads) == doctest::Approx(testing::brute_force_mst(s).total));
    }
  }
}

TEST_CASE("greedy returns cycles and agrees with MST when it is already a tree") {
  const Tensor cyc = Tensor::matrix({{0, 0, 5}, {0, 5, 0}});
  CHECK(decode::decode_tree_greedy(cyc) == std::vector<int>{2, 1});
  const Tensor roots = Tensor::matrix({{9, 0, 1}, {9, 1, 0}});
  CHECK(decode::decode_tree_greedy(roots) == std::vector<int>{0, 0});
  Rng rng(3);
  int agreed = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(6));
    const Tensor s = testing::random_tensor({n, n + 1}, rng);
    const auto g = decode::decode_tree_greedy(s);
    if (!testing::valid_tree(g)) continue;
    ++agreed;
    CHECK(decode::decode_tree_mst(s) == g);
  }
  CHECK(agreed > 0);
}

TEST_CASE("raising a chosen arc keeps it in the tree") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(6));
    Tensor s = testing::random_tensor({n, n + 1}, rng);
    const auto heads = decode::decode_tree_mst(s);
    const std::size_t dep = static_cast<std::size_t>(rng.below(n));
    s.at(dep, static_cast<std::size_t>(heads[dep])) += rng.uniform(0.1, 3.0);
    CHECK(decode::decode_tree_mst(s)[dep] == heads[dep]);
  }
}

TEST_CASE("labels come from the chosen head column only") {
  // [n=2 x (n+1)=3 x L=2]
  Tensor lab({2, 3, 2}, 0.0);
  auto at = [&](std::size_t i, std::size_t j, std::size_t l) -> double& { return lab[(i * 3 + j) * 2 + l]; };
  at(0, 2, 1) = 1.0;
  at(1, 0, 0) = 1.0;
  const std::vector<int> heads{2, 0};
  CHECK(decode::assign_labels(lab, heads) == std::vector<int>{1, 0});
  at(0, 1, 0) = 100.0;
  at(1, 2, 1) = 100.0;
  CHECK(decode::assign_labels(lab, heads) == std::vector<int>{1, 0});
  const Tensor single({2, 3, 1}, 0.5);
  CHECK(decode::assign_labels(single, heads) == std::vector<int>{0, 0});
}

TEST_CASE("tree validator") {
  CHECK(is_arborescence(std::vector<int>{2, 0}));
  CHECK_FALSE(is_arborescence(std::vector<int>{2, 1}));
  CHECK_FALSE(is_arborescence(std::vector<int>{0, 0}));
  CHECK_FALSE(is_arborescence(std::vector<int>{1, 0}));
  CHECK_FALSE(is_arborescence(std::vector<int>{3, 0}));
}
