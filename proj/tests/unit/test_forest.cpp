#include <doctest.h>

#include <cmath>
#include <set>

#include "sslcrop/error.hpp"
#include "sslcrop/forest.hpp"

using namespace sslcrop;
using rf::ClassCounts;

namespace {

struct Table {
  ad::Tensor x;
  std::vector<std::size_t> y;
};

// Class depends on a noisy linear score, so trees need several splits.
Table random_table(std::size_t n, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  Table t{ad::Tensor({n, f}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    double score = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      t.x.at(i, j) = rng.uniform(0.0, 10.0);
      score += (j % 2 ? -1.0 : 1.0) * t.x.at(i, j);
    }
    score += rng.normal(0.0, 2.0);
    const double bucket = std::floor((score + 20.0) / 8.0);
    t.y.push_back(static_cast<std::size_t>(std::clamp(bucket, 0.0, 5.0)));
  }
  return t;
}

double weighted_gini_oracle(const Table& t, std::span<const std::size_t> rows, std::size_t f,
                            double threshold) {
  std::vector<double> l(6, 0.0), r(6, 0.0);
  for (std::size_t i : rows) (t.x.at(i, f) <= threshold ? l : r)[t.y[i]] += 1.0;
  auto g = [](const std::vector<double>& c) {
    double n = 0.0, s = 0.0;
    for (double v : c) n += v;
    if (n == 0.0) return std::pair{0.0, 0.0};
    for (double v : c) s += (v / n) * (v / n);
    return std::pair{n, 1.0 - s};
  };
  const auto [nl, gl] = g(l);
  const auto [nr, gr] = g(r);
  return (nl * gl + nr * gr) / (nl + nr);
}

}  // namespace

TEST_CASE("gini") {
  CHECK(rf::gini(ClassCounts{1, 1, 0, 0, 0, 0}) == doctest::Approx(0.5));
  CHECK(rf::gini(ClassCounts{0, 0, 9, 0, 0, 0}) == 0.0);
  CHECK(rf::gini(ClassCounts{3, 3, 3, 3, 3, 3}) == doctest::Approx(5.0 / 6.0));
  CHECK(rf::gini(ClassCounts{}) == 0.0);
}

TEST_CASE("majority ties go to the lowest slot") {
  CHECK(rf::majority_slot(ClassCounts{0, 2, 0, 2, 1, 0}) == 1);
  rf::Forest forest;
  forest.n_features = 1;
  for (std::size_t slot : {4u, 2u}) {
    rf::DecisionTree tree;
    rf::TreeNode leaf;
    leaf.counts[slot] = 1;
    tree.nodes.push_back(leaf);
    forest.trees.push_back(tree);
  }
  CHECK(rf::predict(forest, ad::Tensor({1, 1}, 0.0)) == std::vector<std::size_t>{2});
}

TEST_CASE("pure input gives a single leaf") {
  const Table t = random_table(30, 4, 1);
  const std::vector<std::size_t> y(30, 3);
  rf::ForestConfig cfg;
  cfg.n_trees = 5;
  const auto forest = rf::fit(t.x, y, cfg);
  for (const auto& tree : forest.trees) {
    CHECK(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].is_leaf());
  }
}

TEST_CASE("single feature separated at 5") {
  ad::Tensor x({20, 1});
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 20; ++i) {
    x.at(i, 0) = static_cast<double>(i) * 0.5;  // 0 .. 9.5
    y.push_back(x.at(i, 0) < 5.0 ? 0 : 1);
  }
  rf::ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.bootstrap = false;  // boundary points are always present
  const auto forest = rf::fit(x, y, cfg);
  for (const auto& tree : forest.trees) {
    const auto& root = tree.nodes[0];
    REQUIRE_FALSE(root.is_leaf());
    CHECK(root.feature == 0);
    CHECK(root.threshold == 4.75);
    CHECK(tree.nodes[root.left].is_leaf());
    CHECK(tree.nodes[root.right].is_leaf());
  }
  CHECK(rf::predict(forest, x) == y);
}

TEST_CASE("root split matches an exhaustive search") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Table t = random_table(60, 5, seed);
    std::vector<std::size_t> rows(60);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    rf::ForestConfig cfg;
    cfg.max_features = 5;
    Rng rng(seed);
    const auto tree = rf::fit_tree(t.x, t.y, rows, cfg, rng);

    double best = 1e300;
    for (std::size_t f = 0; f < 5; ++f) {
      for (std::size_t i = 0; i < 60; ++i) {
        best = std::min(best, weighted_gini_oracle(t, rows, f, t.x.at(i, f)));
      }
    }
    const auto& root = tree.nodes[0];
    REQUIRE_FALSE(root.is_leaf());
    CHECK(weighted_gini_oracle(t, rows, static_cast<std::size_t>(root.feature), root.threshold) ==
          doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("tree invariants over random tables") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Table t = random_table(80, 6, seed * 7);
    Rng rng(seed);
    std::vector<std::size_t> sample(80);
    for (auto& s : sample) s = rng.below(80);
    rf::ForestConfig cfg;
    const auto tree = rf::fit_tree(t.x, t.y, sample, cfg, rng);

    std::size_t leaf_total = 0;
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) {
        for (auto c : node.counts) leaf_total += c;
      } else {
        ClassCounts sum{};
        for (std::size_t k = 0; k < 6; ++k) {
          sum[k] = tree.nodes[node.left].counts[k] + tree.nodes[node.right].counts[k];
        }
        CHECK(sum == node.counts);
      }
    }
    CHECK(leaf_total == sample.size());
    // Distinct continuous features: every bootstrap row is fit exactly.
    for (std::size_t r : sample) CHECK(tree.predict_slot(t.x.row(r)) == t.y[r]);
  }
}

TEST_CASE("min_leaf and max_depth are honored") {
  const Table t = random_table(200, 4, 3);
  rf::ForestConfig cfg;
  cfg.n_trees = 8;
  cfg.min_leaf = 7;
  cfg.max_depth = 4;
  const auto forest = rf::fit(t.x, t.y, cfg);
  for (const auto& tree : forest.trees) {
    CHECK(tree.depth() <= 4);
    for (const auto& node : tree.nodes) {
      if (!node.is_leaf()) continue;
      std::size_t n = 0;
      for (auto c : node.counts) n += c;
      CHECK(n >= 7);
    }
  }
}

TEST_CASE("results do not depend on the worker count") {
  const Table t = random_table(150, 8, 11);
  rf::ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.seed = 5;
  const auto a = rf::fit(t.x, t.y, cfg);
  cfg.jobs = 3;
  const auto b = rf::fit(t.x, t.y, cfg);
  REQUIRE(a.trees.size() == b.trees.size());
  for (std::size_t i = 0; i < a.trees.size(); ++i) {
    REQUIRE(a.trees[i].nodes.size() == b.trees[i].nodes.size());
    for (std::size_t k = 0; k < a.trees[i].nodes.size(); ++k) {
      CHECK(a.trees[i].nodes[k].feature == b.trees[i].nodes[k].feature);
      CHECK(a.trees[i].nodes[k].threshold == b.trees[i].nodes[k].threshold);
    }
  }
  CHECK(rf::predict(a, t.x, 1) == rf::predict(b, t.x, 4));
}

TEST_CASE("a forest beats chance on held-out rows") {
  const Table train = random_table(400, 6, 21);
  const Table test = random_table(200, 6, 22);
  rf::ForestConfig cfg;
  cfg.n_trees = 50;
  const auto pred = rf::predict(rf::fit(train.x, train.y, cfg), test.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.y[i];
  CHECK(static_cast<double>(hits) / 200.0 > 0.5);
}

TEST_CASE("contract errors") {
  const Table t = random_table(10, 3, 1);
  rf::ForestConfig cfg;
  cfg.max_features = 4;
  CHECK_THROWS_AS(rf::fit(t.x, t.y, cfg), ContractError);
  cfg.max_features.reset();
  const auto forest = rf::fit(t.x, t.y, cfg);
  CHECK_THROWS_AS(rf::predict(forest, ad::Tensor({2, 4})), DimensionError);
  std::vector<std::size_t> short_labels(9, 0);
  CHECK_THROWS_AS(rf::fit(t.x, short_labels, cfg), ContractError);
}
