#include "sslcrop/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "sslcrop/error.hpp"

namespace sslcrop::rf {
namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

struct Builder {
  const ad::Tensor& x;
  std::span<const std::size_t> y;
  const ForestConfig& cfg;
  std::size_t max_features;
  Rng& rng;
  DecisionTree tree;
  std::vector<std::size_t> feature_order;
  std::vector<std::pair<double, std::size_t>> column;  // value, label slot

  std::uint32_t build(std::vector<std::size_t> rows, std::size_t depth) {
    TreeNode node;
    for (std::size_t r : rows) ++node.counts[y[r]];
    const auto index = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.push_back(node);

    const bool pure = std::count_if(node.counts.begin(), node.counts.end(),
                                    [](std::uint32_t c) { return c > 0; }) <= 1;
    if (pure || rows.size() < 2 * cfg.min_leaf || (cfg.max_depth && depth >= *cfg.max_depth)) {
      return index;
    }

    const std::size_t n = rows.size();
    double best_score = std::numeric_limits<double>::infinity();
    int best_feature = -1;
    double best_threshold = 0.0;

    // Candidates are drawn fresh at every node; flat features do not count
    // toward the quota.
    rng.shuffle(std::span(feature_order));
    std::size_t visited = 0;
    for (std::size_t f : feature_order) {
      if (visited >= max_features) break;
      column.clear();
      for (std::size_t r : rows) column.emplace_back(x.at(r, f), y[r]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++visited;

      ClassCounts left{}, right = node.counts;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        ++left[column[i].second];
        --right[column[i].second];
        const std::size_t n_left = i + 1, n_right = n - n_left;
        if (column[i].first == column[i + 1].first) continue;
        if (n_left < cfg.min_leaf || n_right < cfg.min_leaf) continue;
        const double score = (static_cast<double>(n_left) * gini(left) +
                              static_cast<double>(n_right) * gini(right)) /
                             static_cast<double>(n);
        if (score < best_score) {
          best_score = score;
          best_feature = static_cast<int>(f);
          const double lo = column[i].first, hi = column[i + 1].first;
          const double mid = lo + (hi - lo) / 2.0;
          best_threshold = mid < hi ? mid : lo;
        }
      }
    }
    if (best_feature < 0) return index;

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows) {
      (x.at(r, static_cast<std::size_t>(best_feature)) <= best_threshold ? left_rows : right_rows)
          .push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const std::uint32_t l = build(std::move(left_rows), depth + 1);
    const std::uint32_t r = build(std::move(right_rows), depth + 1);
    TreeNode& self = tree.nodes[index];
    self.feature = best_feature;
    self.threshold = best_threshold;
    self.left = l;
    self.right = r;
    return index;
  }
};

std::size_t resolve_max_features(const ForestConfig& cfg, std::size_t n_features) {
  const std::size_t m = cfg.max_features.value_or(
      std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n_features)))));
  if (m < 1 || m > n_features) {
    throw ContractError("max_features must lie in [1, " + std::to_string(n_features) + "]");
  }
  return m;
}

}  // namespace

double gini(std::span<const std::uint32_t> counts) {
  double total = 0.0;
  for (auto c : counts) total += c;
  if (total == 0.0) return 0.0;
  double sq = 0.0;
  for (auto c : counts) sq += (c / total) * (c / total);
  return 1.0 - sq;
}

std::size_t majority_slot(std::span<const std::uint32_t> counts) {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

const TreeNode& DecisionTree::leaf_for(std::span<const double> x) const {
  const TreeNode* node = &nodes.at(0);
  while (!node->is_leaf()) {
    node = &nodes[x[static_cast<std::size_t>(node->feature)] <= node->threshold ? node->left
                                                                                : node->right];
  }
  return *node;
}

std::size_t DecisionTree::predict_slot(std::span<const double> x) const {
  return majority_slot(leaf_for(x).counts);
}

std::size_t DecisionTree::depth() const {
  std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
  std::size_t deepest = 0;
  while (!stack.empty()) {
    const auto [i, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes[i].is_leaf()) {
      stack.emplace_back(nodes[i].left, d + 1);
      stack.emplace_back(nodes[i].right, d + 1);
    }
  }
  return deepest;
}

ad::Tensor flatten_features(const data::Dataset& d) {
  if (d.empty()) throw ContractError("cannot build features from an empty dataset");
  const std::size_t f = d.n_bands() * d.n_steps;
  ad::Tensor out({d.size(), f});
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto src = d.samples[i].reflectance.values();
    if (src.size() != f) throw DimensionError("sample " + d.samples[i].field_id + " has wrong size");
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

DecisionTree fit_tree(const ad::Tensor& features, std::span<const std::size_t> label_slots,
                      std::span<const std::size_t> sample, const ForestConfig& cfg, Rng& rng) {
  if (sample.empty()) throw ContractError("cannot fit a tree on no samples");
  if (cfg.min_leaf < 1) throw ContractError("min_leaf must be >= 1");
  Builder b{features, label_slots, cfg, resolve_max_features(cfg, features.cols()), rng, {}, {}, {}};
  b.feature_order.resize(features.cols());
  std::iota(b.feature_order.begin(), b.feature_order.end(), std::size_t{0});
  b.build({sample.begin(), sample.end()}, 0);
  return std::move(b.tree);
}

Forest fit(const ad::Tensor& features, std::span<const std::size_t> label_slots,
           const ForestConfig& cfg) {
  if (features.rank() != 2 || features.rows() == 0) {
    throw ContractError("random forest needs a non-empty [N x F] feature matrix");
  }
  if (label_slots.size() != features.rows()) throw ContractError("one label per row required");
  for (std::size_t s : label_slots) {
    if (s >= data::kNumClasses) throw ContractError("label slot out of range");
  }
  if (cfg.n_trees < 1) throw ContractError("n_trees must be >= 1");
  resolve_max_features(cfg, features.cols());

  Forest forest;
  forest.n_features = features.cols();
  forest.trees.resize(cfg.n_trees);
  const std::size_t n = features.rows();
  parallel_for(cfg.n_trees, cfg.jobs, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.seed, "tree", t));
    std::vector<std::size_t> sample(n);
    if (cfg.bootstrap) {
      for (auto& s : sample) s = rng.below(n);
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    forest.trees[t] = fit_tree(features, label_slots, sample, cfg, rng);
  });
  return forest;
}

std::vector<std::size_t> predict(const Forest& forest, const ad::Tensor& features,
                                 std::size_t jobs) {
  if (features.cols() != forest.n_features) {
    throw DimensionError("forest expects " + std::to_string(forest.n_features) +
                         " features, got " + std::to_string(features.cols()));
  }
  std::vector<std::size_t> out(features.rows());
  parallel_for(features.rows(), jobs, [&](std::size_t i) {
    ClassCounts votes{};
    for (const auto& tree : forest.trees) ++votes[tree.predict_slot(features.row(i))];
    out[i] = majority_slot(votes);
  });
  return out;
}

Forest rf_fit(const data::Dataset& train, const ForestConfig& cfg) {
  if (train.empty()) throw ContractError("rf_fit: empty training set");
  std::vector<std::size_t> labels;
  labels.reserve(train.size());
  for (const auto& s : train.samples) {
    if (!s.label) throw ContractError("rf_fit: sample " + s.field_id + " is unlabeled");
    labels.push_back(data::class_slot(*s.label));
  }
  return fit(flatten_features(train), labels, cfg);
}

std::vector<data::CropClass> rf_predict(const Forest& forest, const data::Dataset& samples,
                                        std::size_t jobs) {
  std::vector<data::CropClass> out;
  for (std::size_t slot : predict(forest, flatten_features(samples), jobs)) {
    out.push_back(data::class_from_slot(slot));
  }
  return out;
}

}  // namespace sslcrop::rf
