#pragma once

// Random forest of CART trees (Gini impurity, bootstrap, per-node feature
// subsampling) over flattened band x time features.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sslcrop/dataio.hpp"
#include "sslcrop/rng.hpp"
#include "sslcrop/tensor.hpp"

namespace sslcrop::rf {

using ClassCounts = std::array<std::uint32_t, data::kNumClasses>;

struct ForestConfig {
  std::size_t n_trees = 500;
  /// Candidate features per split; floor(sqrt(n_features)) when unset.
  std::optional<std::size_t> max_features;
  std::size_t min_leaf = 1;
  std::optional<std::size_t> max_depth;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  /// Worker threads for fitting and prediction. Results do not depend on it.
  std::size_t jobs = 1;
};

struct TreeNode {
  int feature = -1;  ///< -1 marks a leaf
  double threshold = 0.0;  ///< go left when x[feature] <= threshold
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  ClassCounts counts{};

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  std::vector<TreeNode> nodes;  ///< nodes[0] is the root

  const TreeNode& leaf_for(std::span<const double> x) const;
  /// Majority class slot of the reached leaf; ties go to the lowest slot.
  std::size_t predict_slot(std::span<const double> x) const;
  std::size_t depth() const;
};

struct Forest {
  std::size_t n_features = 0;
  std::vector<DecisionTree> trees;
};

double gini(std::span<const std::uint32_t> counts);

/// Majority slot of a count vector; ties go to the lowest slot.
std::size_t majority_slot(std::span<const std::uint32_t> counts);

/// Row-major flattening of each reflectance matrix: [N x bands*steps].
ad::Tensor flatten_features(const data::Dataset& d);

/// Fits one tree on the rows listed in `sample` (repeats allowed).
DecisionTree fit_tree(const ad::Tensor& features, std::span<const std::size_t> label_slots,
                      std::span<const std::size_t> sample, const ForestConfig& cfg, Rng& rng);

Forest fit(const ad::Tensor& features, std::span<const std::size_t> label_slots,
           const ForestConfig& cfg);
std::vector<std::size_t> predict(const Forest& forest, const ad::Tensor& features,
                                 std::size_t jobs = 1);

Forest rf_fit(const data::Dataset& train, const ForestConfig& cfg);
std::vector<data::CropClass> rf_predict(const Forest& forest, const data::Dataset& samples,
                                        std::size_t jobs = 1);

}  // namespace sslcrop::rf
