#pragma once

// Accuracy metrics, the nearest-class contrastive classifier, and PCA for
// embedding plots.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslcrop/dataio.hpp"
#include "sslcrop/model.hpp"
#include "sslcrop/tensor.hpp"

namespace sslcrop::metrics {

using data::CropClass;
using data::kNumClasses;

/// Fraction of exact matches. Throws ContractError on a length mismatch or
/// empty input.
double overall_accuracy(std::span<const CropClass> pred, std::span<const CropClass> truth);

/// Rows are the true class, columns the prediction, both by class slot.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(CropClass truth, CropClass pred) { ++counts[data::class_slot(truth)][data::class_slot(pred)]; }
  std::uint64_t total() const;
  std::uint64_t correct() const;
  /// correct / total; throws ContractError when empty.
  double overall_accuracy() const;

  static ConfusionMatrix from_predictions(std::span<const CropClass> pred,
                                          std::span<const CropClass> truth);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// diag / row sum; nullopt for classes with no samples.
std::array<std::optional<double>, kNumClasses> per_class_accuracy(const ConfusionMatrix& conf);

// --- Contrastive nearest-class classification ---------------------------------

/// Projector and predictor outputs of every reference sample, computed once.
struct ContrastiveReference {
  ad::Tensor z;  ///< [N x head_out]
  ad::Tensor p;  ///< [N x head_out]
  std::vector<std::size_t> class_slots;
  std::array<std::size_t, kNumClasses> class_counts{};
};

/// Throws ContractError if a reference sample is unlabeled, the model lacks
/// SimSiam heads, or a class has no reference sample. With
/// `allow_missing_classes`, absent classes are skipped instead (the reference
/// must still be non-empty).
ContrastiveReference prepare_reference(const nn::ModelState& state, const data::Dataset& reference,
                                       double input_scale, bool allow_missing_classes = false);

struct ContrastiveResult {
  CropClass predicted = CropClass::Corn;
  /// Mean symmetric SimSiam loss against each class's reference samples;
  /// absent for classes missing from the reference.
  std::array<std::optional<double>, kNumClasses> mean_loss{};
};

/// The class whose reference samples give the lowest mean pair loss
/// C(x1, x2) = -cos(p1, z2)/2 - cos(p2, z1)/2; ties go to the lowest class.
ContrastiveResult contrastive_classify(const nn::ModelState& state, const data::Sample& x1,
                                       const ContrastiveReference& reference, double input_scale);
ContrastiveResult contrastive_classify(const nn::ModelState& state, const data::Sample& x1,
                                       const data::Dataset& reference, double input_scale);
/// All samples of `queries` at once.
std::vector<ContrastiveResult> contrastive_classify_all(const nn::ModelState& state,
                                                        const data::Dataset& queries,
                                                        const ContrastiveReference& reference,
                                                        double input_scale);

// --- PCA ------------------------------------------------------------------------

struct PcaResult {
  ad::Tensor coordinates;          ///< [N x k]
  ad::Tensor components;           ///< [k x d], unit rows
  std::vector<double> explained;   ///< eigenvalue / total variance, non-increasing
};

struct PcaOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Top-k principal components of the rows of `x` by power iteration with
/// deflation. Each component's largest-magnitude entry is made positive.
/// Throws ContractError for fewer than 2 rows or k > d, and ConvergenceError
/// if an eigenvector does not settle within the iteration budget.
PcaResult pca_project(const ad::Tensor& x, std::size_t k = 2, const PcaOptions& options = {});

/// `sample_id,class,pc1,pc2` with the 1-based class index (empty if unlabeled).
void write_embedding_csv(const data::Dataset& d, const ad::Tensor& coordinates, std::ostream& out);

}  // namespace sslcrop::metrics
