#pragma once

// Positive-pair construction for SimSiam pre-training. All inputs and outputs
// are in DN scale; normalization happens afterwards.

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sslcrop/dataio.hpp"
#include "sslcrop/rng.hpp"

namespace sslcrop::aug {

enum class AugKind {
  Aug1,  ///< two distinct same-class samples, unmodified
  Aug2,  ///< a sample and its drifted or noised copy
  Aug3,  ///< Aug1 pair with a cloud spike at a random step
};

std::string_view aug_name(AugKind kind);
/// Accepts "aug1"/"Aug1" etc.
std::optional<AugKind> aug_from_name(std::string_view name);

struct AugmentationPolicy {
  AugKind kind = AugKind::Aug1;
  /// Peak drift as a share of the band's range.
  double drift_max = 0.1;
  std::size_t drift_points = 2;
  /// Noise standard deviation in normalized units.
  double noise_scale = 0.02;
  double cloud_dn = 7000.0;
  /// DN per normalized unit, used to express noise_scale in DN.
  double normalization_scale = 10000.0;
  /// Aug3: spike both pair elements (true) or only the second.
  bool spike_both = true;

  void validate() const;
  bool needs_labels() const { return kind != AugKind::Aug2; }
};

struct Pair {
  ad::Tensor x1;
  ad::Tensor x2;
};

/// Per-class index over a labeled pool. Holds a reference to `pool`.
class ClassPool {
 public:
  explicit ClassPool(const data::Dataset& pool);

  const data::Dataset& dataset() const { return *pool_; }
  std::span<const std::size_t> members(data::CropClass c) const {
    return by_class_[data::class_slot(c)];
  }

 private:
  const data::Dataset* pool_;
  std::array<std::vector<std::size_t>, data::kNumClasses> by_class_;
};

/// Two distinct samples of class `c`, uniform without replacement.
Pair aug1_pair(const ClassPool& pool, data::CropClass c, Rng& rng);

/// Drift or noise with equal probability.
ad::Tensor aug2(const ad::Tensor& x, const AugmentationPolicy& policy, Rng& rng);

/// Per band, adds a piecewise-linear offset through one zero anchor at step 0
/// and `drift_points` uniform(-1, 1) anchors evenly spaced up to the last step,
/// scaled so its peak magnitude is drift_max times the band's range.
ad::Tensor apply_drift(const ad::Tensor& x, const AugmentationPolicy& policy, Rng& rng);

/// Adds i.i.d. Gaussian noise with sd noise_scale * normalization_scale.
ad::Tensor apply_noise(const ad::Tensor& x, const AugmentationPolicy& policy, Rng& rng);

/// Adds `dn` to every band at time step `step`.
ad::Tensor spike_step(const ad::Tensor& x, std::size_t step, double dn);

/// Aug1 pair, then a cloud spike at an independent uniform step per element.
Pair aug3_pair(const ClassPool& pool, data::CropClass c, const AugmentationPolicy& policy,
               Rng& rng);

}  // namespace sslcrop::aug
