#include "sslcrop/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "sslcrop/error.hpp"

namespace sslcrop::aug {

std::string_view aug_name(AugKind kind) {
  switch (kind) {
    case AugKind::Aug1: return "Aug1";
    case AugKind::Aug2: return "Aug2";
    case AugKind::Aug3: return "Aug3";
  }
  throw ContractError("invalid augmentation kind");
}

std::optional<AugKind> aug_from_name(std::string_view name) {
  if (name.size() != 4) return std::nullopt;
  std::string lower;
  for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "aug1") return AugKind::Aug1;
  if (lower == "aug2") return AugKind::Aug2;
  if (lower == "aug3") return AugKind::Aug3;
  return std::nullopt;
}

void AugmentationPolicy::validate() const {
  if (drift_max < 0.0 || noise_scale < 0.0 || cloud_dn < 0.0) {
    throw ContractError("augmentation parameters must be non-negative");
  }
  if (drift_points < 1) throw ContractError("drift_points must be >= 1");
  if (!(normalization_scale > 0.0)) throw ContractError("normalization_scale must be positive");
}

ClassPool::ClassPool(const data::Dataset& pool) : pool_(&pool) {
  for (std::size_t i = 0; i < pool.samples.size(); ++i) {
    const auto& label = pool.samples[i].label;
    if (!label) {
      throw ContractError("same-class pairing needs a labeled pool; sample " +
                          pool.samples[i].field_id + " is unlabeled");
    }
    by_class_[data::class_slot(*label)].push_back(i);
  }
}

Pair aug1_pair(const ClassPool& pool, data::CropClass c, Rng& rng) {
  const auto members = pool.members(c);
  if (members.size() < 2) {
    throw InsufficientDataError("class " + std::string(data::class_name(c)) + " has " +
                                std::to_string(members.size()) +
                                " sample(s); a pair needs 2");
  }
  const std::size_t i = rng.below(members.size());
  std::size_t j = rng.below(members.size() - 1);
  if (j >= i) ++j;
  const auto& samples = pool.dataset().samples;
  return {samples[members[i]].reflectance, samples[members[j]].reflectance};
}

ad::Tensor apply_drift(const ad::Tensor& x, const AugmentationPolicy& policy, Rng& rng) {
  ad::Tensor out = x;
  const std::size_t steps = x.cols();
  const std::size_t anchors = policy.drift_points;
  std::vector<double> anchor_values(anchors + 1, 0.0);
  std::vector<double> curve(steps);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    for (std::size_t k = 1; k <= anchors; ++k) anchor_values[k] = rng.uniform(-1.0, 1.0);
    if (steps < 2) continue;

    const double spacing = static_cast<double>(steps - 1) / static_cast<double>(anchors);
    double peak = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const double pos = static_cast<double>(t) / spacing;
      const std::size_t k = std::min(static_cast<std::size_t>(pos), anchors - 1);
      const double w = pos - static_cast<double>(k);
      curve[t] = (1.0 - w) * anchor_values[k] + w * anchor_values[k + 1];
      peak = std::max(peak, std::abs(curve[t]));
    }

    const auto row = x.row(b);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double target = policy.drift_max * (*hi - *lo);
    if (peak == 0.0 || target == 0.0) continue;
    auto dst = out.row(b);
    for (std::size_t t = 0; t < steps; ++t) dst[t] += curve[t] * (target / peak);
  }
  return out;
}

ad::Tensor apply_noise(const ad::Tensor& x, const AugmentationPolicy& policy, Rng& rng) {
  ad::Tensor out = x;
  const double sd = policy.noise_scale * policy.normalization_scale;
  for (double& v : out.values()) v += sd * rng.normal();
  return out;
}

ad::Tensor aug2(const ad::Tensor& x, const AugmentationPolicy& policy, Rng& rng) {
  return rng.uniform() < 0.5 ? apply_drift(x, policy, rng) : apply_noise(x, policy, rng);
}

ad::Tensor spike_step(const ad::Tensor& x, std::size_t step, double dn) {
  if (step >= x.cols()) throw ContractError("spike step out of range");
  ad::Tensor out = x;
  for (std::size_t b = 0; b < out.rows(); ++b) out.at(b, step) += dn;
  return out;
}

Pair aug3_pair(const ClassPool& pool, data::CropClass c, const AugmentationPolicy& policy,
               Rng& rng) {
  Pair p = aug1_pair(pool, c, rng);
  const std::size_t steps = p.x1.cols();
  const std::size_t s1 = rng.below(steps);
  const std::size_t s2 = rng.below(steps);
  if (policy.spike_both) p.x1 = spike_step(p.x1, s1, policy.cloud_dn);
  p.x2 = spike_step(p.x2, s2, policy.cloud_dn);
  return p;
}

}  // namespace sslcrop::aug
