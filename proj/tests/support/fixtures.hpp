#pragma once

#include <string>

#include "sslcrop/dataio.hpp"
#include "sslcrop/rng.hpp"

namespace sslcrop::testing {

/// Dataset over all 13 bands with `steps` steps and no samples.
inline data::Dataset blank_dataset(std::size_t steps = 14) {
  data::Dataset d;
  d.band_ids = data::all_bands();
  d.n_steps = steps;
  return d;
}

/// Sample with uniform random DNs in [lo, hi).
inline data::Sample random_sample(const data::Dataset& like, std::string id, int year,
                                  std::optional<data::CropClass> label, Rng& rng,
                                  double lo = 0.0, double hi = 5000.0) {
  data::Sample s{std::move(id), year, label, ad::Tensor({like.n_bands(), like.n_steps})};
  for (double& v : s.reflectance.values()) v = rng.uniform(lo, hi);
  return s;
}

/// `per_year[y]` labeled samples per listed year, classes assigned round-robin.
inline data::Dataset labeled_dataset(const std::vector<std::pair<int, std::size_t>>& per_year,
                                     std::uint64_t seed = 1, std::size_t steps = 14) {
  Rng rng(seed);
  data::Dataset d = blank_dataset(steps);
  for (const auto& [year, count] : per_year) {
    for (std::size_t i = 0; i < count; ++i) {
      const auto label = data::class_from_slot(i % data::kNumClasses);
      d.samples.push_back(random_sample(
          d, "f" + std::to_string(year) + "-" + std::to_string(i), year, label, rng));
    }
  }
  return d;
}

}  // namespace sslcrop::testing
