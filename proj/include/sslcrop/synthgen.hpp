#pragma once

// Synthetic multi-year crop phenology. Each band follows a double-logistic
// season curve per class; one optional "divergent" year shifts the season and
// damps the amplitude to emulate a year with an anomalous spectral response.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sslcrop/dataio.hpp"

namespace sslcrop::synth {

/// One band's season curve, in DN and step units:
///   v(t) = baseline + amplitude * (s(slope_up*(t-green_up)) - s(slope_down*(t-senescence)))
/// with s the logistic function.
struct BandCurve {
  double baseline = 0.0;
  double amplitude = 0.0;
  double green_up = 0.0;
  double senescence = 1.0;
  double slope_up = 1.0;
  double slope_down = 1.0;

  double at(double step) const;
};

struct PhenologyProfile {
  std::map<std::string, BandCurve> bands;
};

using ProfileSet = std::map<data::CropClass, PhenologyProfile>;

/// Hand-tuned profiles for all six classes over all 13 bands. Winter barley
/// and winter wheat are deliberately close.
ProfileSet default_profiles();

/// Throws ContractError on a negative baseline/amplitude or green_up >= senescence.
void validate(const ProfileSet& profiles);

struct SynthConfig {
  std::size_t n_per_class_per_year = 50;
  std::vector<int> years{2016, 2017, 2018};
  std::optional<int> divergent_year = 2018;
  double shift_steps = 0.5;
  double amplitude_scale = 0.85;
  double noise_sd = 100.0;
  double cloud_prob = 0.03;
  double cloud_dn = 7000.0;
  /// Per-sample standard deviation of green_up/senescence, in steps.
  double timing_jitter_sd = 0.4;
  /// Per-sample relative standard deviation of the amplitude.
  double amplitude_jitter_sd = 0.08;
  std::vector<std::string> bands = data::all_bands();
  std::size_t n_steps = 14;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class-balanced dataset, samples ordered by year, class, then index.
/// Values are clamped at 0 before cloud spikes are added.
data::Dataset generate(const SynthConfig& cfg, const ProfileSet& profiles = default_profiles());

}  // namespace sslcrop::synth
