#include "sslcrop/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sslcrop/error.hpp"
#include "sslcrop/rng.hpp"

namespace sslcrop::synth {
namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ClassShape {
  data::CropClass crop;
  double green_up, senescence, slope_up, slope_down;
  double nir_amp, red_edge_amp, visible_amp, swir_amp;
};

// Season timing on the 14-step Feb..Aug grid. Winter crops are already
// established in February and senesce in early/mid summer; summer crops
// emerge in May/June.
constexpr ClassShape kShapes[] = {
    {data::CropClass::Corn, 8.0, 15.0, 1.2, 1.0, 3000, 900, 250, 300},
    {data::CropClass::WinterBarley, 2.5, 9.0, 1.1, 1.3, 2600, 800, 200, 450},
    {data::CropClass::WinterRapeseed, 2.0, 8.5, 1.0, 1.0, 2800, 1000, 700, 350},
    {data::CropClass::SugarBeet, 6.5, 16.0, 1.0, 1.0, 3500, 1100, 200, 250},
    {data::CropClass::WinterWheat, 3.0, 10.0, 1.1, 1.3, 2800, 850, 220, 500},
    {data::CropClass::Potato, 6.0, 11.5, 1.4, 1.2, 3200, 950, 300, 400},
};

BandCurve curve_for(const ClassShape& s, std::string_view band) {
  BandCurve c{0.0, 0.0, s.green_up, s.senescence, s.slope_up, s.slope_down};
  if (band == "B01") {
    c.baseline = 1500, c.amplitude = 0.05 * s.visible_amp;
  } else if (band == "B09") {
    c.baseline = 800, c.amplitude = 0.03 * s.nir_amp;
  } else if (band == "B10") {
    c.baseline = 20, c.amplitude = 2;
  } else if (band == "B02") {
    c.baseline = 1100, c.amplitude = 0.6 * s.visible_amp;
  } else if (band == "B03") {
    c.baseline = 1000, c.amplitude = s.visible_amp;
  } else if (band == "B04") {
    c.baseline = 900, c.amplitude = 0.8 * s.visible_amp;
  } else if (band == "B05") {
    c.baseline = 1300, c.amplitude = s.red_edge_amp;
  } else if (band == "B06") {
    c.baseline = 1500, c.amplitude = 0.75 * s.nir_amp;
  } else if (band == "B07") {
    c.baseline = 1600, c.amplitude = 0.9 * s.nir_amp;
  } else if (band == "B08") {
    c.baseline = 1700, c.amplitude = s.nir_amp;
  } else if (band == "B8A") {
    c.baseline = 1750, c.amplitude = 1.02 * s.nir_amp;
  } else if (band == "B11") {
    c.baseline = 2200, c.amplitude = s.swir_amp;
  } else if (band == "B12") {
    c.baseline = 1500, c.amplitude = 0.7 * s.swir_amp;
  } else {
    throw ContractError("no default curve for band " + std::string(band));
  }
  return c;
}

}  // namespace

double BandCurve::at(double step) const {
  return baseline + amplitude * (logistic(slope_up * (step - green_up)) -
                                 logistic(slope_down * (step - senescence)));
}

ProfileSet default_profiles() {
  ProfileSet profiles;
  for (const ClassShape& s : kShapes) {
    PhenologyProfile p;
    for (auto band : data::kCanonicalBands) p.bands.emplace(std::string(band), curve_for(s, band));
    profiles.emplace(s.crop, std::move(p));
  }
  return profiles;
}

void validate(const ProfileSet& profiles) {
  for (const auto& [crop, profile] : profiles) {
    for (const auto& [band, c] : profile.bands) {
      if (c.baseline < 0.0 || c.amplitude < 0.0 || !(c.green_up < c.senescence)) {
        throw ContractError("invalid curve for " + std::string(data::class_name(crop)) + "/" +
                            band);
      }
    }
  }
}

void SynthConfig::validate() const {
  if (n_per_class_per_year < 1) throw ContractError("n_per_class_per_year must be >= 1");
  if (years.empty()) throw ContractError("synth needs at least one year");
  if (cloud_prob < 0.0 || cloud_prob > 1.0) throw ContractError("cloud_prob must lie in [0, 1]");
  if (noise_sd < 0.0 || timing_jitter_sd < 0.0 || amplitude_jitter_sd < 0.0) {
    throw ContractError("noise and jitter must be non-negative");
  }
  if (amplitude_scale < 0.0) throw ContractError("amplitude_scale must be non-negative");
  if (n_steps == 0) throw ContractError("n_steps must be positive");
  data::Dataset probe;
  probe.band_ids = bands;
  probe.n_steps = n_steps;
  probe.validate();
}

data::Dataset generate(const SynthConfig& cfg, const ProfileSet& profiles) {
  cfg.validate();
  validate(profiles);
  for (data::CropClass c : data::kAllClasses) {
    const auto it = profiles.find(c);
    if (it == profiles.end()) {
      throw ContractError("missing profile for " + std::string(data::class_name(c)));
    }
    for (const auto& band : cfg.bands) {
      if (!it->second.bands.contains(band)) {
        throw ContractError("profile for " + std::string(data::class_name(c)) +
                            " lacks band " + band);
      }
    }
  }

  data::Dataset d;
  d.band_ids = cfg.bands;
  d.n_steps = cfg.n_steps;
  const std::size_t n_bands = cfg.bands.size();
  std::uint64_t serial = 0;
  for (int year : cfg.years) {
    const bool divergent = cfg.divergent_year && *cfg.divergent_year == year;
    for (data::CropClass crop : data::kAllClasses) {
      const PhenologyProfile& profile = profiles.at(crop);
      for (std::size_t i = 0; i < cfg.n_per_class_per_year; ++i, ++serial) {
        Rng rng(derive_seed(cfg.seed, "synth-sample", serial));
        // Fixed draw order so that zeroing one knob leaves the others' draws alone.
        const double dt_up = cfg.timing_jitter_sd * rng.normal();
        const double dt_down = cfg.timing_jitter_sd * rng.normal();
        const double amp = std::max(0.0, 1.0 + cfg.amplitude_jitter_sd * rng.normal());
        const double shift = divergent ? cfg.shift_steps : 0.0;
        const double amp_scale = divergent ? cfg.amplitude_scale : 1.0;

        ad::Tensor m({n_bands, cfg.n_steps});
        for (std::size_t b = 0; b < n_bands; ++b) {
          BandCurve c = profile.bands.at(cfg.bands[b]);
          c.green_up += dt_up + shift;
          c.senescence += dt_down + shift;
          c.amplitude *= amp * amp_scale;
          for (std::size_t t = 0; t < cfg.n_steps; ++t) {
            const double v = c.at(static_cast<double>(t)) + cfg.noise_sd * rng.normal();
            m.at(b, t) = std::max(0.0, v);
          }
        }
        for (std::size_t t = 0; t < cfg.n_steps; ++t) {
          if (rng.uniform() < cfg.cloud_prob) {
            for (std::size_t b = 0; b < n_bands; ++b) m.at(b, t) += cfg.cloud_dn;
          }
        }

        char id[64];
        std::snprintf(id, sizeof id, "syn-%d-c%d-%04zu", year, data::class_index(crop), i);
        d.samples.push_back({id, year, crop, std::move(m)});
      }
    }
  }
  return d;
}

}  // namespace sslcrop::synth
