#include <doctest.h>

#include <cmath>
#include <map>

#include "sslcrop/error.hpp"
#include "sslcrop/forest.hpp"
#include "sslcrop/synthgen.hpp"

using namespace sslcrop;
using data::CropClass;

namespace {

synth::SynthConfig quiet_config() {
  synth::SynthConfig cfg;
  cfg.n_per_class_per_year = 4;
  cfg.noise_sd = 0.0;
  cfg.cloud_prob = 0.0;
  cfg.timing_jitter_sd = 0.0;
  cfg.amplitude_jitter_sd = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("default profiles are complete and valid") {
  const auto profiles = synth::default_profiles();
  CHECK(profiles.size() == data::kNumClasses);
  for (const auto& [c, p] : profiles) CHECK(p.bands.size() == 13);
  CHECK_NOTHROW(synth::validate(profiles));
}

TEST_CASE("double logistic curve") {
  const synth::BandCurve c{.baseline = 100, .amplitude = 1000, .green_up = 4, .senescence = 10,
                           .slope_up = 2, .slope_down = 2};
  const auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  CHECK(c.at(7.0) == doctest::Approx(100.0 + 1000.0 * (logistic(6.0) - logistic(-6.0))));
  CHECK(c.at(-20.0) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(c.at(4.0) == doctest::Approx(100.0 + 1000.0 * (0.5 - 1.0 / (1.0 + std::exp(12.0)))));
}

TEST_CASE("shape and balance") {
  synth::SynthConfig cfg;
  cfg.n_per_class_per_year = 7;
  const auto d = synth::generate(cfg);
  CHECK(d.size() == 7 * 6 * 3);
  CHECK(d.n_bands() == 13);
  CHECK(d.n_steps == 14);
  std::map<std::pair<int, CropClass>, int> counts;
  for (const auto& s : d.samples) {
    CHECK(s.reflectance.shape() == ad::Shape{13, 14});
    ++counts[{s.year, *s.label}];
  }
  CHECK(counts.size() == 18);
  for (const auto& [k, n] : counts) CHECK(n == 7);
}

TEST_CASE("zero randomness gives identical samples within a class and year") {
  const auto d = synth::generate(quiet_config());
  for (std::size_t i = 1; i < d.size(); ++i) {
    const auto& a = d.samples[i - 1];
    const auto& b = d.samples[i];
    if (a.year == b.year && a.label == b.label) CHECK(a.reflectance == b.reflectance);
  }
}

TEST_CASE("cloud probability 1 adds exactly cloud_dn everywhere") {
  auto cfg = quiet_config();
  const auto clear = synth::generate(cfg);
  cfg.cloud_prob = 1.0;
  const auto cloudy = synth::generate(cfg);
  REQUIRE(clear.size() == cloudy.size());
  for (std::size_t i = 0; i < clear.size(); ++i) {
    const auto a = clear.samples[i].reflectance.values();
    const auto b = cloudy.samples[i].reflectance.values();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] - a[k] == doctest::Approx(7000.0).epsilon(1e-12));
  }
}

TEST_CASE("values are clamped at zero") {
  synth::SynthConfig cfg;
  cfg.n_per_class_per_year = 5;
  cfg.noise_sd = 5000.0;
  cfg.cloud_prob = 0.0;
  const auto d = synth::generate(cfg);
  bool saw_zero = false;
  for (const auto& s : d.samples) {
    for (double v : s.reflectance.values()) {
      CHECK(v >= 0.0);
      saw_zero = saw_zero || v == 0.0;
    }
  }
  CHECK(saw_zero);
}

TEST_CASE("determinism and seed sensitivity") {
  synth::SynthConfig cfg;
  cfg.n_per_class_per_year = 3;
  cfg.seed = 17;
  const auto a = synth::generate(cfg);
  const auto b = synth::generate(cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].field_id == b.samples[i].field_id);
    CHECK(a.samples[i].reflectance == b.samples[i].reflectance);
  }
  cfg.seed = 18;
  const auto c = synth::generate(cfg);
  CHECK_FALSE(a.samples[0].reflectance == c.samples[0].reflectance);
}

TEST_CASE("band subset matches the full generation") {
  synth::SynthConfig cfg;
  cfg.n_per_class_per_year = 2;
  const auto full = synth::generate(cfg);
  cfg.bands = {"B04", "B08"};
  const auto sub = synth::generate(cfg);
  CHECK(sub.n_bands() == 2);
  CHECK(sub.size() == full.size());
}

TEST_CASE("missing class profile is rejected") {
  auto profiles = synth::default_profiles();
  profiles.erase(CropClass::SugarBeet);
  CHECK_THROWS_WITH_AS(synth::generate(quiet_config(), profiles),
                       doctest::Contains("sugar beet"), ContractError);
}

TEST_CASE("forest trained on two years classifies the non-divergent third") {
  synth::SynthConfig cfg;
  cfg.seed = 4;
  const auto d = synth::generate(cfg);
  data::Dataset train = data::empty_like(d), test = data::empty_like(d);
  for (const auto& s : d.samples) (s.year == 2017 ? test : train).samples.push_back(s);
  rf::ForestConfig fc;
  fc.n_trees = 100;
  fc.seed = 1;
  const auto forest = rf::rf_fit(train, fc);
  const auto pred = rf::rf_predict(forest, test);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == *test.samples[i].label;
  const double oa = static_cast<double>(hits) / static_cast<double>(pred.size());
  MESSAGE("2016+2018 -> 2017 OA " << oa);
  CHECK(oa >= 0.9);
}
