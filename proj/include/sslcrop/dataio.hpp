#pragma once

// Field-level crop time series: the dataset model, the wide CSV format, and
// the preprocessing chain applied before any learner sees the data.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslcrop/tensor.hpp"

namespace sslcrop::data {

/// Fixed 1-based class indices. c2 and c5 are barley and wheat; the rest of
/// the mapping is ours and is written into every report.
enum class CropClass : std::uint8_t {
  Corn = 1,
  WinterBarley = 2,
  WinterRapeseed = 3,
  SugarBeet = 4,
  WinterWheat = 5,
  Potato = 6,
};

inline constexpr std::size_t kNumClasses = 6;

inline constexpr std::array<CropClass, kNumClasses> kAllClasses = {
    CropClass::Corn,      CropClass::WinterBarley, CropClass::WinterRapeseed,
    CropClass::SugarBeet, CropClass::WinterWheat,  CropClass::Potato};

std::string_view class_name(CropClass c);
std::optional<CropClass> class_from_name(std::string_view name);

/// 1..6
inline int class_index(CropClass c) { return static_cast<int>(c); }
/// 0..5, for array indexing.
inline std::size_t class_slot(CropClass c) { return static_cast<std::size_t>(c) - 1; }
CropClass class_from_slot(std::size_t slot);

/// Sentinel-2 band ids in canonical order.
inline constexpr std::array<std::string_view, 13> kCanonicalBands = {
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B10", "B11", "B12"};

std::vector<std::string> all_bands();
/// Position in kCanonicalBands, or nullopt for an unknown id.
std::optional<std::size_t> band_position(std::string_view band);

/// One field-year.
struct Sample {
  std::string field_id;
  int year = 0;
  std::optional<CropClass> label;
  /// [n_bands x n_steps] digital numbers.
  ad::Tensor reflectance;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> band_ids;
  std::size_t n_steps = 0;
  /// Index of the first retained step on the original 14-step grid.
  std::size_t step_origin_index = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t n_bands() const { return band_ids.size(); }

  /// Throws ContractError if any invariant is broken.
  void validate() const;
};

// --- CSV --------------------------------------------------------------------

/// Wide format: `field_id,year,label,<BAND>_t<KK>,...`, one row per sample.
Dataset read_csv(std::istream& in);
Dataset load_csv(const std::filesystem::path& path);
void write_csv(const Dataset& d, std::ostream& out);
void save_csv(const Dataset& d, const std::filesystem::path& path);

// --- Resampling -------------------------------------------------------------

struct Observation {
  double day = 0.0;
  double value = 0.0;
};

struct BandObservations {
  std::string band;
  std::vector<Observation> observations;
};

/// Evenly spaced day offsets; the default is the 14-point biweekly grid.
std::vector<double> biweekly_grid(std::size_t steps = 14, double spacing_days = 14.0);

/// Linear interpolation of irregular observations onto `grid`, holding the
/// nearest observed value outside the observed range. Returns
/// [bands x grid.size()].
ad::Tensor resample_biweekly(std::span<const BandObservations> bands,
                             std::span<const double> grid);

// --- Preprocessing ------------------------------------------------------------

Dataset select_bands(const Dataset& d, std::span<const std::string> keep);
Dataset truncate_steps(const Dataset& d, std::size_t drop_leading);

struct ConstantFilterResult {
  Dataset kept;
  std::vector<std::string> removed_ids;
};

/// Drops samples whose every band is flat over time.
ConstantFilterResult drop_constant_series(const Dataset& d);

Dataset normalize(const Dataset& d, double scale = 10000.0);
Dataset denormalize(const Dataset& d, double scale = 10000.0);

// --- Scenarios ----------------------------------------------------------------

enum class Scenario { E1, E2, E3, E4 };

std::string_view scenario_name(Scenario s);
std::optional<Scenario> scenario_from_name(std::string_view name);

enum class Stratification { ByClass, ByYear };

struct ScenarioSpec {
  Scenario kind = Scenario::E1;
  int target_year = 2018;
  /// E1 train share.
  double train_fraction = 0.75;
  /// Share of target-year samples moved into training (E3/E4).
  double target_label_fraction = 0.0;
  std::uint64_t seed = 0;
  Stratification e1_stratification = Stratification::ByClass;

  /// Spec with the standard target fraction for `kind` (0, 0, 0.05, 0.10).
  static ScenarioSpec standard(Scenario kind, int target_year, std::uint64_t seed);
};

struct Split {
  Dataset train;
  Dataset test;
  std::vector<std::string> target_labeled_ids;
};

/// Scenario split. E1 allocates floor(train_fraction * N) training samples
/// across strata by largest remainder; E3/E4 move floor(fraction * n_c)
/// (at least 1) target-year samples per class into training.
Split make_split(const Dataset& d, const ScenarioSpec& spec);

/// Copy of `d`'s metadata with no samples.
Dataset empty_like(const Dataset& d);

}  // namespace sslcrop::data
