#include <cmath>
#include <set>

#include "sslcrop/dataio.hpp"
#include "sslcrop/error.hpp"

namespace sslcrop::data {

std::string_view class_name(CropClass c) {
  switch (c) {
    case CropClass::Corn: return "corn";
    case CropClass::WinterBarley: return "winter barley";
    case CropClass::WinterRapeseed: return "winter rapeseed";
    case CropClass::SugarBeet: return "sugar beet";
    case CropClass::WinterWheat: return "winter wheat";
    case CropClass::Potato: return "potato";
  }
  throw ContractError("invalid crop class");
}

std::optional<CropClass> class_from_name(std::string_view name) {
  for (CropClass c : kAllClasses) {
    if (class_name(c) == name) return c;
  }
  return std::nullopt;
}

CropClass class_from_slot(std::size_t slot) {
  if (slot >= kNumClasses) throw ContractError("class slot out of range: " + std::to_string(slot));
  return kAllClasses[slot];
}

std::vector<std::string> all_bands() {
  return {kCanonicalBands.begin(), kCanonicalBands.end()};
}

std::optional<std::size_t> band_position(std::string_view band) {
  for (std::size_t i = 0; i < kCanonicalBands.size(); ++i) {
    if (kCanonicalBands[i] == band) return i;
  }
  return std::nullopt;
}

void Dataset::validate() const {
  if (band_ids.empty()) throw ContractError("dataset has no bands");
  std::set<std::string> seen;
  std::size_t last = 0;
  for (std::size_t i = 0; i < band_ids.size(); ++i) {
    const auto pos = band_position(band_ids[i]);
    if (!pos) throw ContractError("unknown band id " + band_ids[i]);
    if (!seen.insert(band_ids[i]).second) throw ContractError("duplicate band id " + band_ids[i]);
    if (i > 0 && *pos <= last) throw ContractError("band ids out of canonical order");
    last = *pos;
  }
  if (n_steps == 0) throw ContractError("dataset has no time steps");
  for (const Sample& s : samples) {
    const auto& shape = s.reflectance.shape();
    if (shape != ad::Shape{band_ids.size(), n_steps}) {
      throw ContractError("sample " + s.field_id + " has shape " + ad::shape_string(shape) +
                          ", dataset expects [" + std::to_string(band_ids.size()) + "x" +
                          std::to_string(n_steps) + "]");
    }
    for (double v : s.reflectance.values()) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ContractError("sample " + s.field_id + " has a negative or non-finite value");
      }
    }
  }
}

Dataset empty_like(const Dataset& d) {
  Dataset out;
  out.band_ids = d.band_ids;
  out.n_steps = d.n_steps;
  out.step_origin_index = d.step_origin_index;
  return out;
}

}  // namespace sslcrop::data
