#include <algorithm>
#include <set>

#include "sslcrop/dataio.hpp"
#include "sslcrop/error.hpp"

namespace sslcrop::data {

std::vector<double> biweekly_grid(std::size_t steps, double spacing_days) {
  std::vector<double> grid(steps);
  for (std::size_t i = 0; i < steps; ++i) grid[i] = spacing_days * static_cast<double>(i);
  return grid;
}

ad::Tensor resample_biweekly(std::span<const BandObservations> bands,
                             std::span<const double> grid) {
  if (bands.empty() || grid.empty()) throw ContractError("resample needs bands and grid points");
  ad::Tensor out({bands.size(), grid.size()});
  for (std::size_t b = 0; b < bands.size(); ++b) {
    const auto& obs = bands[b].observations;
    if (obs.size() < 2) {
      throw InsufficientDataError("band " + bands[b].band + " has " +
                                  std::to_string(obs.size()) + " observation(s), need 2");
    }
    for (std::size_t i = 1; i < obs.size(); ++i) {
      if (!(obs[i].day > obs[i - 1].day)) {
        throw ContractError("band " + bands[b].band + ": day offsets must strictly increase");
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double t = grid[g];
      double v;
      if (t <= obs.front().day) {
        v = obs.front().value;
      } else if (t >= obs.back().day) {
        v = obs.back().value;
      } else {
        const auto hi = std::upper_bound(obs.begin(), obs.end(), t,
                                         [](double day, const Observation& o) { return day < o.day; });
        const auto lo = hi - 1;
        const double w = (t - lo->day) / (hi->day - lo->day);
        v = lo->value + w * (hi->value - lo->value);
      }
      out.at(b, g) = v;
    }
  }
  return out;
}

Dataset select_bands(const Dataset& d, std::span<const std::string> keep) {
  if (keep.empty()) throw ContractError("select_bands: keep set is empty");
  std::set<std::string> wanted;
  for (const auto& band : keep) {
    if (std::find(d.band_ids.begin(), d.band_ids.end(), band) == d.band_ids.end()) {
      throw ContractError("select_bands: band " + band + " is not in the dataset");
    }
    wanted.insert(band);
  }

  std::vector<std::size_t> rows;
  Dataset out = empty_like(d);
  out.band_ids.clear();
  for (std::size_t i = 0; i < d.band_ids.size(); ++i) {
    if (wanted.contains(d.band_ids[i])) {
      rows.push_back(i);
      out.band_ids.push_back(d.band_ids[i]);
    }
  }
  out.samples.reserve(d.samples.size());
  for (const Sample& s : d.samples) {
    Sample t{s.field_id, s.year, s.label, ad::Tensor({rows.size(), d.n_steps})};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(s.reflectance.row(rows[r]).begin(), d.n_steps, t.reflectance.row(r).begin());
    }
    out.samples.push_back(std::move(t));
  }
  return out;
}

Dataset truncate_steps(const Dataset& d, std::size_t drop_leading) {
  if (drop_leading >= d.n_steps) {
    throw ContractError("truncate_steps: cannot drop " + std::to_string(drop_leading) +
                        " of " + std::to_string(d.n_steps) + " steps");
  }
  Dataset out = empty_like(d);
  out.n_steps = d.n_steps - drop_leading;
  out.step_origin_index = d.step_origin_index + drop_leading;
  out.samples.reserve(d.samples.size());
  for (const Sample& s : d.samples) {
    Sample t{s.field_id, s.year, s.label, ad::Tensor({d.band_ids.size(), out.n_steps})};
    for (std::size_t b = 0; b < d.band_ids.size(); ++b) {
      auto src = s.reflectance.row(b);
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(drop_leading), src.end(),
                t.reflectance.row(b).begin());
    }
    out.samples.push_back(std::move(t));
  }
  return out;
}

ConstantFilterResult drop_constant_series(const Dataset& d) {
  ConstantFilterResult result{empty_like(d), {}};
  for (const Sample& s : d.samples) {
    bool all_flat = true;
    for (std::size_t b = 0; b < s.reflectance.rows() && all_flat; ++b) {
      const auto row = s.reflectance.row(b);
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      all_flat = (*hi - *lo) == 0.0;
    }
    if (all_flat) {
      result.removed_ids.push_back(s.field_id);
    } else {
      result.kept.samples.push_back(s);
    }
  }
  return result;
}

namespace {

Dataset rescale(const Dataset& d, double factor) {
  Dataset out = d;
  for (Sample& s : out.samples) {
    for (double& v : s.reflectance.values()) v *= factor;
  }
  return out;
}

}  // namespace

Dataset normalize(const Dataset& d, double scale) {
  if (!(scale > 0.0)) throw ContractError("normalize: scale must be positive");
  Dataset out = d;
  for (Sample& s : out.samples) {
    for (double& v : s.reflectance.values()) v /= scale;
  }
  return out;
}

Dataset denormalize(const Dataset& d, double scale) {
  if (!(scale > 0.0)) throw ContractError("denormalize: scale must be positive");
  return rescale(d, scale);
}

}  // namespace sslcrop::data
