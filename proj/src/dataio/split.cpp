#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "sslcrop/dataio.hpp"
#include "sslcrop/error.hpp"
#include "sslcrop/rng.hpp"

namespace sslcrop::data {
namespace {

// floor with slack so that e.g. 0.05 * 100 lands on 5, not 4.
std::size_t floor_count(double x) {
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}

void require_class_present(const std::map<std::size_t, std::vector<std::size_t>>& strata,
                           std::string_view context) {
  for (CropClass c : kAllClasses) {
    const auto it = strata.find(class_slot(c));
    if (it == strata.end() || it->second.empty()) {
      throw ContractError(std::string(context) + ": class c" + std::to_string(class_index(c)) +
                          " (" + std::string(class_name(c)) + ") has no samples to stratify");
    }
  }
}

Split assemble(const Dataset& d, const std::vector<bool>& in_train,
               const std::vector<bool>& in_test) {
  Split split{empty_like(d), empty_like(d), {}};
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    if (in_train[i]) split.train.samples.push_back(d.samples[i]);
    if (in_test[i]) split.test.samples.push_back(d.samples[i]);
  }
  return split;
}

Split split_e1(const Dataset& d, const ScenarioSpec& spec) {
  std::map<std::size_t, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    const std::size_t key = spec.e1_stratification == Stratification::ByClass
                                ? class_slot(*s.label)
                                : static_cast<std::size_t>(s.year);
    strata[key].push_back(i);
  }
  if (spec.e1_stratification == Stratification::ByClass) require_class_present(strata, "E1 split");

  // Largest-remainder apportionment of floor(fraction * N) training slots.
  const std::size_t total_train = floor_count(spec.train_fraction * static_cast<double>(d.size()));
  std::vector<std::pair<std::size_t, std::size_t>> quota;  // stratum key, count
  std::vector<std::tuple<double, std::size_t, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (const auto& [key, members] : strata) {
    const double exact = spec.train_fraction * static_cast<double>(members.size());
    const std::size_t base = floor_count(exact);
    quota.emplace_back(key, base);
    assigned += base;
    remainders.emplace_back(exact - static_cast<double>(base), key, quota.size() - 1);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return std::get<0>(a) > std::get<0>(b);
  });
  for (std::size_t i = 0; assigned < total_train && i < remainders.size(); ++i, ++assigned) {
    ++quota[std::get<2>(remainders[i])].second;
  }

  Rng rng(spec.seed);
  std::vector<bool> in_train(d.size(), false), in_test(d.size(), true);
  for (const auto& [key, count] : quota) {
    std::vector<std::size_t> members = strata.at(key);
    rng.shuffle(std::span(members));
    for (std::size_t k = 0; k < count; ++k) {
      in_train[members[k]] = true;
      in_test[members[k]] = false;
    }
  }
  return assemble(d, in_train, in_test);
}

Split split_cross_year(const Dataset& d, const ScenarioSpec& spec) {
  std::vector<bool> in_train(d.size()), in_test(d.size());
  std::map<std::size_t, std::vector<std::size_t>> target_by_class;
  bool any_source = false;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    const bool target = s.year == spec.target_year;
    in_train[i] = !target;
    in_test[i] = target;
    any_source = any_source || !target;
    if (target) target_by_class[class_slot(*s.label)].push_back(i);
  }
  if (target_by_class.empty() || !any_source) {
    throw ContractError("scenario " + std::string(scenario_name(spec.kind)) +
                        " needs samples from target year " + std::to_string(spec.target_year) +
                        " and from at least one other year");
  }

  std::vector<std::string> moved;
  if (spec.target_label_fraction > 0.0) {
    require_class_present(target_by_class, "target-year split");
    Rng rng(spec.seed);
    for (auto& [slot, members] : target_by_class) {
      const std::size_t k = std::max<std::size_t>(
          1, floor_count(spec.target_label_fraction * static_cast<double>(members.size())));
      rng.shuffle(std::span(members));
      std::vector<std::size_t> chosen(members.begin(),
                                      members.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(chosen.begin(), chosen.end());
      for (std::size_t i : chosen) {
        in_train[i] = true;
        in_test[i] = false;
        moved.push_back(d.samples[i].field_id);
      }
    }
  }
  Split split = assemble(d, in_train, in_test);
  split.target_labeled_ids = std::move(moved);
  return split;
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::E1: return "E1";
    case Scenario::E2: return "E2";
    case Scenario::E3: return "E3";
    case Scenario::E4: return "E4";
  }
  throw ContractError("invalid scenario");
}

std::optional<Scenario> scenario_from_name(std::string_view name) {
  for (Scenario s : {Scenario::E1, Scenario::E2, Scenario::E3, Scenario::E4}) {
    const auto canonical = scenario_name(s);
    if (name.size() == 2 && std::tolower(name[0]) == 'e' && name[1] == canonical[1]) return s;
  }
  return std::nullopt;
}

ScenarioSpec ScenarioSpec::standard(Scenario kind, int target_year, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.kind = kind;
  spec.target_year = target_year;
  spec.seed = seed;
  switch (kind) {
    case Scenario::E1:
    case Scenario::E2: spec.target_label_fraction = 0.0; break;
    case Scenario::E3: spec.target_label_fraction = 0.05; break;
    case Scenario::E4: spec.target_label_fraction = 0.10; break;
  }
  return spec;
}

Split make_split(const Dataset& d, const ScenarioSpec& spec) {
  for (const Sample& s : d.samples) {
    if (!s.label) throw ContractError("make_split: sample " + s.field_id + " is unlabeled");
  }
  if (d.empty()) throw ContractError("make_split: empty dataset");
  if (spec.kind == Scenario::E1) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
      throw ContractError("make_split: train_fraction must lie in (0, 1)");
    }
    return split_e1(d, spec);
  }
  if (spec.target_label_fraction < 0.0 || spec.target_label_fraction >= 1.0) {
    throw ContractError("make_split: target_label_fraction must lie in [0, 1)");
  }
  return split_cross_year(d, spec);
}

}  // namespace sslcrop::data
