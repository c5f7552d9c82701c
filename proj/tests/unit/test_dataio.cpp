#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "sslcrop/dataio.hpp"
#include "sslcrop/error.hpp"
#include "support/fixtures.hpp"

using namespace sslcrop;
using namespace sslcrop::data;

namespace {

std::string header(std::size_t bands, std::size_t steps) {
  std::string h = "field_id,year,label";
  for (std::size_t b = 0; b < bands; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      h += "," + std::string(kCanonicalBands[b]) + "_t" + (t < 10 ? "0" : "") + std::to_string(t);
    }
  }
  return h + "\n";
}

std::string row(const std::string& id, int year, const std::string& label, std::size_t cells,
                double value) {
  std::string r = id + "," + std::to_string(year) + "," + label;
  for (std::size_t i = 0; i < cells; ++i) r += "," + std::to_string(value + static_cast<double>(i));
  return r + "\n";
}

std::set<std::string> ids(const Dataset& d) {
  std::set<std::string> out;
  for (const auto& s : d.samples) out.insert(s.field_id);
  return out;
}

}  // namespace

TEST_CASE("class mapping is a fixed bijection") {
  CHECK(class_index(CropClass::WinterBarley) == 2);
  CHECK(class_index(CropClass::WinterWheat) == 5);
  std::set<std::string_view> names;
  for (CropClass c : kAllClasses) {
    names.insert(class_name(c));
    CHECK(class_from_name(class_name(c)) == c);
    CHECK(class_from_slot(class_slot(c)) == c);
  }
  CHECK(names.size() == 6);
  CHECK_FALSE(class_from_name("rye").has_value());
}

TEST_CASE("load CSV") {
  SUBCASE("three full rows") {
    std::stringstream in;
    in << header(13, 14) << row("a", 2016, "corn", 182, 100) << row("b", 2017, "potato", 182, 50)
       << row("c", 2018, "winter wheat", 182, 7);
    const Dataset d = read_csv(in);
    CHECK(d.size() == 3);
    CHECK(d.n_steps == 14);
    CHECK(d.n_bands() == 13);
    CHECK(d.samples[2].label == CropClass::WinterWheat);
    CHECK(d.samples[0].reflectance.at(0, 1) == 101.0);
    CHECK(d.samples[0].reflectance.at(1, 0) == 114.0);
    CHECK_NOTHROW(d.validate());
  }
  SUBCASE("empty label means unlabeled") {
    std::stringstream in;
    in << header(2, 3) << row("a", 2016, "", 6, 1);
    const Dataset d = read_csv(in);
    CHECK_FALSE(d.samples[0].label.has_value());
  }
  SUBCASE("real dataset yearly counts") {
    std::stringstream in;
    in << header(13, 14);
    const std::pair<int, int> counts[] = {{2016, 558}, {2017, 600}, {2018, 600}};
    for (const auto& [year, n] : counts) {
      for (int i = 0; i < n; ++i) {
        in << row(std::to_string(year) + "-" + std::to_string(i), year,
                  std::string(class_name(class_from_slot(static_cast<std::size_t>(i) % 6))), 182, 1);
      }
    }
    CHECK(read_csv(in).size() == 1758);
  }
  SUBCASE("write then read reproduces the dataset") {
    Rng rng(9);
    Dataset d = testing::labeled_dataset({{2016, 4}, {2017, 3}}, 4, 5);
    d.samples[1].label.reset();
    std::stringstream buf;
    write_csv(d, buf);
    const Dataset back = read_csv(buf);
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(back.samples[i].field_id == d.samples[i].field_id);
      CHECK(back.samples[i].label == d.samples[i].label);
      CHECK(back.samples[i].reflectance == d.samples[i].reflectance);
    }
  }
  SUBCASE("errors carry the row number") {
    std::stringstream bad_header("field_id,year,label,XX_t00\n");
    CHECK_THROWS_AS(read_csv(bad_header), ParseError);

    std::stringstream bad_cell;
    bad_cell << header(1, 2) << "a,2016,corn,1,2\n" << "b,2016,corn,1,zz\n";
    try {
      read_csv(bad_cell);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.row() == 3);
    }

    std::stringstream short_row;
    short_row << header(1, 2) << "a,2016,corn,1\n";
    try {
      read_csv(short_row);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.row() == 2);
    }
  }
}

TEST_CASE("resample_biweekly") {
  const auto grid = biweekly_grid();
  REQUIRE(grid.size() == 14);

  SUBCASE("constant observations") {
    const BandObservations band{"B04", {{3, 420}, {40, 420}, {100, 420}}};
    const auto m = resample_biweekly(std::span(&band, 1), grid);
    for (double v : m.values()) CHECK(v == 420.0);
  }
  SUBCASE("linear midpoint") {
    const BandObservations band{"B08", {{0, 0.0}, {14, 1.0}}};
    const double g[] = {7.0};
    CHECK(resample_biweekly(std::span(&band, 1), g)[0] == 0.5);
  }
  SUBCASE("random piecewise-linear signal against segment oracle") {
    Rng rng(17);
    // Knots define the signal; observations sample it at irregular days.
    std::vector<Observation> knots;
    for (double day = -5; day < 200; day += rng.uniform(3, 20)) knots.push_back({day, rng.uniform(0, 3000)});
    auto signal = [&](double t) {
      for (std::size_t i = 1; i < knots.size(); ++i) {
        if (t <= knots[i].day) {
          const double w = (t - knots[i - 1].day) / (knots[i].day - knots[i - 1].day);
          return knots[i - 1].value * (1 - w) + knots[i].value * w;
        }
      }
      return knots.back().value;
    };
    // Sampling exactly at the knots keeps the observed polyline identical to the signal.
    const BandObservations band{"B05", knots};
    const auto m = resample_biweekly(std::span(&band, 1), grid);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      CHECK(std::abs(m[g] - signal(grid[g])) < 1e-12);
    }
  }
  SUBCASE("edge hold and errors") {
    const BandObservations band{"B02", {{20, 5.0}, {30, 9.0}}};
    const auto m = resample_biweekly(std::span(&band, 1), grid);
    CHECK(m[0] == 5.0);
    CHECK(m[13] == 9.0);

    const BandObservations sparse{"B11", {{20, 5.0}}};
    try {
      resample_biweekly(std::span(&sparse, 1), grid);
      FAIL("expected InsufficientDataError");
    } catch (const InsufficientDataError& e) {
      CHECK(std::string(e.what()).find("B11") != std::string::npos);
    }
    const BandObservations unordered{"B11", {{20, 5.0}, {20, 6.0}}};
    CHECK_THROWS_AS(resample_biweekly(std::span(&unordered, 1), grid), ContractError);
  }
}

TEST_CASE("band selection and truncation") {
  const Dataset d = testing::labeled_dataset({{2016, 6}});

  SUBCASE("removing B01 B02 B03 B10 leaves nine bands") {
    std::vector<std::string> keep;
    for (const auto& b : d.band_ids) {
      if (b != "B01" && b != "B02" && b != "B03" && b != "B10") keep.push_back(b);
    }
    const Dataset r = select_bands(d, keep);
    CHECK(r.band_ids == std::vector<std::string>{"B04", "B05", "B06", "B07", "B08", "B8A", "B09",
                                                 "B11", "B12"});
    CHECK(r.samples[0].reflectance.shape() == ad::Shape{9, 14});
    CHECK_NOTHROW(r.validate());
  }
  SUBCASE("keep all is identity") {
    const Dataset r = select_bands(d, d.band_ids);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(r.samples[i].reflectance == d.samples[i].reflectance);
  }
  SUBCASE("single band row") {
    const std::vector<std::string> keep{"B04"};
    const Dataset r = select_bands(d, keep);
    for (std::size_t i = 0; i < d.size(); ++i) {
      REQUIRE(r.samples[i].reflectance.shape() == ad::Shape{1, 14});
      for (std::size_t t = 0; t < 14; ++t) {
        CHECK(r.samples[i].reflectance.at(0, t) == d.samples[i].reflectance.at(3, t));
      }
    }
  }
  SUBCASE("unknown band") {
    const std::vector<std::string> keep{"B13"};
    CHECK_THROWS_AS(select_bands(d, keep), ContractError);
    CHECK_THROWS_AS(select_bands(d, std::vector<std::string>{}), ContractError);
  }
  SUBCASE("drop three leading steps") {
    const Dataset r = truncate_steps(d, 3);
    CHECK(r.n_steps == 11);
    CHECK(r.step_origin_index == 3);
    CHECK(r.samples[0].reflectance.at(2, 0) == d.samples[0].reflectance.at(2, 3));
  }
  SUBCASE("drop zero and drop all but one") {
    CHECK(truncate_steps(d, 0).samples[1].reflectance == d.samples[1].reflectance);
    const Dataset last = truncate_steps(d, 13);
    for (std::size_t b = 0; b < 13; ++b) {
      CHECK(last.samples[0].reflectance.at(b, 0) == d.samples[0].reflectance.at(b, 13));
    }
    CHECK_THROWS_AS(truncate_steps(d, 14), ContractError);
  }
  SUBCASE("selection and truncation commute") {
    const std::vector<std::string> keep{"B04", "B08", "B12"};
    const Dataset a = truncate_steps(select_bands(d, keep), 3);
    const Dataset b = select_bands(truncate_steps(d, 3), keep);
    CHECK(a.band_ids == b.band_ids);
    CHECK(a.n_steps == b.n_steps);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(a.samples[i].reflectance == b.samples[i].reflectance);
  }
  SUBCASE("operations leave input untouched") {
    const Dataset copy = d;
    (void)normalize(truncate_steps(select_bands(d, std::vector<std::string>{"B05"}), 2));
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(copy.samples[i].reflectance == d.samples[i].reflectance);
  }
}

TEST_CASE("drop_constant_series") {
  Rng rng(4);
  Dataset d = testing::blank_dataset(5);
  std::vector<std::string> expected_removed;
  for (int i = 0; i < 10; ++i) {
    auto s = testing::random_sample(d, "s" + std::to_string(i), 2017, CropClass::Corn, rng);
    if (i % 3 == 1) {  // 1, 4, 7
      for (std::size_t b = 0; b < s.reflectance.rows(); ++b) {
        for (double& v : s.reflectance.row(b)) v = 100.0 * static_cast<double>(b);
      }
    }
    d.samples.push_back(std::move(s));
  }
  // Flat everywhere except one band: kept.
  auto almost = testing::random_sample(d, "almost", 2017, CropClass::Corn, rng);
  for (std::size_t b = 1; b < almost.reflectance.rows(); ++b) {
    for (double& v : almost.reflectance.row(b)) v = 3.0;
  }
  d.samples.push_back(almost);

  // Direct scan oracle.
  for (const auto& s : d.samples) {
    bool flat = true;
    for (std::size_t b = 0; b < s.reflectance.rows(); ++b) {
      for (double v : s.reflectance.row(b)) flat = flat && v == s.reflectance.at(b, 0);
    }
    if (flat) expected_removed.push_back(s.field_id);
  }
  REQUIRE(expected_removed.size() == 3);

  const auto result = drop_constant_series(d);
  CHECK(result.removed_ids == expected_removed);
  CHECK(result.kept.size() == 8);
  CHECK(ids(result.kept).contains("almost"));
}

TEST_CASE("normalize") {
  Dataset d = testing::blank_dataset(2);
  d.band_ids = {"B04"};
  d.samples.push_back({"x", 2016, CropClass::Corn, ad::Tensor({1, 2}, std::vector<double>{7000, 1234.5})});
  CHECK(normalize(d).samples[0].reflectance[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(normalize(d, 1.0).samples[0].reflectance == d.samples[0].reflectance);
  const Dataset back = denormalize(normalize(d));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(back.samples[0].reflectance[i] - d.samples[0].reflectance[i]) < 1e-12);
  }
  CHECK_THROWS_AS(normalize(d, 0.0), ContractError);
}

TEST_CASE("scenario splits") {
  SUBCASE("E1 on 1758 samples") {
    const Dataset d = testing::labeled_dataset({{2016, 558}, {2017, 600}, {2018, 600}}, 1, 2);
    const Split s = make_split(d, ScenarioSpec::standard(Scenario::E1, 2018, 42));
    CHECK(s.train.size() == 1318);
    CHECK(s.test.size() == 440);

    // Disjoint cover, class proportions within one sample.
    auto train_ids = ids(s.train);
    auto test_ids = ids(s.test);
    std::vector<std::string> inter;
    std::set_intersection(train_ids.begin(), train_ids.end(), test_ids.begin(), test_ids.end(),
                          std::back_inserter(inter));
    CHECK(inter.empty());
    CHECK(train_ids.size() + test_ids.size() == d.size());
    std::array<int, 6> all{}, train{};
    for (const auto& x : d.samples) ++all[class_slot(*x.label)];
    for (const auto& x : s.train.samples) ++train[class_slot(*x.label)];
    for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(train[c] - 0.75 * all[c]) <= 1.0);
  }
  SUBCASE("E1 by year") {
    const Dataset d = testing::labeled_dataset({{2016, 558}, {2017, 600}, {2018, 600}}, 1, 2);
    auto spec = ScenarioSpec::standard(Scenario::E1, 2018, 42);
    spec.e1_stratification = Stratification::ByYear;
    const Split s = make_split(d, spec);
    CHECK(s.train.size() == 1318);
    const auto n2018 = std::count_if(s.train.samples.begin(), s.train.samples.end(),
                                     [](const Sample& x) { return x.year == 2018; });
    CHECK(std::abs(static_cast<double>(n2018) - 450.0) <= 1.0);
  }
  SUBCASE("E2 with real dataset counts") {
    const Dataset d = testing::labeled_dataset({{2016, 558}, {2017, 600}, {2018, 600}}, 1, 2);
    const Split s = make_split(d, ScenarioSpec::standard(Scenario::E2, 2018, 1));
    CHECK(s.train.size() == 1158);
    CHECK(s.test.size() == 600);
    CHECK(s.target_labeled_ids.empty());
  }
  SUBCASE("E3 and E4 move a stratified share of the target year") {
    const Dataset d = testing::labeled_dataset({{2016, 558}, {2017, 600}, {2018, 600}}, 1, 2);
    const Split e3 = make_split(d, ScenarioSpec::standard(Scenario::E3, 2018, 3));
    CHECK(e3.target_labeled_ids.size() == 30);
    CHECK(e3.train.size() == 1188);
    CHECK(e3.test.size() == 570);
    std::array<int, 6> per_class{};
    for (const auto& x : e3.train.samples) {
      if (x.year == 2018) ++per_class[class_slot(*x.label)];
    }
    for (int n : per_class) CHECK(n == 5);

    const Split e4 = make_split(d, ScenarioSpec::standard(Scenario::E4, 2018, 3));
    CHECK(e4.target_labeled_ids.size() == 60);
  }
  SUBCASE("minimum one per class") {
    const Dataset d = testing::labeled_dataset({{2016, 12}, {2018, 12}}, 1, 2);
    const Split s = make_split(d, ScenarioSpec::standard(Scenario::E3, 2018, 3));
    CHECK(s.target_labeled_ids.size() == 6);
  }
  SUBCASE("deterministic in the seed") {
    const Dataset d = testing::labeled_dataset({{2016, 60}, {2018, 60}}, 1, 2);
    const auto spec = ScenarioSpec::standard(Scenario::E1, 2018, 77);
    CHECK(ids(make_split(d, spec).train) == ids(make_split(d, spec).train));
    CHECK(ids(make_split(d, spec).train) !=
          ids(make_split(d, ScenarioSpec::standard(Scenario::E1, 2018, 78)).train));
  }
  SUBCASE("empty class is reported by name") {
    Dataset d = testing::labeled_dataset({{2016, 12}, {2018, 12}}, 1, 2);
    std::erase_if(d.samples, [](const Sample& x) {
      return x.year == 2018 && x.label == CropClass::SugarBeet;
    });
    try {
      make_split(d, ScenarioSpec::standard(Scenario::E4, 2018, 3));
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("sugar beet") != std::string::npos);
    }
  }
}
