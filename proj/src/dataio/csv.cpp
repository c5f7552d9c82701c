#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "sslcrop/dataio.hpp"
#include "sslcrop/error.hpp"
#include "sslcrop/text.hpp"

namespace sslcrop::data {
namespace {

struct Column {
  std::size_t band = 0;  // index into the dataset's band list
  std::size_t step = 0;
};

std::string step_label(std::size_t step) {
  return step < 10 ? "0" + std::to_string(step) : std::to_string(step);
}

// Parses "<BAND>_t<KK>".
std::optional<std::pair<std::string, std::size_t>> parse_column(std::string_view name) {
  const auto pos = name.rfind("_t");
  if (pos == std::string_view::npos) return std::nullopt;
  const auto step = parse_int(name.substr(pos + 2));
  if (!step || *step < 0) return std::nullopt;
  const std::string band(name.substr(0, pos));
  if (!band_position(band)) return std::nullopt;
  return std::make_pair(band, static_cast<std::size_t>(*step));
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto header = split(trim(line), ',');
  if (header.size() < 4 || trim(header[0]) != "field_id" || trim(header[1]) != "year" ||
      trim(header[2]) != "label") {
    throw ParseError(1, "header must start with field_id,year,label and list band columns");
  }

  // Bands in canonical order; steps 0..n-1 for each band, any column order.
  std::map<std::size_t, std::map<std::size_t, std::size_t>> grid;  // canon pos -> step -> col
  for (std::size_t col = 3; col < header.size(); ++col) {
    const auto parsed = parse_column(trim(header[col]));
    if (!parsed) {
      throw ParseError(1, "malformed band column '" + std::string(trim(header[col])) + "'");
    }
    const std::size_t canon = *band_position(parsed->first);
    if (!grid[canon].emplace(parsed->second, col).second) {
      throw ParseError(1, "duplicate column " + std::string(trim(header[col])));
    }
  }

  Dataset d;
  d.n_steps = grid.begin()->second.size();
  std::vector<Column> columns(header.size());
  std::size_t band_index = 0;
  for (const auto& [canon, steps] : grid) {
    if (steps.size() != d.n_steps || steps.rbegin()->first != d.n_steps - 1) {
      throw ParseError(1, "band " + std::string(kCanonicalBands[canon]) +
                              " does not cover steps 00.." + step_label(d.n_steps - 1));
    }
    d.band_ids.emplace_back(kCanonicalBands[canon]);
    for (const auto& [step, col] : steps) columns[col] = Column{band_index, step};
    ++band_index;
  }

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw ParseError(row, "expected " + std::to_string(header.size()) + " columns, found " +
                                std::to_string(cells.size()));
    }
    Sample s;
    s.field_id = std::string(trim(cells[0]));
    if (s.field_id.empty()) throw ParseError(row, "empty field_id");
    const auto year = parse_int(cells[1]);
    if (!year) throw ParseError(row, "non-numeric year '" + std::string(cells[1]) + "'");
    s.year = static_cast<int>(*year);
    const auto label = trim(cells[2]);
    if (!label.empty()) {
      s.label = class_from_name(label);
      if (!s.label) throw ParseError(row, "unknown crop label '" + std::string(label) + "'");
    }
    s.reflectance = ad::Tensor({d.band_ids.size(), d.n_steps});
    for (std::size_t col = 3; col < cells.size(); ++col) {
      const auto v = parse_double(cells[col]);
      if (!v) {
        throw ParseError(row, "non-numeric value '" + std::string(trim(cells[col])) +
                                  "' in column " + std::string(trim(header[col])));
      }
      if (!(*v >= 0.0) || !std::isfinite(*v)) {
        throw ParseError(row, "negative or non-finite value in column " +
                                  std::string(trim(header[col])));
      }
      s.reflectance.at(columns[col].band, columns[col].step) = *v;
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_csv(in);
}

void write_csv(const Dataset& d, std::ostream& out) {
  out << "field_id,year,label";
  for (const auto& band : d.band_ids) {
    for (std::size_t t = 0; t < d.n_steps; ++t) out << ',' << band << "_t" << step_label(t);
  }
  out << '\n';
  for (const Sample& s : d.samples) {
    out << s.field_id << ',' << s.year << ',';
    if (s.label) out << class_name(*s.label);
    for (double v : s.reflectance.values()) out << ',' << format_double(v);
    out << '\n';
  }
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(d, out);
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace sslcrop::data
