#pragma once

// Experiment orchestration: a JSON run config, the load -> preprocess ->
// split -> method -> evaluate pipeline, reports, and the scenario matrix.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslcrop/augment.hpp"
#include "sslcrop/dataio.hpp"
#include "sslcrop/forest.hpp"
#include "sslcrop/metrics.hpp"
#include "sslcrop/model.hpp"
#include "sslcrop/synthgen.hpp"
#include "sslcrop/train.hpp"

namespace sslcrop::exp {

using Json = nlohmann::ordered_json;

enum class Method { RF, TF, SSL };

std::string_view method_name(Method m);  ///< "rf", "tf", "ssl"
std::optional<Method> method_from_name(std::string_view name);

struct RunConfig {
  // Exactly one data source.
  std::optional<std::filesystem::path> csv;
  std::optional<synth::SynthConfig> synth;

  /// Bands to keep, in the dataset's order; all when unset.
  std::optional<std::vector<std::string>> bands;
  std::size_t drop_leading = 0;
  data::ScenarioSpec scenario;

  Method method = Method::TF;
  /// Required for ssl, rejected otherwise.
  std::optional<aug::AugmentationPolicy> aug;
  nn::EncoderConfig encoder;
  nn::SimSiamConfig heads;
  train::TrainConfig train;
  rf::ForestConfig forest;
  /// ssl: also score the nearest-class contrastive classifier.
  bool contrastive = true;

  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::filesystem::path out = "out";

  void validate() const;
};

/// Parses a config document. Method-specific sections (`forest` for rf;
/// `encoder`, `train` for tf/ssl; `aug`, `heads`, `contrastive` for ssl) are
/// rejected under another method. Throws ContractError on schema errors.
RunConfig parse_config(const Json& doc);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical form; `out` and `jobs` are omitted because they do not affect
/// results.
Json config_to_json(const RunConfig& cfg);

/// Sub-seeds derived from the master seed by label.
struct Seeds {
  std::uint64_t master = 0;
  std::uint64_t synth = 0;
  std::uint64_t split = 0;
  std::uint64_t train = 0;
  std::uint64_t forest = 0;
};
Seeds derive_seeds(const RunConfig& cfg);

struct Prepared {
  data::Dataset data;  ///< after constant removal, band selection, truncation
  std::vector<std::string> removed_constant;
  data::Split split;
};

/// Load or synthesize, drop constant series, select bands, truncate, split.
Prepared prepare(const RunConfig& cfg);

struct Evaluation {
  double oa = 0.0;
  metrics::ConfusionMatrix confusion;
  std::array<std::optional<double>, data::kNumClasses> per_class{};
};

Evaluation evaluate(std::span<const data::CropClass> pred, const data::Dataset& truth);

struct ExperimentReport {
  RunConfig config;
  Seeds seeds;
  Evaluation result;
  std::optional<Evaluation> contrastive;
  std::vector<std::pair<std::string, train::TrainTrace>> traces;
  Json document;  ///< exactly what report.json holds
};

/// Nearest-class contrastive accuracy of `state` on the test split, with the
/// training split as reference.
Evaluation contrastive_evaluation(const nn::ModelState& state, const data::Split& split,
                                  double input_scale);

/// Collects outputs in out/.staging and moves them into `out` on commit();
/// anything uncommitted is removed on destruction.
class StagedOutput {
 public:
  explicit StagedOutput(std::filesystem::path out);
  ~StagedOutput();
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  /// Staging location for the output file `name`.
  std::filesystem::path path(const std::string& name);
  void write(const std::string& name, const std::string& text);
  void commit();

 private:
  std::filesystem::path out_, dir_;
  std::vector<std::string> names_;
  bool created_ = false;
};

/// Runs the pipeline and writes report.json, trace CSVs and checkpoints to
/// cfg.out. Files are staged and moved into place only on success.
ExperimentReport run(const RunConfig& cfg);

/// "RF", "TF" or "SSL+Aug1" style tags.
std::string method_tag(const RunConfig& cfg);
/// Preprocessing signature carried by reports and matrix rows.
std::string preprocessing_tag(const RunConfig& cfg);

Json evaluation_to_json(const Evaluation& e);
Json trace_to_json(const train::TrainTrace& t);
/// Report body shared by `run` and the staged CLI commands.
Json report_json(const RunConfig& cfg, const Prepared& prepared, const std::string& method,
                 const Evaluation& result, const std::optional<Evaluation>& contrastive,
                 const std::vector<std::pair<std::string, train::TrainTrace>>& traces);

// --- Matrix ---------------------------------------------------------------------

struct MatrixCell {
  std::string method;
  std::string preprocessing;
  data::Scenario scenario = data::Scenario::E1;
  std::optional<double> oa;  ///< unset when the cell failed
  std::string error;
};

/// Expands {"base": {...}, "methods": [...], "preprocessing": [...],
/// "scenarios": [...]} into cells; each method/preprocessing entry is merged
/// over the base (JSON merge patch).
std::vector<Json> expand_matrix(const Json& matrix);

/// Runs every cell (up to `jobs` at once) into out/cells/<n>; a failing cell
/// is recorded, never fatal. Writes out/summary.csv.
std::vector<MatrixCell> run_matrix(const std::vector<Json>& cells, const std::filesystem::path& out,
                                   std::size_t jobs);

/// `Method,Preprocessing,E1 (OA),E2 (OA),E3 (OA),E4 (OA)`, one row per
/// method/preprocessing pair in first-seen order; failed cells read `error`.
std::string summary_csv(const std::vector<MatrixCell>& cells);

}  // namespace sslcrop::exp
