#include "sslcrop/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sslcrop/error.hpp"
#include "sslcrop/rng.hpp"
#include "sslcrop/text.hpp"

namespace sslcrop::exp {
namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object; unknown keys are an error so typos in a
// config never pass silently.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ContractError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const Json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void get(const char* key, double& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_number()) throw ContractError(where(key) + " must be a number");
    out = v.get<double>();
  }
  void get(const char* key, std::size_t& out) {
    if (!has(key)) return;
    out = to_size(raw(key), where(key));
  }
  void get(const char* key, int& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_number_integer()) throw ContractError(where(key) + " must be an integer");
    out = v.get<int>();
  }
  void get(const char* key, bool& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_boolean()) throw ContractError(where(key) + " must be true or false");
    out = v.get<bool>();
  }
  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_string()) throw ContractError(where(key) + " must be a string");
    out = v.get<std::string>();
  }
  void get(const char* key, std::optional<std::size_t>& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (v.is_null()) {
      out.reset();
    } else {
      out = to_size(v, where(key));
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (!has(key)) return;
    out = strings(raw(key), where(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ContractError("unknown key " + where(key.c_str()));
    }
  }

  std::string where(const char* key = nullptr) const {
    return key ? "'" + path_ + "." + key + "'" : "'" + path_ + "'";
  }

  static std::size_t to_size(const Json& v, const std::string& where) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ContractError(where + " must be a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  static std::vector<std::string> strings(const Json& v, const std::string& where) {
    if (!v.is_array()) throw ContractError(where + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ContractError(where + " must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

synth::SynthConfig parse_synth(const Json& j) {
  synth::SynthConfig c;
  Section s(j, "data.synth");
  s.get("n_per_class_per_year", c.n_per_class_per_year);
  if (s.has("years")) {
    const Json& v = s.raw("years");
    if (!v.is_array()) throw ContractError(s.where("years") + " must be an array of integers");
    c.years.clear();
    for (const auto& y : v) {
      if (!y.is_number_integer()) throw ContractError(s.where("years") + " must be an array of integers");
      c.years.push_back(y.get<int>());
    }
  }
  if (s.has("divergent_year")) {
    const Json& v = s.raw("divergent_year");
    if (v.is_null()) {
      c.divergent_year.reset();
    } else if (v.is_number_integer()) {
      c.divergent_year = v.get<int>();
    } else {
      throw ContractError(s.where("divergent_year") + " must be an integer or null");
    }
  }
  s.get("shift_steps", c.shift_steps);
  s.get("amplitude_scale", c.amplitude_scale);
  s.get("noise_sd", c.noise_sd);
  s.get("cloud_prob", c.cloud_prob);
  s.get("cloud_dn", c.cloud_dn);
  s.get("timing_jitter_sd", c.timing_jitter_sd);
  s.get("amplitude_jitter_sd", c.amplitude_jitter_sd);
  s.get("bands", c.bands);
  s.get("n_steps", c.n_steps);
  s.finish();
  c.validate();
  return c;
}

data::ScenarioSpec parse_scenario(const Json& j) {
  auto kind_of = [](const std::string& name, const std::string& where) {
    const auto k = data::scenario_from_name(name);
    if (!k) throw ContractError(where + ": unknown scenario '" + name + "' (expected e1..e4)");
    return *k;
  };
  if (j.is_string()) return data::ScenarioSpec::standard(kind_of(j.get<std::string>(), "'scenario'"), 2018, 0);
  Section s(j, "scenario");
  std::string kind = "e1";
  s.get("kind", kind);
  int target_year = 2018;
  s.get("target_year", target_year);
  data::ScenarioSpec spec = data::ScenarioSpec::standard(kind_of(kind, s.where("kind")), target_year, 0);
  s.get("train_fraction", spec.train_fraction);
  s.get("target_label_fraction", spec.target_label_fraction);
  if (s.has("e1_stratification")) {
    std::string strat;
    s.get("e1_stratification", strat);
    if (strat == "class") {
      spec.e1_stratification = data::Stratification::ByClass;
    } else if (strat == "year") {
      spec.e1_stratification = data::Stratification::ByYear;
    } else {
      throw ContractError(s.where("e1_stratification") + " must be 'class' or 'year'");
    }
  }
  s.finish();
  return spec;
}

aug::AugmentationPolicy parse_aug(const Json& j) {
  auto kind_of = [](const std::string& name, const std::string& where) {
    const auto k = aug::aug_from_name(name);
    if (!k) throw ContractError(where + ": unknown augmentation '" + name + "' (expected aug1..aug3)");
    return *k;
  };
  aug::AugmentationPolicy p;
  if (j.is_string()) {
    p.kind = kind_of(j.get<std::string>(), "'aug'");
    return p;
  }
  Section s(j, "aug");
  std::string kind = "aug1";
  s.get("kind", kind);
  p.kind = kind_of(kind, s.where("kind"));
  s.get("drift_max", p.drift_max);
  s.get("drift_points", p.drift_points);
  s.get("noise_scale", p.noise_scale);
  s.get("cloud_dn", p.cloud_dn);
  s.get("normalization_scale", p.normalization_scale);
  s.get("spike_both", p.spike_both);
  s.finish();
  p.validate();
  return p;
}

void parse_encoder(const Json& j, nn::EncoderConfig& e) {
  Section s(j, "encoder");
  s.get("d_model", e.d_model);
  s.get("n_heads", e.n_heads);
  s.get("n_layers", e.n_layers);
  s.get("ff_dim", e.ff_dim);
  s.get("dropout", e.dropout);
  s.finish();
}

void parse_heads(const Json& j, nn::SimSiamConfig& h) {
  Section s(j, "heads");
  s.get("proj_hidden", h.proj_hidden);
  s.get("head_out", h.head_out);
  s.get("pred_hidden", h.pred_hidden);
  s.get("batch_norm", h.batch_norm);
  s.finish();
  h.validate();
}

void parse_train(const Json& j, train::TrainConfig& t) {
  Section s(j, "train");
  s.get("lr", t.lr);
  s.get("batch_size", t.batch_size);
  s.get("epochs_supervised", t.epochs_supervised);
  s.get("epochs_pretrain", t.epochs_pretrain);
  s.get("epochs_finetune", t.epochs_finetune);
  s.get("momentum", t.momentum);
  s.get("weight_decay", t.weight_decay);
  if (s.has("finetune_mode")) {
    std::string mode;
    s.get("finetune_mode", mode);
    const auto m = train::finetune_mode_from_name(mode);
    if (!m) throw ContractError(s.where("finetune_mode") + " must be 'linear' or 'full'");
    t.finetune_mode = *m;
  }
  s.get("input_scale", t.input_scale);
  s.get("collapse_warmup_epochs", t.collapse_warmup_epochs);
  s.get("collapse_threshold_factor", t.collapse_threshold_factor);
  s.finish();
}

void parse_forest(const Json& j, rf::ForestConfig& f) {
  Section s(j, "forest");
  s.get("n_trees", f.n_trees);
  s.get("max_features", f.max_features);
  s.get("min_leaf", f.min_leaf);
  s.get("max_depth", f.max_depth);
  s.get("bootstrap", f.bootstrap);
  s.finish();
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string trace_csv(const train::TrainTrace& t) {
  std::ostringstream s;
  train::write_trace_csv(t, s);
  return s.str();
}

}  // namespace

StagedOutput::StagedOutput(fs::path out) : out_(std::move(out)), dir_(out_ / ".staging") {
  created_ = fs::create_directories(out_);
  fs::remove_all(dir_);
  fs::create_directories(dir_);
}

StagedOutput::~StagedOutput() {
  std::error_code ec;
  fs::remove_all(dir_, ec);
  if (created_ && fs::is_empty(out_, ec)) fs::remove(out_, ec);
}

fs::path StagedOutput::path(const std::string& name) {
  names_.push_back(name);
  return dir_ / name;
}

void StagedOutput::write(const std::string& name, const std::string& text) { write_text(path(name), text); }

void StagedOutput::commit() {
  for (const auto& n : names_) fs::rename(dir_ / n, out_ / n);
  names_.clear();
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::RF: return "rf";
    case Method::TF: return "tf";
    case Method::SSL: return "ssl";
  }
  throw ContractError("invalid method");
}

std::optional<Method> method_from_name(std::string_view name) {
  for (Method m : {Method::RF, Method::TF, Method::SSL}) {
    if (name == method_name(m)) return m;
  }
  return std::nullopt;
}

void RunConfig::validate() const {
  if (csv.has_value() == synth.has_value()) {
    throw ContractError("config needs exactly one data source (data.csv or data.synth)");
  }
  if (synth) synth->validate();
  if (method == Method::SSL && !aug) throw ContractError("method ssl needs an 'aug' section");
  if (method != Method::SSL && aug) {
    throw ContractError("'aug' is only valid with method ssl, not " + std::string(method_name(method)));
  }
  if (aug) aug->validate();
  if (method != Method::RF) {
    train.validate();
    heads.validate();
  }
  if (jobs < 1) throw ContractError("jobs must be >= 1");
}

RunConfig parse_config(const Json& doc) {
  RunConfig cfg;
  Section s(doc, "config");

  if (!s.has("data")) throw ContractError("config needs a 'data' section");
  {
    Section d(s.raw("data"), "data");
    if (d.has("csv")) {
      std::string path;
      d.get("csv", path);
      cfg.csv = path;
    }
    if (d.has("synth")) cfg.synth = parse_synth(d.raw("synth"));
    d.finish();
  }
  if (s.has("bands")) {
    const Json& b = s.raw("bands");
    if (!b.is_null()) cfg.bands = Section::strings(b, "'config.bands'");
  }
  s.get("drop_leading", cfg.drop_leading);
  if (s.has("scenario")) cfg.scenario = parse_scenario(s.raw("scenario"));

  std::string method = "tf";
  s.get("method", method);
  const auto m = method_from_name(method);
  if (!m) throw ContractError("unknown method '" + method + "' (expected rf, tf or ssl)");
  cfg.method = *m;

  auto only_for = [&](const char* key, std::initializer_list<Method> allowed) {
    if (!s.has(key)) return false;
    if (std::find(allowed.begin(), allowed.end(), cfg.method) == allowed.end()) {
      throw ContractError("'" + std::string(key) + "' does not apply to method " + method);
    }
    return true;
  };
  if (only_for("aug", {Method::SSL})) cfg.aug = parse_aug(s.raw("aug"));
  if (only_for("heads", {Method::SSL})) parse_heads(s.raw("heads"), cfg.heads);
  if (only_for("contrastive", {Method::SSL})) s.get("contrastive", cfg.contrastive);
  if (only_for("encoder", {Method::TF, Method::SSL})) parse_encoder(s.raw("encoder"), cfg.encoder);
  if (only_for("train", {Method::TF, Method::SSL})) parse_train(s.raw("train"), cfg.train);
  if (only_for("forest", {Method::RF})) parse_forest(s.raw("forest"), cfg.forest);

  s.get("seed", cfg.seed);
  s.get("jobs", cfg.jobs);
  if (s.has("out")) {
    std::string out;
    s.get("out", out);
    cfg.out = out;
  }
  s.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig cfg = parse_config(doc);
  if (cfg.csv && cfg.csv->is_relative()) cfg.csv = path.parent_path() / *cfg.csv;
  return cfg;
}

Json config_to_json(const RunConfig& cfg) {
  Json j;
  if (cfg.csv) {
    j["data"]["csv"] = cfg.csv->generic_string();
  } else {
    const auto& c = *cfg.synth;
    Json s;
    s["n_per_class_per_year"] = c.n_per_class_per_year;
    s["years"] = c.years;
    s["divergent_year"] = c.divergent_year ? Json(*c.divergent_year) : Json(nullptr);
    s["shift_steps"] = c.shift_steps;
    s["amplitude_scale"] = c.amplitude_scale;
    s["noise_sd"] = c.noise_sd;
    s["cloud_prob"] = c.cloud_prob;
    s["cloud_dn"] = c.cloud_dn;
    s["timing_jitter_sd"] = c.timing_jitter_sd;
    s["amplitude_jitter_sd"] = c.amplitude_jitter_sd;
    s["bands"] = c.bands;
    s["n_steps"] = c.n_steps;
    j["data"]["synth"] = s;
  }
  j["bands"] = cfg.bands ? Json(*cfg.bands) : Json(nullptr);
  j["drop_leading"] = cfg.drop_leading;
  const auto& sc = cfg.scenario;
  j["scenario"] = {{"kind", std::string(data::scenario_name(sc.kind))},
                   {"target_year", sc.target_year},
                   {"train_fraction", sc.train_fraction},
                   {"target_label_fraction", sc.target_label_fraction},
                   {"e1_stratification",
                    sc.e1_stratification == data::Stratification::ByClass ? "class" : "year"}};
  j["method"] = std::string(method_name(cfg.method));
  if (cfg.method == Method::SSL) {
    const auto& a = *cfg.aug;
    j["aug"] = {{"kind", std::string(aug::aug_name(a.kind))},
                {"drift_max", a.drift_max},
                {"drift_points", a.drift_points},
                {"noise_scale", a.noise_scale},
                {"cloud_dn", a.cloud_dn},
                {"normalization_scale", a.normalization_scale},
                {"spike_both", a.spike_both}};
    j["heads"] = {{"proj_hidden", cfg.heads.proj_hidden},
                  {"head_out", cfg.heads.head_out},
                  {"pred_hidden", cfg.heads.pred_hidden},
                  {"batch_norm", cfg.heads.batch_norm}};
    j["contrastive"] = cfg.contrastive;
  }
  if (cfg.method != Method::RF) {
    const auto& e = cfg.encoder;
    j["encoder"] = {{"d_model", e.d_model},
                    {"n_heads", e.n_heads},
                    {"n_layers", e.n_layers},
                    {"ff_dim", e.ff_dim},
                    {"dropout", e.dropout}};
    const auto& t = cfg.train;
    j["train"] = {{"lr", t.lr},
                  {"batch_size", t.batch_size},
                  {"epochs_supervised", t.epochs_supervised},
                  {"epochs_pretrain", t.epochs_pretrain},
                  {"epochs_finetune", t.epochs_finetune},
                  {"momentum", t.momentum},
                  {"weight_decay", t.weight_decay},
                  {"finetune_mode", std::string(train::finetune_mode_name(t.finetune_mode))},
                  {"input_scale", t.input_scale},
                  {"collapse_warmup_epochs", t.collapse_warmup_epochs},
                  {"collapse_threshold_factor", t.collapse_threshold_factor}};
  } else {
    const auto& f = cfg.forest;
    j["forest"] = {{"n_trees", f.n_trees},
                   {"max_features", f.max_features ? Json(*f.max_features) : Json(nullptr)},
                   {"min_leaf", f.min_leaf},
                   {"max_depth", f.max_depth ? Json(*f.max_depth) : Json(nullptr)},
                   {"bootstrap", f.bootstrap}};
  }
  j["seed"] = cfg.seed;
  return j;
}

Seeds derive_seeds(const RunConfig& cfg) {
  return {cfg.seed, derive_seed(cfg.seed, "synth"), derive_seed(cfg.seed, "split"),
          derive_seed(cfg.seed, "train"), derive_seed(cfg.seed, "forest")};
}

Prepared prepare(const RunConfig& cfg) {
  cfg.validate();
  const Seeds seeds = derive_seeds(cfg);
  data::Dataset raw;
  if (cfg.csv) {
    raw = data::load_csv(*cfg.csv);
  } else {
    synth::SynthConfig sc = *cfg.synth;
    sc.seed = seeds.synth;
    raw = synth::generate(sc);
  }
  Prepared p;
  auto filtered = data::drop_constant_series(raw);
  p.removed_constant = std::move(filtered.removed_ids);
  p.data = std::move(filtered.kept);
  if (cfg.bands) p.data = data::select_bands(p.data, *cfg.bands);
  if (cfg.drop_leading > 0) p.data = data::truncate_steps(p.data, cfg.drop_leading);
  data::ScenarioSpec spec = cfg.scenario;
  spec.seed = seeds.split;
  p.split = data::make_split(p.data, spec);
  return p;
}

Evaluation evaluate(std::span<const data::CropClass> pred, const data::Dataset& truth) {
  std::vector<data::CropClass> labels;
  for (const auto& s : truth.samples) {
    if (!s.label) throw ContractError("test sample " + s.field_id + " has no label to score against");
    labels.push_back(*s.label);
  }
  Evaluation e;
  e.oa = metrics::overall_accuracy(pred, labels);
  e.confusion = metrics::ConfusionMatrix::from_predictions(pred, labels);
  e.per_class = metrics::per_class_accuracy(e.confusion);
  return e;
}

std::string method_tag(const RunConfig& cfg) {
  switch (cfg.method) {
    case Method::RF: return "RF";
    case Method::TF: return "TF";
    case Method::SSL: return "SSL+" + std::string(aug::aug_name(cfg.aug->kind));
  }
  throw ContractError("invalid method");
}

std::string preprocessing_tag(const RunConfig& cfg) {
  return "bands=" + (cfg.bands ? std::to_string(cfg.bands->size()) : std::string("all")) +
         " drop_leading=" + std::to_string(cfg.drop_leading);
}

Json evaluation_to_json(const Evaluation& e) {
  Json j;
  j["oa"] = e.oa;
  Json conf = Json::array();
  for (const auto& row : e.confusion.counts) conf.push_back(row);
  j["confusion"] = conf;
  Json per = Json::array();
  for (const auto& a : e.per_class) per.push_back(optional_json(a));
  j["per_class_accuracy"] = per;
  return j;
}

Json trace_to_json(const train::TrainTrace& t) {
  Json j;
  j["initial_loss"] = optional_json(t.initial_loss);
  Json epochs = Json::array();
  for (const auto& e : t.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"collapse_metric", optional_json(e.collapse_metric)}});
  }
  j["epochs"] = epochs;
  j["collapse_warning"] = t.collapse_warning;
  j["collapse_warning_epoch"] =
      t.collapse_warning_epoch ? Json(*t.collapse_warning_epoch) : Json(nullptr);
  return j;
}

Json report_json(const RunConfig& cfg, const Prepared& prepared, const std::string& method,
                 const Evaluation& result, const std::optional<Evaluation>& contrastive,
                 const std::vector<std::pair<std::string, train::TrainTrace>>& traces) {
  const Seeds seeds = derive_seeds(cfg);
  Json j;
  j["format"] = "sslcrop-report 1";
  j["scenario"] = std::string(data::scenario_name(cfg.scenario.kind));
  j["target_year"] = cfg.scenario.target_year;
  j["method"] = method;
  j["preprocessing"] = {{"signature", preprocessing_tag(cfg)},
                        {"bands", prepared.data.band_ids},
                        {"n_bands", prepared.data.n_bands()},
                        {"n_steps", prepared.data.n_steps},
                        {"step_origin_index", prepared.data.step_origin_index},
                        {"drop_leading", cfg.drop_leading},
                        {"removed_constant", prepared.removed_constant},
                        {"input_scale", cfg.method == Method::RF ? Json(nullptr) : Json(cfg.train.input_scale)}};
  j["split"] = {{"train", prepared.split.train.size()},
                {"test", prepared.split.test.size()},
                {"target_labeled", prepared.split.target_labeled_ids.size()}};
  Json classes = Json::object();
  for (auto c : data::kAllClasses) {
    classes[std::to_string(data::class_index(c))] = std::string(data::class_name(c));
  }
  j["classes"] = classes;
  j["seeds"] = {{"master", seeds.master},
                {"synth", cfg.synth ? Json(seeds.synth) : Json(nullptr)},
                {"split", seeds.split},
                {"train", cfg.method == Method::RF ? Json(nullptr) : Json(seeds.train)},
                {"forest", cfg.method == Method::RF ? Json(seeds.forest) : Json(nullptr)}};
  j["result"] = evaluation_to_json(result);
  j["contrastive"] = contrastive ? evaluation_to_json(*contrastive) : Json(nullptr);
  Json tr = Json::object();
  for (const auto& [name, t] : traces) tr[name] = trace_to_json(t);
  j["traces"] = tr;
  j["config"] = config_to_json(cfg);
  return j;
}

Evaluation contrastive_evaluation(const nn::ModelState& state, const data::Split& split,
                                  double input_scale) {
  const auto ref = metrics::prepare_reference(state, split.train, input_scale);
  std::vector<data::CropClass> pred;
  for (const auto& r : metrics::contrastive_classify_all(state, split.test, ref, input_scale)) {
    pred.push_back(r.predicted);
  }
  return evaluate(pred, split.test);
}

ExperimentReport run(const RunConfig& cfg) {
  cfg.validate();
  StagedOutput staging(cfg.out);
  const Prepared prepared = prepare(cfg);
  const Seeds seeds = derive_seeds(cfg);
  const auto& split = prepared.split;

  ExperimentReport report;
  report.config = cfg;
  report.seeds = seeds;
  train::TrainConfig tc = cfg.train;
  tc.seed = seeds.train;

  std::vector<data::CropClass> pred;
  switch (cfg.method) {
    case Method::RF: {
      rf::ForestConfig fc = cfg.forest;
      fc.seed = seeds.forest;
      fc.jobs = cfg.jobs;
      const auto forest = rf::rf_fit(split.train, fc);
      pred = rf::rf_predict(forest, split.test, cfg.jobs);
      break;
    }
    case Method::TF: {
      const auto r = train::train_supervised(split.train, cfg.encoder, tc);
      pred = train::predict_classes(r.state, split.test, tc.input_scale);
      nn::save_checkpoint(r.state, staging.path("model.ckpt"));
      staging.write("trace_supervised.csv", trace_csv(r.trace));
      report.traces.emplace_back("supervised", r.trace);
      break;
    }
    case Method::SSL: {
      const auto pre = train::pretrain(split.train, *cfg.aug, cfg.encoder, cfg.heads, tc);
      nn::save_checkpoint(pre.state, staging.path("backbone.ckpt"));
      staging.write("trace_pretrain.csv", trace_csv(pre.trace));
      report.traces.emplace_back("pretrain", pre.trace);
      if (cfg.contrastive) report.contrastive = contrastive_evaluation(pre.state, split, tc.input_scale);
      const auto ft = train::finetune(pre.state, split.train, tc);
      pred = train::predict_classes(ft.state, split.test, tc.input_scale);
      nn::save_checkpoint(ft.state, staging.path("model.ckpt"));
      staging.write("trace_finetune.csv", trace_csv(ft.trace));
      report.traces.emplace_back("finetune", ft.trace);
      break;
    }
  }
  report.result = evaluate(pred, split.test);
  report.document = report_json(cfg, prepared, method_tag(cfg), report.result, report.contrastive,
                                report.traces);
  staging.write("report.json", report.document.dump(2) + "\n");
  staging.commit();
  return report;
}

std::vector<Json> expand_matrix(const Json& matrix) {
  Section s(matrix, "matrix");
  Json base = Json::object();
  if (s.has("base")) base = s.raw("base");
  if (!base.is_object()) throw ContractError("'matrix.base' must be an object");
  if (!s.has("methods")) throw ContractError("matrix needs a 'methods' array");
  const Json& methods = s.raw("methods");
  Json preps = Json::array({Json::object()});
  if (s.has("preprocessing")) preps = s.raw("preprocessing");
  std::vector<std::string> scenarios{"e1", "e2", "e3", "e4"};
  s.get("scenarios", scenarios);
  s.finish();
  if (!methods.is_array() || methods.empty()) throw ContractError("'matrix.methods' must be a non-empty array");
  if (!preps.is_array() || preps.empty()) {
    throw ContractError("'matrix.preprocessing' must be a non-empty array");
  }
  std::vector<Json> cells;
  for (const auto& m : methods) {
    for (const auto& p : preps) {
      for (const auto& sc : scenarios) {
        if (!data::scenario_from_name(sc)) throw ContractError("unknown scenario '" + sc + "' in matrix");
        Json cell = base;
        cell.merge_patch(m);
        cell.merge_patch(p);
        if (cell.contains("scenario") && cell["scenario"].is_object()) {
          cell["scenario"]["kind"] = sc;
        } else {
          cell["scenario"] = sc;
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

std::vector<MatrixCell> run_matrix(const std::vector<Json>& cells, const fs::path& out, std::size_t jobs) {
  if (cells.empty()) throw ContractError("matrix has no cells");
  std::vector<MatrixCell> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      MatrixCell& r = results[i];
      r.method = cells[i].value("method", std::string("?"));
      r.preprocessing = "?";
      try {
        RunConfig cfg = parse_config(cells[i]);
        r.method = method_tag(cfg);
        r.preprocessing = preprocessing_tag(cfg);
        r.scenario = cfg.scenario.kind;
        char name[32];
        std::snprintf(name, sizeof name, "%03zu", i);
        cfg.out = out / "cells" / name;
        r.oa = run(cfg).result.oa;
      } catch (const std::exception& e) {
        r.error = e.what();
        if (cells[i].contains("scenario")) {
          const Json& sc = cells[i]["scenario"];
          const std::string kind = sc.is_string() ? sc.get<std::string>() : sc.value("kind", std::string("e1"));
          if (auto k = data::scenario_from_name(kind)) r.scenario = *k;
        }
        std::lock_guard lock(log);
        std::cerr << "matrix cell " << i << " (" << r.method << ", "
                  << data::scenario_name(r.scenario) << ") failed: " << e.what() << '\n';
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(jobs, cells.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(out);
  write_text(out / "summary.csv", summary_csv(results));
  return results;
}

std::string summary_csv(const std::vector<MatrixCell>& cells) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::map<std::pair<std::string, std::string>, std::array<std::string, 4>> values;
  for (const auto& c : cells) {
    const auto key = std::make_pair(c.method, c.preprocessing);
    if (!values.count(key)) rows.push_back(key);
    values[key][static_cast<std::size_t>(c.scenario)] = c.oa ? format_fixed(*c.oa, 4) : "error";
  }
  std::ostringstream s;
  s << "Method,Preprocessing,E1 (OA),E2 (OA),E3 (OA),E4 (OA)\n";
  for (const auto& key : rows) {
    s << key.first << ',' << key.second;
    for (const auto& v : values[key]) s << ',' << v;
    s << '\n';
  }
  return s.str();
}

}  // namespace sslcrop::exp
