// sslcrop command line: synthesize data, preprocess, train, evaluate and run
// scenario matrices from a JSON run config plus flag overrides.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sslcrop/error.hpp"
#include "sslcrop/experiment.hpp"
#include "sslcrop/rng.hpp"
#include "sslcrop/text.hpp"

using namespace sslcrop;
using exp::Json;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
  std::optional<std::string> scenario;
  std::optional<std::string> method;
  std::optional<std::string> aug;
  std::optional<std::string> bands;
  std::optional<std::size_t> drop_leading;
  std::optional<std::string> finetune_mode;
};

void add_common(CLI::App* cmd, Overrides& o, bool needs_config = true) {
  auto* c = cmd->add_option("--config", o.config, "JSON run config");
  if (needs_config) c->required();
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output directory (default $SSLCROP_OUT or ./out)");
  cmd->add_option("--scenario", o.scenario, "e1, e2, e3 or e4")
      ->check(CLI::IsMember({"e1", "e2", "e3", "e4"}, CLI::ignore_case));
  cmd->add_option("--method", o.method, "rf, tf or ssl")->check(CLI::IsMember({"rf", "tf", "ssl"}));
  cmd->add_option("--aug", o.aug, "aug1, aug2 or aug3")
      ->check(CLI::IsMember({"aug1", "aug2", "aug3"}, CLI::ignore_case));
  cmd->add_option("--bands", o.bands, "comma-separated bands to keep, or 'all'");
  cmd->add_option("--drop-leading", o.drop_leading, "time steps to drop from the start");
  cmd->add_option("--finetune-mode", o.finetune_mode, "linear or full")
      ->check(CLI::IsMember({"linear", "full"}));
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply(Json& doc, const Overrides& o) {
  if (o.seed) doc["seed"] = *o.seed;
  if (o.method) {
    // Switching method drops the config sections the new method does not take.
    doc["method"] = *o.method;
    const bool ssl = *o.method == "ssl", rf = *o.method == "rf";
    if (!ssl) {
      for (const char* k : {"aug", "heads", "contrastive"}) doc.erase(k);
    }
    if (rf) {
      for (const char* k : {"encoder", "train"}) doc.erase(k);
    } else {
      doc.erase("forest");
    }
  }
  if (o.aug) doc["aug"] = *o.aug;
  if (o.scenario) {
    if (doc.contains("scenario") && doc["scenario"].is_object()) {
      doc["scenario"]["kind"] = *o.scenario;
    } else {
      doc["scenario"] = *o.scenario;
    }
  }
  if (o.bands) {
    if (*o.bands == "all") {
      doc["bands"] = nullptr;
    } else {
      Json list = Json::array();
      std::stringstream s(*o.bands);
      for (std::string b; std::getline(s, b, ',');) {
        if (!b.empty()) list.push_back(b);
      }
      doc["bands"] = list;
    }
  }
  if (o.drop_leading) doc["drop_leading"] = *o.drop_leading;
  if (o.finetune_mode) doc["train"]["finetune_mode"] = *o.finetune_mode;
}

fs::path default_out() {
  const char* env = std::getenv("SSLCROP_OUT");
  return env && *env ? fs::path(env) : fs::path("out");
}

exp::RunConfig load(const Overrides& o) {
  Json doc = o.config.empty() ? Json{{"data", {{"synth", Json::object()}}}} : read_json(o.config);
  const bool config_out = doc.contains("out");
  apply(doc, o);
  exp::RunConfig cfg = exp::parse_config(doc);
  if (!o.config.empty() && cfg.csv && cfg.csv->is_relative()) cfg.csv = fs::path(o.config).parent_path() / *cfg.csv;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.out) {
    cfg.out = *o.out;
  } else if (!config_out) {
    cfg.out = default_out();
  }
  return cfg;
}

std::string trace_csv(const train::TrainTrace& t) {
  std::ostringstream s;
  train::write_trace_csv(t, s);
  return s.str();
}

void print_result(const std::string& what, const exp::Evaluation& e) {
  std::cout << what << " OA " << format_fixed(e.oa, 4) << '\n';
  for (std::size_t k = 0; k < data::kNumClasses; ++k) {
    const auto& a = e.per_class[k];
    std::cout << "  " << data::class_name(data::class_from_slot(k)) << ' '
              << (a ? format_fixed(*a, 4) : std::string("n/a")) << '\n';
  }
}

void warn_collapse(const train::TrainTrace& t) {
  if (t.collapse_warning) {
    std::cerr << "warning: representation collapse detected at epoch " << *t.collapse_warning_epoch << '\n';
  }
}

void require_ssl(const exp::RunConfig& cfg, const char* cmd) {
  if (cfg.method != exp::Method::SSL) throw ContractError(std::string(cmd) + " needs method ssl");
}

int cmd_synth(const Overrides& o) {
  const exp::RunConfig cfg = load(o);
  if (!cfg.synth) throw ContractError("synth needs a config with data.synth");
  synth::SynthConfig sc = *cfg.synth;
  sc.seed = exp::derive_seeds(cfg).synth;
  const data::Dataset d = synth::generate(sc);
  exp::StagedOutput out(cfg.out);
  data::save_csv(d, out.path("dataset.csv"));
  out.commit();
  std::cout << "wrote " << d.size() << " samples to " << (cfg.out / "dataset.csv").string() << '\n';
  return 0;
}

int cmd_preprocess(const Overrides& o) {
  const exp::RunConfig cfg = load(o);
  const exp::Prepared p = exp::prepare(cfg);
  Json info;
  info["signature"] = exp::preprocessing_tag(cfg);
  info["bands"] = p.data.band_ids;
  info["n_steps"] = p.data.n_steps;
  info["removed_constant"] = p.removed_constant;
  info["scenario"] = std::string(data::scenario_name(cfg.scenario.kind));
  info["split"] = {{"train", p.split.train.size()},
                   {"test", p.split.test.size()},
                   {"target_labeled", p.split.target_labeled_ids.size()}};
  info["target_labeled_ids"] = p.split.target_labeled_ids;
  exp::StagedOutput out(cfg.out);
  data::save_csv(p.split.train, out.path("train.csv"));
  data::save_csv(p.split.test, out.path("test.csv"));
  out.write("preprocess.json", info.dump(2) + "\n");
  out.commit();
  std::cout << p.data.n_bands() << " bands, " << p.data.n_steps << " steps, " << p.split.train.size()
            << " train / " << p.split.test.size() << " test\n";
  return 0;
}

int cmd_train(const Overrides& o) {
  const exp::RunConfig cfg = load(o);
  const exp::ExperimentReport r = exp::run(cfg);
  for (const auto& [name, t] : r.traces) warn_collapse(t);
  if (r.contrastive) print_result("contrastive", *r.contrastive);
  print_result(exp::method_tag(cfg), r.result);
  return 0;
}

int cmd_pretrain(const Overrides& o) {
  const exp::RunConfig cfg = load(o);
  require_ssl(cfg, "pretrain");
  const exp::Prepared p = exp::prepare(cfg);
  train::TrainConfig tc = cfg.train;
  tc.seed = exp::derive_seeds(cfg).train;
  const auto pre = train::pretrain(p.split.train, *cfg.aug, cfg.encoder, cfg.heads, tc);
  exp::StagedOutput out(cfg.out);
  nn::save_checkpoint(pre.state, out.path("backbone.ckpt"));
  out.write("trace_pretrain.csv", trace_csv(pre.trace));
  out.commit();
  warn_collapse(pre.trace);
  std::cout << "pretrained " << pre.trace.epochs.size() << " epochs, final loss "
            << format_fixed(pre.trace.epochs.empty() ? 0.0 : pre.trace.epochs.back().loss, 4) << '\n';
  return 0;
}

int cmd_finetune(const Overrides& o, const std::optional<std::string>& backbone_path) {
  const exp::RunConfig cfg = load(o);
  require_ssl(cfg, "finetune");
  const exp::Prepared p = exp::prepare(cfg);
  train::TrainConfig tc = cfg.train;
  tc.seed = exp::derive_seeds(cfg).train;
  const nn::ModelState backbone = nn::load_checkpoint(backbone_path ? fs::path(*backbone_path)
                                                                    : cfg.out / "backbone.ckpt");
  std::optional<exp::Evaluation> contrastive;
  if (cfg.contrastive) contrastive = exp::contrastive_evaluation(backbone, p.split, tc.input_scale);
  const auto ft = train::finetune(backbone, p.split.train, tc);
  const auto result = exp::evaluate(train::predict_classes(ft.state, p.split.test, tc.input_scale), p.split.test);
  const Json report = exp::report_json(cfg, p, exp::method_tag(cfg), result, contrastive, {{"finetune", ft.trace}});
  exp::StagedOutput out(cfg.out);
  nn::save_checkpoint(ft.state, out.path("model.ckpt"));
  out.write("trace_finetune.csv", trace_csv(ft.trace));
  out.write("report.json", report.dump(2) + "\n");
  out.commit();
  if (contrastive) print_result("contrastive", *contrastive);
  print_result(exp::method_tag(cfg), result);
  return 0;
}

int cmd_eval(const Overrides& o, const std::optional<std::string>& model_path) {
  const exp::RunConfig cfg = load(o);
  if (cfg.method == exp::Method::RF) throw ContractError("eval works on model checkpoints; rf runs are scored by train");
  const exp::Prepared p = exp::prepare(cfg);
  const double scale = cfg.train.input_scale;
  const nn::ModelState state = nn::load_checkpoint(model_path ? fs::path(*model_path) : cfg.out / "model.ckpt");
  std::optional<exp::Evaluation> contrastive;
  if (state.has_heads() && cfg.method == exp::Method::SSL && cfg.contrastive) {
    contrastive = exp::contrastive_evaluation(state, p.split, scale);
  }
  if (!state.has_classifier()) {
    if (!contrastive) throw ContractError("checkpoint has neither a classifier nor SimSiam heads to score");
    print_result("contrastive", *contrastive);
    return 0;
  }
  const auto result = exp::evaluate(train::predict_classes(state, p.split.test, scale), p.split.test);
  const Json report = exp::report_json(cfg, p, exp::method_tag(cfg), result, contrastive, {});
  exp::StagedOutput out(cfg.out);
  out.write("eval.json", report.dump(2) + "\n");
  out.commit();
  if (contrastive) print_result("contrastive", *contrastive);
  print_result(exp::method_tag(cfg), result);
  return 0;
}

int cmd_matrix(const Overrides& o) {
  Json doc = read_json(o.config);
  if (o.seed) doc["base"]["seed"] = *o.seed;
  const fs::path out = o.out ? fs::path(*o.out) : default_out();
  const auto cells = exp::run_matrix(exp::expand_matrix(doc), out, o.jobs.value_or(1));
  std::cout << exp::summary_csv(cells);
  const auto failed = std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.oa; });
  if (failed > 0) std::cerr << failed << " of " << cells.size() << " cells failed\n";
  return 0;
}

int cmd_export_embeddings(const Overrides& o, const std::optional<std::string>& model_path, bool raw) {
  const exp::RunConfig cfg = load(o);
  const exp::Prepared p = exp::prepare(cfg);
  ad::Tensor features;
  if (raw) {
    features = rf::flatten_features(p.data);
  } else {
    const nn::ModelState state = nn::load_checkpoint(model_path ? fs::path(*model_path) : cfg.out / "model.ckpt");
    features = train::embed_dataset(state, p.data, cfg.train.input_scale);
  }
  const auto pca = metrics::pca_project(features, 2);
  std::ostringstream csv;
  metrics::write_embedding_csv(p.data, pca.coordinates, csv);
  const std::string name = raw ? "embeddings_raw.csv" : "embeddings.csv";
  exp::StagedOutput out(cfg.out);
  out.write(name, csv.str());
  out.commit();
  std::cout << "explained variance " << format_fixed(pca.explained[0], 4) << ", "
            << format_fixed(pca.explained[1], 4) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised crop classification experiments"};
  app.require_subcommand(1);

  Overrides o;
  std::optional<std::string> backbone, model;
  bool raw = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-year dataset CSV");
  add_common(synth, o, false);
  auto* preprocess = app.add_subcommand("preprocess", "write the preprocessed train/test split");
  add_common(preprocess, o);
  auto* train = app.add_subcommand("train", "run the configured method end to end");
  add_common(train, o);
  auto* pretrain = app.add_subcommand("pretrain", "SimSiam pre-training only");
  add_common(pretrain, o);
  auto* finetune = app.add_subcommand("finetune", "fine-tune a pre-trained backbone and evaluate");
  add_common(finetune, o);
  finetune->add_option("--backbone", backbone, "backbone checkpoint (default OUT/backbone.ckpt)");
  auto* eval = app.add_subcommand("eval", "evaluate a model checkpoint on the test split");
  add_common(eval, o);
  eval->add_option("--model", model, "model checkpoint (default OUT/model.ckpt)");
  auto* matrix = app.add_subcommand("matrix", "run a method x preprocessing x scenario matrix");
  add_common(matrix, o);
  auto* embed = app.add_subcommand("export-embeddings", "2-D PCA of embeddings or raw series");
  add_common(embed, o);
  embed->add_option("--model", model, "model checkpoint (default OUT/model.ckpt)");
  embed->add_flag("--raw", raw, "use the raw flattened series instead of a model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(o);
    if (*preprocess) return cmd_preprocess(o);
    if (*train) return cmd_train(o);
    if (*pretrain) return cmd_pretrain(o);
    if (*finetune) return cmd_finetune(o, backbone);
    if (*eval) return cmd_eval(o, model);
    if (*matrix) return cmd_matrix(o);
    if (*embed) return cmd_export_embeddings(o, model, raw);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
