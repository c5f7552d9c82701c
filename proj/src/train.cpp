#include "sslcrop/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "sslcrop/error.hpp"
#include "sslcrop/text.hpp"

namespace sslcrop::train {
namespace {

constexpr std::size_t kEvalChunk = 256;

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> label_slots(const data::Dataset& d, std::string_view what) {
  if (d.empty()) throw ContractError(std::string(what) + ": empty dataset");
  std::vector<std::size_t> out;
  out.reserve(d.size());
  for (const auto& s : d.samples) {
    if (!s.label) {
      throw ContractError(std::string(what) + ": sample " + s.field_id + " is unlabeled");
    }
    out.push_back(data::class_slot(*s.label));
  }
  return out;
}

ad::Tensor batch_of(const data::Dataset& d, std::span<const std::size_t> idx, double scale) {
  std::vector<const ad::Tensor*> xs;
  xs.reserve(idx.size());
  for (std::size_t i : idx) xs.push_back(&d.samples[i].reflectance);
  return nn::make_batch(xs, scale);
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "shuffle", epoch));
  rng.shuffle(std::span(order));
  return order;
}

nn::EncoderConfig fit_to(nn::EncoderConfig enc, const data::Dataset& d) {
  enc.n_bands = d.n_bands();
  enc.n_steps = d.n_steps;
  enc.validate();
  return enc;
}

std::vector<std::string> as_vector(const std::set<std::string>& s) { return {s.begin(), s.end()}; }

// Cross-entropy epochs shared by supervised training and fine-tuning.
void classifier_epochs(nn::ModelState& state, const data::Dataset& d,
                       const std::set<std::string>& trainable, std::size_t epochs,
                       const TrainConfig& cfg, TrainTrace& trace) {
  const auto labels = label_slots(d, "training");
  const auto names = as_vector(trainable);
  trace.initial_loss = supervised_loss(state, d, cfg.input_scale);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = shuffled(d.size(), cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::span idx(order.data() + lo, std::min(cfg.batch_size, order.size() - lo));
      std::vector<std::size_t> y;
      for (std::size_t i : idx) y.push_back(labels[i]);
      ad::Tape tape;
      nn::Graph g(tape, state, trainable);
      const ad::Var loss =
          ad::cross_entropy(nn::classifier_logits(g, nn::encode(g, batch_of(d, idx, cfg.input_scale))), y);
      total += loss.value()[0] * static_cast<double>(idx.size());
      ad::sgd_step(state.params, state.momentum, ad::backward(tape, loss), names, cfg.sgd());
    }
    const double mean = total / static_cast<double>(d.size());
    if (!std::isfinite(mean)) {
      throw ConvergenceError(epoch + 1, "training loss became non-finite");
    }
    trace.epochs.push_back(
        {epoch + 1, mean, std::nullopt, std::chrono::duration<double>(Clock::now() - start).count()});
  }
}

}  // namespace

std::string_view finetune_mode_name(FinetuneMode mode) {
  return mode == FinetuneMode::Full ? "full" : "linear";
}

std::optional<FinetuneMode> finetune_mode_from_name(std::string_view name) {
  if (name == "full") return FinetuneMode::Full;
  if (name == "linear" || name == "linear_probe") return FinetuneMode::LinearProbe;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("lr must be positive");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ContractError("weight_decay must be non-negative");
  if (!(input_scale > 0.0)) throw ContractError("input_scale must be positive");
  if (collapse_threshold_factor < 0.0) throw ContractError("collapse_threshold_factor must be >= 0");
}

TrainResult train_supervised(const data::Dataset& train, const nn::EncoderConfig& encoder,
                             const TrainConfig& cfg) {
  cfg.validate();
  label_slots(train, "train_supervised");
  TrainResult r{nn::init_model(fit_to(encoder, train), nn::SimSiamConfig{},
                               derive_seed(cfg.seed, "init"), false),
                {}};
  nn::attach_classifier(r.state, derive_seed(cfg.seed, "head"));
  std::set<std::string> trainable;
  for (const auto& [name, t] : r.state.params) trainable.insert(name);
  classifier_epochs(r.state, train, trainable, cfg.epochs_supervised, cfg, r.trace);
  return r;
}

TrainResult pretrain(const data::Dataset& pool, const aug::AugmentationPolicy& policy,
                     const nn::EncoderConfig& encoder, const nn::SimSiamConfig& heads,
                     const TrainConfig& cfg, const nn::LossOptions& loss_options) {
  cfg.validate();
  policy.validate();
  if (pool.size() < 2) throw InsufficientDataError("pre-training needs at least 2 samples");
  std::optional<aug::ClassPool> classes;
  if (policy.needs_labels()) classes.emplace(pool);

  TrainResult r{nn::init_model(fit_to(encoder, pool), heads, derive_seed(cfg.seed, "init"), true),
                {}};
  nn::ModelState& state = r.state;
  std::set<std::string> trainable;
  for (const auto& [name, t] : state.params) {
    // An identity predictor leaves the predictor weights off the graph.
    if (loss_options.identity_predictor && name.starts_with("predictor.")) continue;
    trainable.insert(name);
  }
  const auto names = as_vector(trainable);
  const double threshold =
      cfg.collapse_threshold_factor / std::sqrt(static_cast<double>(heads.head_out));

  for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    const auto start = Clock::now();
    const auto order = shuffled(pool.size(), cfg.seed, epoch);
    Rng rng(derive_seed(cfg.seed, "augmentation", epoch));
    double total = 0.0;
    ad::Tensor z_all({pool.size(), heads.head_out});
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - lo);
      std::vector<ad::Tensor> first, second;
      for (std::size_t k = lo; k < lo + n; ++k) {
        const data::Sample& anchor = pool.samples[order[k]];
        aug::Pair p;
        switch (policy.kind) {
          case aug::AugKind::Aug1: p = aug::aug1_pair(*classes, *anchor.label, rng); break;
          case aug::AugKind::Aug3: p = aug::aug3_pair(*classes, *anchor.label, policy, rng); break;
          case aug::AugKind::Aug2:
            p = {anchor.reflectance, aug::aug2(anchor.reflectance, policy, rng)};
            break;
        }
        first.push_back(std::move(p.x1));
        second.push_back(std::move(p.x2));
      }
      std::vector<const ad::Tensor*> a, b;
      for (std::size_t k = 0; k < n; ++k) {
        a.push_back(&first[k]);
        b.push_back(&second[k]);
      }
      ad::Tape tape;
      nn::Graph g(tape, state, trainable);
      const auto out = nn::simsiam_forward(g, nn::make_batch(a, cfg.input_scale),
                                           nn::make_batch(b, cfg.input_scale), loss_options);
      total += out.loss.value()[0] * static_cast<double>(n);
      const auto z = out.z1.value().values();
      std::copy(z.begin(), z.end(), z_all.data() + lo * heads.head_out);
      ad::sgd_step(state.params, state.momentum, ad::backward(tape, out.loss), names, cfg.sgd());
      nn::update_running_stats(state, g);
    }
    const double mean = total / static_cast<double>(pool.size());
    if (!std::isfinite(mean)) throw ConvergenceError(epoch + 1, "pre-training loss became non-finite");
    const double metric = nn::collapse_metric(z_all);
    if (!r.trace.collapse_warning && epoch + 1 >= cfg.collapse_warmup_epochs && metric < threshold) {
      r.trace.collapse_warning = true;
      r.trace.collapse_warning_epoch = epoch + 1;
    }
    r.trace.epochs.push_back(
        {epoch + 1, mean, metric, std::chrono::duration<double>(Clock::now() - start).count()});
  }
  return r;
}

TrainResult finetune(const nn::ModelState& backbone, const data::Dataset& labeled,
                     const TrainConfig& cfg) {
  cfg.validate();
  label_slots(labeled, "finetune");
  backbone.validate();
  if (backbone.encoder.n_bands != labeled.n_bands() || backbone.encoder.n_steps != labeled.n_steps) {
    throw ContractError("backbone expects " + std::to_string(backbone.encoder.n_bands) + " bands x " +
                        std::to_string(backbone.encoder.n_steps) + " steps, data has " +
                        std::to_string(labeled.n_bands()) + " x " + std::to_string(labeled.n_steps));
  }
  TrainResult r{backbone, {}};
  r.state.momentum.clear();
  nn::attach_classifier(r.state, derive_seed(cfg.seed, "head"));
  std::set<std::string> trainable;
  for (const auto& n : nn::classifier_parameter_names(r.state)) trainable.insert(n);
  if (cfg.finetune_mode == FinetuneMode::Full) {
    for (const auto& n : nn::encoder_parameter_names(r.state)) trainable.insert(n);
  }
  classifier_epochs(r.state, labeled, trainable, cfg.epochs_finetune, cfg, r.trace);
  return r;
}

double supervised_loss(const nn::ModelState& state, const data::Dataset& d, double input_scale) {
  const auto labels = label_slots(d, "supervised_loss");
  double total = 0.0;
  for (std::size_t lo = 0; lo < d.size(); lo += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, d.size() - lo);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), lo);
    ad::Tape tape;
    nn::Graph g(tape, state, {}, nn::Mode::Eval);
    const auto y = std::span(labels).subspan(lo, n);
    total += ad::cross_entropy(nn::classifier_logits(g, nn::encode(g, batch_of(d, idx, input_scale))), y)
                 .value()[0] *
             static_cast<double>(n);
  }
  return total / static_cast<double>(d.size());
}

std::vector<data::CropClass> predict_classes(const nn::ModelState& state, const data::Dataset& d,
                                             double input_scale) {
  std::vector<data::CropClass> out;
  out.reserve(d.size());
  for (std::size_t lo = 0; lo < d.size(); lo += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, d.size() - lo));
    std::iota(idx.begin(), idx.end(), lo);
    for (std::size_t slot : nn::argmax_rows(nn::logits(state, batch_of(d, idx, input_scale)))) {
      out.push_back(data::class_from_slot(slot));
    }
  }
  return out;
}

ad::Tensor embed_dataset(const nn::ModelState& state, const data::Dataset& d, double input_scale) {
  if (d.empty()) throw ContractError("embed_dataset: empty dataset");
  ad::Tensor out({d.size(), state.encoder.d_model});
  for (std::size_t lo = 0; lo < d.size(); lo += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, d.size() - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const ad::Tensor e = nn::embed(state, batch_of(d, idx, input_scale));
    std::copy(e.values().begin(), e.values().end(), out.data() + lo * out.cols());
  }
  return out;
}

void write_trace_csv(const TrainTrace& trace, std::ostream& out) {
  out << "epoch,loss,collapse_metric\n";
  for (const auto& e : trace.epochs) {
    out << e.epoch << ',' << format_double(e.loss) << ','
        << (e.collapse_metric ? format_double(*e.collapse_metric) : "") << '\n';
  }
}

}  // namespace sslcrop::train
