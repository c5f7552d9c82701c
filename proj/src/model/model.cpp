#include <algorithm>
#include <cmath>

#include "sslcrop/error.hpp"
#include "sslcrop/model.hpp"
#include "sslcrop/rng.hpp"

namespace sslcrop::nn {
namespace {

constexpr double kBatchNormEps = 1e-5;

enum class Init { Uniform, One, Zero };

struct Slot {
  std::string name;
  ad::Shape shape;
  Init init;
  std::size_t fan_in;
};

void linear_slots(std::vector<Slot>& out, const std::string& prefix, std::size_t in,
                  std::size_t out_dim) {
  out.push_back({prefix + ".weight", {in, out_dim}, Init::Uniform, in});
  out.push_back({prefix + ".bias", {out_dim}, Init::Uniform, in});
}

void norm_slots(std::vector<Slot>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gain", {d}, Init::One, 0});
  out.push_back({prefix + ".bias", {d}, Init::Zero, 0});
}

std::vector<Slot> encoder_slots(const EncoderConfig& c) {
  std::vector<Slot> s;
  linear_slots(s, "encoder.input", c.n_bands, c.d_model);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    for (const char* m : {".attn.q", ".attn.k", ".attn.v", ".attn.out"}) {
      linear_slots(s, p + m, c.d_model, c.d_model);
    }
    norm_slots(s, p + ".norm1", c.d_model);
    linear_slots(s, p + ".ff1", c.d_model, c.ff_dim);
    linear_slots(s, p + ".ff2", c.ff_dim, c.d_model);
    norm_slots(s, p + ".norm2", c.d_model);
  }
  return s;
}

std::vector<Slot> head_slots(const EncoderConfig& e, const SimSiamConfig& h) {
  std::vector<Slot> s;
  // A bias in front of batch normalization is cancelled by the mean, so it is left out.
  auto hidden = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    if (h.batch_norm) {
      s.push_back({prefix + ".l1.weight", {in, out}, Init::Uniform, in});
      norm_slots(s, prefix + ".bn1", out);
    } else {
      linear_slots(s, prefix + ".l1", in, out);
    }
  };
  hidden("projector", e.d_model, h.proj_hidden);
  linear_slots(s, "projector.l2", h.proj_hidden, h.head_out);
  hidden("predictor", h.head_out, h.pred_hidden);
  linear_slots(s, "predictor.l2", h.pred_hidden, h.head_out);
  return s;
}

std::vector<Slot> buffer_slots(const SimSiamConfig& h) {
  std::vector<Slot> s;
  if (!h.batch_norm) return s;
  for (const auto& [prefix, d] : {std::pair{std::string("projector.bn1"), h.proj_hidden},
                                  std::pair{std::string("predictor.bn1"), h.pred_hidden}}) {
    s.push_back({prefix + ".running_mean", {d}, Init::Zero, 0});
    s.push_back({prefix + ".running_var", {d}, Init::One, 0});
  }
  return s;
}

std::vector<Slot> classifier_slots(const EncoderConfig& e) {
  std::vector<Slot> s;
  linear_slots(s, "classifier", e.d_model, 6);
  return s;
}

void initialize(ad::ParameterSet& params, const std::vector<Slot>& slots, Rng rng) {
  for (const auto& slot : slots) {
    ad::Tensor t(slot.shape);
    switch (slot.init) {
      case Init::Uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(slot.fan_in));
        for (double& v : t.values()) v = rng.uniform(-bound, bound);
        break;
      }
      case Init::One: t.fill(1.0); break;
      case Init::Zero: break;
    }
    params[slot.name] = std::move(t);
  }
}

std::vector<std::string> names_of(const std::vector<Slot>& slots) {
  std::vector<std::string> out;
  for (const auto& s : slots) out.push_back(s.name);
  return out;
}

void check_slots(const ad::ParameterSet& tensors, const std::vector<Slot>& slots) {
  for (const auto& slot : slots) {
    const auto it = tensors.find(slot.name);
    if (it == tensors.end()) throw ContractError("model is missing tensor " + slot.name);
    if (it->second.shape() != slot.shape) {
      throw ContractError("tensor " + slot.name + " has shape " + ad::shape_string(it->second.shape()) +
                          ", expected " + ad::shape_string(slot.shape));
    }
    if (!it->second.all_finite()) throw ContractError("tensor " + slot.name + " is not finite");
  }
}

ad::Var linear(Graph& g, ad::Var x, const std::string& prefix) {
  return ad::add_bias(ad::matmul(x, g.param(prefix + ".weight")), g.param(prefix + ".bias"));
}

ad::Var head_hidden(Graph& g, ad::Var x, const std::string& prefix) {
  if (!g.state().heads.batch_norm) return linear(g, x, prefix + ".l1");
  return g.batch_norm(ad::matmul(x, g.param(prefix + ".l1.weight")), prefix + ".bn1");
}

}  // namespace

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || ff_dim == 0 || n_bands == 0 || n_steps == 0) {
    throw ContractError("encoder dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ContractError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
  }
  if (dropout != 0.0) throw ContractError("dropout is not supported; set it to 0");
}

void SimSiamConfig::validate() const {
  if (proj_hidden < 1 || head_out < 1 || pred_hidden < 1) {
    throw ContractError("head dimensions must be >= 1");
  }
}

void ModelState::validate() const {
  encoder.validate();
  check_slots(params, encoder_slots(encoder));
  if (has_heads()) {
    heads.validate();
    check_slots(params, head_slots(encoder, heads));
    check_slots(buffers, buffer_slots(heads));
  }
  if (has_classifier()) check_slots(params, classifier_slots(encoder));
}

ModelState init_model(const EncoderConfig& enc, const SimSiamConfig& heads, std::uint64_t seed,
                      bool with_heads) {
  enc.validate();
  heads.validate();
  ModelState state{enc, heads, {}, {}, {}};
  initialize(state.params, encoder_slots(enc), Rng(derive_seed(seed, "encoder")));
  if (with_heads) {
    initialize(state.params, head_slots(enc, heads), Rng(derive_seed(seed, "heads")));
    initialize(state.buffers, buffer_slots(heads), Rng(0));
  }
  return state;
}

void attach_classifier(ModelState& state, std::uint64_t seed) {
  const auto slots = classifier_slots(state.encoder);
  for (const auto& s : slots) state.momentum.erase(s.name);
  initialize(state.params, slots, Rng(derive_seed(seed, "classifier")));
}

std::vector<std::string> encoder_parameter_names(const ModelState& state) {
  return names_of(encoder_slots(state.encoder));
}

std::vector<std::string> head_parameter_names(const ModelState& state) {
  if (!state.has_heads()) return {};
  return names_of(head_slots(state.encoder, state.heads));
}

std::vector<std::string> classifier_parameter_names(const ModelState& state) {
  if (!state.has_classifier()) return {};
  return names_of(classifier_slots(state.encoder));
}

ad::Tensor positional_table(std::size_t steps, std::size_t d_model) {
  ad::Tensor pe({steps, d_model});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, pair / static_cast<double>(d_model));
      pe.at(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ad::Tensor make_batch(const std::vector<const ad::Tensor*>& samples, double scale) {
  if (samples.empty()) throw ContractError("empty batch");
  if (!(scale > 0.0)) throw ContractError("input scale must be positive");
  const std::size_t bands = samples[0]->shape().at(0);
  const std::size_t steps = samples[0]->shape().at(1);
  ad::Tensor out({samples.size(), steps, bands});
  double* dst = out.data();
  for (const ad::Tensor* s : samples) {
    if (s->shape() != samples[0]->shape()) {
      throw DimensionError("batch members differ in shape: " + ad::shape_string(s->shape()) +
                           " vs " + ad::shape_string(samples[0]->shape()));
    }
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < bands; ++b) *dst++ = s->at(b, t) / scale;
    }
  }
  return out;
}

Graph::Graph(ad::Tape& tape, const ModelState& state, std::set<std::string> trainable, Mode mode)
    : tape_(tape), state_(state), trainable_(std::move(trainable)), mode_(mode) {}

ad::Var Graph::param(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  const auto it = state_.params.find(name);
  if (it == state_.params.end()) throw ContractError("model has no tensor " + name);
  const ad::Var v =
      trainable_.count(name) ? tape_.parameter(name, it->second) : tape_.constant(it->second);
  bound_.emplace(name, v);
  return v;
}

ad::Var Graph::batch_norm(ad::Var x, const std::string& prefix) {
  const ad::Var gain = param(prefix + ".gain");
  const ad::Var bias = param(prefix + ".bias");
  if (mode_ == Mode::Train) {
    ad::BatchStats stats;
    const ad::Var y = ad::batch_norm(x, gain, bias, kBatchNormEps, &stats);
    batch_stats_.emplace_back(prefix, std::move(stats));
    return y;
  }
  const ad::Tensor& mean = state_.buffers.at(prefix + ".running_mean");
  const ad::Tensor& var = state_.buffers.at(prefix + ".running_var");
  ad::Tensor shift = mean, inv_std = var;
  for (double& v : shift.values()) v = -v;
  for (double& v : inv_std.values()) v = 1.0 / std::sqrt(v + kBatchNormEps);
  const ad::Var centered = ad::add_bias(x, tape_.constant(std::move(shift)));
  return ad::add_bias(ad::scale_columns(centered, ad::mul(gain, tape_.constant(std::move(inv_std)))),
                      bias);
}

void update_running_stats(ModelState& state, const Graph& g, double momentum) {
  for (const auto& [prefix, stats] : g.batch_stats()) {
    ad::Tensor& mean = state.buffers.at(prefix + ".running_mean");
    ad::Tensor& var = state.buffers.at(prefix + ".running_var");
    const double n = static_cast<double>(stats.rows);
    const double correction = stats.rows > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - momentum) * mean[c] + momentum * stats.mean[c];
      var[c] = (1.0 - momentum) * var[c] + momentum * stats.variance[c] * correction;
    }
  }
}

ad::Var encode(Graph& g, const ad::Tensor& batch) {
  const EncoderConfig& c = g.state().encoder;
  if (batch.rank() != 3 || batch.shape()[1] != c.n_steps || batch.shape()[2] != c.n_bands) {
    throw ContractError("encoder expects [B x " + std::to_string(c.n_steps) + " x " +
                        std::to_string(c.n_bands) + "], got " + ad::shape_string(batch.shape()));
  }
  const std::size_t b = batch.shape()[0];
  const std::size_t rows = b * c.n_steps;

  const ad::Tensor pe = positional_table(c.n_steps, c.d_model);
  ad::Tensor tiled({rows, c.d_model});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto src = pe.row(r % c.n_steps);
    std::copy(src.begin(), src.end(), tiled.row(r).begin());
  }

  ad::Tape& tape = g.tape();
  ad::Var h = linear(g, tape.constant(batch.reshaped({rows, c.n_bands})), "encoder.input");
  h = ad::add(h, tape.constant(std::move(tiled)));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    const ad::Var q = linear(g, h, p + ".attn.q");
    const ad::Var k = linear(g, h, p + ".attn.k");
    const ad::Var v = linear(g, h, p + ".attn.v");
    const ad::Var weights = ad::softmax_rows(ad::attention_scores(q, k, c.n_steps, c.n_heads));
    const ad::Var attended = linear(g, ad::attention_apply(weights, v, c.n_steps, c.n_heads),
                                    p + ".attn.out");
    h = ad::layer_norm(ad::add(h, attended), g.param(p + ".norm1.gain"),
                       g.param(p + ".norm1.bias"));
    const ad::Var ff = linear(g, ad::relu(linear(g, h, p + ".ff1")), p + ".ff2");
    h = ad::layer_norm(ad::add(h, ff), g.param(p + ".norm2.gain"), g.param(p + ".norm2.bias"));
  }
  return ad::max_pool_steps(h, c.n_steps);
}

ad::Var project(Graph& g, ad::Var embedding) {
  return linear(g, ad::relu(head_hidden(g, embedding, "projector")), "projector.l2");
}

ad::Var predict(Graph& g, ad::Var z) {
  return linear(g, ad::relu(head_hidden(g, z, "predictor")), "predictor.l2");
}

ad::Var classifier_logits(Graph& g, ad::Var embedding) {
  if (!g.state().has_classifier()) throw ContractError("model has no classification head");
  return linear(g, embedding, "classifier");
}

ad::Var negative_cosine(ad::Var p, ad::Var z) {
  const double rows = static_cast<double>(p.value().rows());
  return ad::scale(ad::sum(ad::mul(ad::l2_normalize_rows(p), ad::l2_normalize_rows(z))),
                   -1.0 / rows);
}

SimSiamOutputs simsiam_forward(Graph& g, const ad::Tensor& x1, const ad::Tensor& x2,
                               const LossOptions& options) {
  if (!g.state().has_heads()) throw ContractError("model has no projector/predictor heads");
  if (x1.shape() != x2.shape()) {
    throw DimensionError("pair batches differ: " + ad::shape_string(x1.shape()) + " vs " +
                         ad::shape_string(x2.shape()));
  }
  SimSiamOutputs out;
  out.z1 = project(g, encode(g, x1));
  out.z2 = project(g, encode(g, x2));
  out.p1 = options.identity_predictor ? out.z1 : predict(g, out.z1);
  out.p2 = options.identity_predictor ? out.z2 : predict(g, out.z2);
  const ad::Var t1 = options.stop_gradient ? ad::stop_gradient(out.z1) : out.z1;
  const ad::Var t2 = options.stop_gradient ? ad::stop_gradient(out.z2) : out.z2;
  out.loss = ad::add(ad::scale(negative_cosine(out.p1, t2), 0.5),
                     ad::scale(negative_cosine(out.p2, t1), 0.5));
  return out;
}

double collapse_metric(const ad::Tensor& z) {
  const std::size_t n = z.rows(), d = z.cols();
  if (n < 2) throw ContractError("collapse metric needs at least 2 rows");
  ad::Tensor unit = z;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = unit.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double norm = std::max(std::sqrt(sq), 1e-12);
    for (double& v : row) v /= norm;
  }
  double total = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    // Shifted by the first row, so identical rows give exactly zero.
    const double shift = unit.at(0, c);
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += unit.at(r, c) - shift;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double dev = unit.at(r, c) - shift - mean;
      ss += dev * dev;
    }
    total += std::sqrt(ss / static_cast<double>(n - 1));
  }
  return total / static_cast<double>(d);
}

ad::Tensor embed(const ModelState& state, const ad::Tensor& batch) {
  ad::Tape tape;
  Graph g(tape, state, {}, Mode::Eval);
  return encode(g, batch).value();
}

ad::Tensor logits(const ModelState& state, const ad::Tensor& batch) {
  ad::Tape tape;
  Graph g(tape, state, {}, Mode::Eval);
  return classifier_logits(g, encode(g, batch)).value();
}

double simsiam_loss_value(const ModelState& state, const ad::Tensor& x1, const ad::Tensor& x2) {
  ad::Tape tape;
  Graph g(tape, state, {}, Mode::Eval);
  return simsiam_forward(g, x1, x2).loss.value()[0];
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& m) {
  std::vector<std::size_t> out;
  out.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

}  // namespace sslcrop::nn
