#pragma once

// Transformer encoder with SimSiam projector/predictor heads and an optional
// linear classifier. Parameters live in a flat name -> tensor map; a Graph
// binds them onto a tape for one forward/backward pass.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sslcrop/autodiff.hpp"
#include "sslcrop/optim.hpp"
#include "sslcrop/tensor.hpp"

namespace sslcrop::nn {

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 3;
  std::size_t ff_dim = 256;
  double dropout = 0.0;  ///< only 0 is supported
  std::size_t n_bands = 13;
  std::size_t n_steps = 14;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct SimSiamConfig {
  std::size_t proj_hidden = 6;
  std::size_t head_out = 14;
  std::size_t pred_hidden = 6;
  /// Batch normalization after the hidden layer of projector and predictor.
  bool batch_norm = true;

  void validate() const;
  bool operator==(const SimSiamConfig&) const = default;
};

struct ModelState {
  EncoderConfig encoder;
  SimSiamConfig heads;
  ad::ParameterSet params;
  ad::ParameterSet momentum;
  /// Running batch-norm statistics; never trained by gradient.
  ad::ParameterSet buffers;

  bool has_heads() const { return params.count("projector.l1.weight") > 0; }
  bool has_classifier() const { return params.count("classifier.weight") > 0; }
  /// Throws ContractError when a tensor is missing, misshaped or non-finite.
  void validate() const;
};

/// Encoder parameters drawn from `seed`; projector and predictor too when
/// `with_heads`. Weights and biases are uniform in +-1/sqrt(fan_in); layer
/// norms start at gain 1, bias 0.
ModelState init_model(const EncoderConfig& enc, const SimSiamConfig& heads, std::uint64_t seed,
                      bool with_heads = true);

/// Replaces any classifier with a fresh d_model -> 6 linear layer.
void attach_classifier(ModelState& state, std::uint64_t seed);

std::vector<std::string> encoder_parameter_names(const ModelState& state);
std::vector<std::string> head_parameter_names(const ModelState& state);
std::vector<std::string> classifier_parameter_names(const ModelState& state);

/// Standard sin/cos table [steps x d_model].
ad::Tensor positional_table(std::size_t steps, std::size_t d_model);

/// Stacks [bands x steps] matrices into a [B x steps x bands] batch, dividing
/// every value by `scale` (pass 1 for already normalized data).
ad::Tensor make_batch(const std::vector<const ad::Tensor*>& samples, double scale);

/// Train mode normalizes with batch statistics and records them; Eval mode
/// uses the running statistics in ModelState::buffers.
enum class Mode { Train, Eval };

/// Puts model parameters on a tape. Names in `trainable` become tape
/// parameters; everything else enters as a constant.
class Graph {
 public:
  Graph(ad::Tape& tape, const ModelState& state, std::set<std::string> trainable,
        Mode mode = Mode::Train);

  ad::Tape& tape() { return tape_; }
  const ModelState& state() const { return state_; }
  Mode mode() const { return mode_; }
  ad::Var param(const std::string& name);

  /// Batch normalization named `prefix` (tensors prefix.gain / prefix.bias).
  ad::Var batch_norm(ad::Var x, const std::string& prefix);
  const std::vector<std::pair<std::string, ad::BatchStats>>& batch_stats() const {
    return batch_stats_;
  }

 private:
  ad::Tape& tape_;
  const ModelState& state_;
  std::set<std::string> trainable_;
  Mode mode_;
  std::map<std::string, ad::Var> bound_;
  std::vector<std::pair<std::string, ad::BatchStats>> batch_stats_;
};

/// Folds recorded batch statistics into the running buffers:
/// r = (1 - momentum) * r + momentum * batch (variance with n-1 divisor).
void update_running_stats(ModelState& state, const Graph& g, double momentum = 0.1);

/// [B x steps x bands] -> [B x d_model].
ad::Var encode(Graph& g, const ad::Tensor& batch);
ad::Var project(Graph& g, ad::Var embedding);
ad::Var predict(Graph& g, ad::Var z);
/// [B x d_model] -> [B x 6].
ad::Var classifier_logits(Graph& g, ad::Var embedding);

/// -mean_b cos(p_b, z_b), both rows epsilon-normalized.
ad::Var negative_cosine(ad::Var p, ad::Var z);

struct LossOptions {
  bool stop_gradient = true;
  /// p = z; used to provoke representational collapse.
  bool identity_predictor = false;
};

struct SimSiamOutputs {
  ad::Var loss;
  ad::Var z1, z2, p1, p2;
};

/// loss = D(p1, sg(z2))/2 + D(p2, sg(z1))/2.
SimSiamOutputs simsiam_forward(Graph& g, const ad::Tensor& x1, const ad::Tensor& x2,
                               const LossOptions& options = {});

/// Mean over channels of the per-channel standard deviation (n-1 divisor) of
/// the l2-normalized rows. Reference value for isotropic rows: 1/sqrt(dim).
double collapse_metric(const ad::Tensor& z);

/// Inference helpers; no parameter receives a gradient.
ad::Tensor embed(const ModelState& state, const ad::Tensor& batch);
ad::Tensor logits(const ModelState& state, const ad::Tensor& batch);
double simsiam_loss_value(const ModelState& state, const ad::Tensor& x1, const ad::Tensor& x2);

/// Row-wise argmax; ties go to the lowest column.
std::vector<std::size_t> argmax_rows(const ad::Tensor& m);

/// Text checkpoint; see README for the layout. Values round-trip exactly.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace sslcrop::nn
