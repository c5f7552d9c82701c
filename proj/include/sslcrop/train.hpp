#pragma once

// Supervised training, SimSiam pre-training and fine-tuning. All loops take
// DN-scale datasets and divide by TrainConfig::input_scale when batching, so
// augmentations always see raw values.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "sslcrop/augment.hpp"
#include "sslcrop/dataio.hpp"
#include "sslcrop/model.hpp"

namespace sslcrop::train {

enum class FinetuneMode { LinearProbe, Full };

std::string_view finetune_mode_name(FinetuneMode mode);
/// Accepts "linear", "linear_probe" and "full".
std::optional<FinetuneMode> finetune_mode_from_name(std::string_view name);

struct TrainConfig {
  double lr = 0.0016612;
  std::size_t batch_size = 256;
  std::size_t epochs_supervised = 300;
  std::size_t epochs_pretrain = 600;
  std::size_t epochs_finetune = 300;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;
  FinetuneMode finetune_mode = FinetuneMode::Full;
  /// DN per model input unit.
  double input_scale = 10000.0;
  /// Collapse warnings are raised only from this (1-based) epoch on.
  std::size_t collapse_warmup_epochs = 300;
  /// Warning threshold as a multiple of 1/sqrt(head_out).
  double collapse_threshold_factor = 0.25;

  void validate() const;
  ad::SgdOptions sgd() const { return {lr, momentum, weight_decay}; }
};

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double loss = 0.0;      ///< mean over the epoch's batches, weighted by size
  std::optional<double> collapse_metric;
  double seconds = 0.0;   ///< wall-clock; never written to reports
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  /// Supervised loss over the whole training set before the first update.
  std::optional<double> initial_loss;
  bool collapse_warning = false;
  std::optional<std::size_t> collapse_warning_epoch;
};

struct TrainResult {
  nn::ModelState state;
  TrainTrace trace;
};

/// Fresh encoder plus linear head, cross-entropy over shuffled mini-batches.
/// Encoder band/step counts are taken from the dataset.
TrainResult train_supervised(const data::Dataset& train, const nn::EncoderConfig& encoder,
                             const TrainConfig& cfg);

/// SimSiam pre-training of a fresh encoder with projector and predictor.
/// Aug1/Aug3 need a fully labeled pool; Aug2 takes any pool.
TrainResult pretrain(const data::Dataset& pool, const aug::AugmentationPolicy& policy,
                     const nn::EncoderConfig& encoder, const nn::SimSiamConfig& heads,
                     const TrainConfig& cfg, const nn::LossOptions& loss = {});

/// Attaches a fresh linear head to `backbone` and trains it (and, in full
/// mode, the encoder) on `labeled`.
TrainResult finetune(const nn::ModelState& backbone, const data::Dataset& labeled,
                     const TrainConfig& cfg);

/// Mean cross-entropy of the classifier over a labeled dataset.
double supervised_loss(const nn::ModelState& state, const data::Dataset& d, double input_scale);

std::vector<data::CropClass> predict_classes(const nn::ModelState& state, const data::Dataset& d,
                                             double input_scale);
/// [N x d_model] encoder outputs.
ad::Tensor embed_dataset(const nn::ModelState& state, const data::Dataset& d, double input_scale);

/// `epoch,loss,collapse_metric`; the metric column is empty when not recorded.
void write_trace_csv(const TrainTrace& trace, std::ostream& out);

}  // namespace sslcrop::train
