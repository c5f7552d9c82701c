#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sslcrop/error.hpp"
#include "sslcrop/synthgen.hpp"
#include "sslcrop/train.hpp"
#include "support/fixtures.hpp"

using namespace sslcrop;
using namespace sslcrop::train;

namespace {

nn::EncoderConfig small_encoder() {
  nn::EncoderConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ff_dim = 32;
  return c;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs_supervised = epochs;
  cfg.epochs_pretrain = epochs;
  cfg.epochs_finetune = epochs;
  cfg.batch_size = 16;
  cfg.seed = 3;
  return cfg;
}

data::Dataset synth_fixture(std::size_t per_class, std::uint64_t seed = 1) {
  synth::SynthConfig sc;
  sc.n_per_class_per_year = per_class;
  sc.years = {2016};
  sc.divergent_year.reset();
  sc.seed = seed;
  return synth::generate(sc);
}

double accuracy(const nn::ModelState& s, const data::Dataset& d, double scale) {
  const auto pred = predict_classes(s, d, scale);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hits += pred[i] == *d.samples[i].label;
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("finetune mode names") {
  CHECK(finetune_mode_from_name("linear") == FinetuneMode::LinearProbe);
  CHECK(finetune_mode_from_name("linear_probe") == FinetuneMode::LinearProbe);
  CHECK(finetune_mode_from_name("full") == FinetuneMode::Full);
  CHECK_FALSE(finetune_mode_from_name("partial"));
}

TEST_CASE("supervised training") {
  SUBCASE("two trivially separable samples are fit within 50 epochs") {
    data::Dataset d = testing::blank_dataset(14);
    d.samples.push_back({"a", 2016, data::CropClass::Corn, ad::Tensor({13, 14}, 500.0)});
    d.samples.push_back({"b", 2016, data::CropClass::Potato, ad::Tensor({13, 14}, 4500.0)});
    auto cfg = quick(50);
    const auto r = train_supervised(d, small_encoder(), cfg);
    CHECK(accuracy(r.state, d, cfg.input_scale) == 1.0);
  }
  SUBCASE("fresh loss is close to ln 6 on balanced data") {
    const auto d = synth_fixture(10);
    const auto r = train_supervised(d, nn::EncoderConfig{}, quick(0));
    REQUIRE(r.trace.initial_loss);
    CHECK(std::abs(*r.trace.initial_loss - std::log(6.0)) <= 0.2);
    CHECK(r.trace.epochs.empty());
  }
  SUBCASE("same seed gives identical traces and weights") {
    const auto d = synth_fixture(4);
    const auto a = train_supervised(d, small_encoder(), quick(3));
    const auto b = train_supervised(d, small_encoder(), quick(3));
    REQUIRE(a.trace.epochs.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(a.trace.epochs[e].loss == b.trace.epochs[e].loss);
    CHECK(a.state.params == b.state.params);
    auto other = quick(3);
    other.seed = 4;
    CHECK_FALSE(train_supervised(d, small_encoder(), other).state.params == a.state.params);
  }
  SUBCASE("loss goes down and stays finite") {
    const auto d = synth_fixture(8);
    auto cfg = quick(30);
    cfg.lr = 0.01;
    const auto r = train_supervised(d, small_encoder(), cfg);
    for (const auto& e : r.trace.epochs) CHECK(std::isfinite(e.loss));
    CHECK(r.trace.epochs.back().loss < r.trace.epochs.front().loss);
  }
  SUBCASE("unlabeled samples are rejected") {
    auto d = synth_fixture(2);
    d.samples[3].label.reset();
    CHECK_THROWS_AS(train_supervised(d, small_encoder(), quick(1)), ContractError);
  }
}

TEST_CASE("pretraining") {
  const auto pool = synth_fixture(4);
  const aug::AugmentationPolicy aug1{.kind = aug::AugKind::Aug1};

  SUBCASE("zero epochs returns the initialization") {
    auto cfg = quick(0);
    const auto r = pretrain(pool, aug1, small_encoder(), {}, cfg);
    nn::EncoderConfig enc = small_encoder();
    const auto init = nn::init_model(enc, {}, derive_seed(cfg.seed, "init"));
    CHECK(r.state.params == init.params);
  }
  SUBCASE("records a collapse metric per epoch and is deterministic") {
    const auto a = pretrain(pool, aug1, small_encoder(), {}, quick(3));
    const auto b = pretrain(pool, aug1, small_encoder(), {}, quick(3));
    REQUIRE(a.trace.epochs.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      REQUIRE(a.trace.epochs[e].collapse_metric);
      CHECK(*a.trace.epochs[e].collapse_metric == *b.trace.epochs[e].collapse_metric);
      CHECK(a.trace.epochs[e].loss >= -1.0);
      CHECK(a.trace.epochs[e].loss <= 1.0);
    }
    CHECK(a.state.params == b.state.params);
  }
  SUBCASE("same-class policies need labels, aug2 does not") {
    auto unlabeled = pool;
    for (auto& s : unlabeled.samples) s.label.reset();
    CHECK_THROWS_AS(pretrain(unlabeled, aug1, small_encoder(), {}, quick(1)), ContractError);
    const aug::AugmentationPolicy aug3{.kind = aug::AugKind::Aug3};
    CHECK_THROWS_AS(pretrain(unlabeled, aug3, small_encoder(), {}, quick(1)), ContractError);
    const aug::AugmentationPolicy aug2{.kind = aug::AugKind::Aug2};
    CHECK_NOTHROW(pretrain(unlabeled, aug2, small_encoder(), {}, quick(1)));
  }
  SUBCASE("sabotaged objective collapses and raises the warning, the real one does not") {
    // Too few samples and same-class pairs are satisfied by one point per class.
    const auto larger = synth_fixture(20);
    auto cfg = quick(150);
    cfg.lr = 0.1;
    cfg.collapse_warmup_epochs = 10;
    const auto r = pretrain(larger, aug1, small_encoder(), {}, cfg,
                            {.stop_gradient = false, .identity_predictor = true});
    const double metric = *r.trace.epochs.back().collapse_metric;
    MESSAGE("sabotage metric " << metric);
    CHECK(metric < 0.1 / std::sqrt(14.0));
    CHECK(r.trace.collapse_warning);
    REQUIRE(r.trace.collapse_warning_epoch);
    CHECK(*r.trace.collapse_warning_epoch >= 10);

    const auto healthy = pretrain(larger, aug1, small_encoder(), {}, cfg);
    const double h = *healthy.trace.epochs.back().collapse_metric;
    MESSAGE("healthy metric " << h);
    CHECK(h > 0.25 / std::sqrt(14.0));
    CHECK_FALSE(healthy.trace.collapse_warning);
  }
  SUBCASE("no warning during warm-up") {
    auto cfg = quick(5);
    cfg.lr = 0.05;
    cfg.collapse_warmup_epochs = 300;
    const auto r = pretrain(pool, aug1, small_encoder(), {}, cfg,
                            {.stop_gradient = false, .identity_predictor = true});
    CHECK_FALSE(r.trace.collapse_warning);
  }
}

TEST_CASE("finetuning") {
  const auto d = synth_fixture(3);
  const auto backbone = pretrain(d, {.kind = aug::AugKind::Aug1}, small_encoder(), {}, quick(2)).state;

  SUBCASE("linear probe leaves the backbone bitwise unchanged") {
    auto cfg = quick(5);
    cfg.finetune_mode = FinetuneMode::LinearProbe;
    const auto r = finetune(backbone, d, cfg);
    for (const auto& name : nn::encoder_parameter_names(backbone)) {
      CHECK(r.state.params.at(name) == backbone.params.at(name));
    }
    CHECK_FALSE(r.state.params.at("classifier.weight") ==
                finetune(backbone, d, quick(0)).state.params.at("classifier.weight"));
  }
  SUBCASE("full mode with zero epochs equals a fresh head on the frozen backbone") {
    auto cfg = quick(0);
    const auto r = finetune(backbone, d, cfg);
    nn::ModelState fresh = backbone;
    nn::attach_classifier(fresh, derive_seed(cfg.seed, "head"));
    CHECK(predict_classes(r.state, d, cfg.input_scale) == predict_classes(fresh, d, cfg.input_scale));
  }
  SUBCASE("initial loss equals the fresh-head loss exactly") {
    auto cfg = quick(2);
    const auto r = finetune(backbone, d, cfg);
    nn::ModelState fresh = backbone;
    nn::attach_classifier(fresh, derive_seed(cfg.seed, "head"));
    REQUIRE(r.trace.initial_loss);
    CHECK(*r.trace.initial_loss == supervised_loss(fresh, d, cfg.input_scale));
  }
  SUBCASE("full mode changes the encoder") {
    const auto r = finetune(backbone, d, quick(2));
    CHECK_FALSE(r.state.params.at("encoder.input.weight") == backbone.params.at("encoder.input.weight"));
  }
  SUBCASE("linear probe separates six random-backbone embeddings") {
    data::Dataset six = data::empty_like(d);
    for (std::size_t c = 0; c < 6; ++c) {
      for (const auto& s : d.samples) {
        if (data::class_slot(*s.label) == c) {
          six.samples.push_back(s);
          break;
        }
      }
    }
    const auto random_backbone = nn::init_model(small_encoder(), {}, 9);
    auto cfg = quick(400);
    cfg.finetune_mode = FinetuneMode::LinearProbe;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.0;
    const auto r = finetune(random_backbone, six, cfg);
    CHECK(accuracy(r.state, six, cfg.input_scale) == 1.0);
  }
  SUBCASE("band mismatch is rejected") {
    const std::vector<std::string> keep{"B04", "B08"};
    auto narrow = data::select_bands(d, keep);
    CHECK_THROWS_AS(finetune(backbone, narrow, quick(1)), ContractError);
  }
}

TEST_CASE("trace csv") {
  TrainTrace t;
  t.epochs.push_back({1, 0.5, std::nullopt, 1.0});
  t.epochs.push_back({2, -0.25, 0.125, 1.0});
  std::ostringstream out;
  write_trace_csv(t, out);
  CHECK(out.str() == "epoch,loss,collapse_metric\n1,0.5,\n2,-0.25,0.125\n");
}
