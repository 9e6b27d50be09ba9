#include <doctest.h>

#include <cmath>
#include <set>

#include "syp/prompts.hpp"
#include "syp/train.hpp"
#include "syp/util.hpp"
#include "test_support.hpp"

using namespace syp;
using test::tiny_config;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

BackboneBundle frozen_backbone(const ExperimentConfig& cfg) {
  auto cfg2 = cfg;
  cfg2.pretrain_steps = 5;
  auto splits = synth_dataset(cfg2.synth_spec(), cfg2.data_seed);
  return pretrain_backbone(cfg2, splits.train);
}

}  // namespace

TEST_CASE("compute_loss: worked examples") {
  Tape tape;
  // binary, logit 0, label 1 -> ln 2
  DiffValue l1 = tape.constant(Tensor::row({0.0}));
  CHECK(compute_loss(tape, l1, {1.0}, TaskKind::Binary).value()[0] ==
        doctest::Approx(kLn2).epsilon(1e-12));

  // multiclass C=2, logits [0,0], class 0 -> ln 2
  DiffValue l2 = tape.constant(Tensor::row({0.0, 0.0}));
  CHECK(compute_loss(tape, l2, {1.0, 0.0}, TaskKind::Multiclass).value()[0] ==
        doctest::Approx(kLn2).epsilon(1e-12));

  // multilabel C=3, logits zero, labels [1,0,1] -> mean of three ln 2 terms
  DiffValue l3 = tape.constant(Tensor::row({0.0, 0.0, 0.0}));
  CHECK(compute_loss(tape, l3, {1.0, 0.0, 1.0}, TaskKind::Multilabel).value()[0] ==
        doctest::Approx(kLn2).epsilon(1e-12));

  CHECK_THROWS_AS(compute_loss(tape, l2, {1.0, 1.0}, TaskKind::Multiclass), InputError);
  CHECK_THROWS_AS(compute_loss(tape, l2, {0.0, 0.0}, TaskKind::Multiclass), InputError);
  CHECK_THROWS_AS(compute_loss(tape, l1, {0.5}, TaskKind::Binary), InputError);
  CHECK_THROWS_AS(compute_loss(tape, l3, {1.0, 0.0, 2.0}, TaskKind::Multilabel), InputError);
  CHECK_THROWS_AS(compute_loss(tape, l3, {1.0}, TaskKind::Multilabel), InputError);
}

TEST_CASE("lr_at: ramp, peak, decay, and shape properties") {
  double total = 1000, peak = 1e-3;
  CHECK(lr_at(0, total, peak, 0.1) == 0.0);
  CHECK(lr_at(100, total, peak, 0.1) == doctest::Approx(peak).epsilon(1e-15));
  CHECK(lr_at(total, total, peak, 0.1) == 0.0);

  // piecewise-linear, continuous, nonnegative
  double prev = 0.0;
  for (int s = 0; s <= 1000; ++s) {
    double lr = lr_at(s, total, peak, 0.1);
    CHECK(lr >= 0.0);
    CHECK(lr <= peak + 1e-18);
    double step_change = std::abs(lr - prev);
    if (s > 0) CHECK(step_change < peak * 0.011);  // no jumps beyond one linear segment slope
    prev = lr;
  }
  // linearity inside each segment
  CHECK(lr_at(50, total, peak, 0.1) == doctest::Approx(peak * 0.5).epsilon(1e-12));
  CHECK(lr_at(550, total, peak, 0.1) == doctest::Approx(peak * 0.5).epsilon(1e-12));

  CHECK_THROWS_AS(lr_at(-1, total, peak, 0.1), ContractError);
  CHECK_THROWS_AS(lr_at(total + 1, total, peak, 0.1), ContractError);
}

TEST_CASE("adamw_step: worked examples") {
  // zero gradient, decay only
  {
    Tensor p = Tensor::row({1.0});
    AdamW opt(0.9, 0.999, 1e-8, 0.02);
    std::vector<std::pair<std::string, Tensor*>> params{{"p", &p}};
    opt.step(params, {Tensor::row({0.0})}, 0.1);
    CHECK(p[0] == doctest::Approx(0.998).epsilon(1e-15));
  }
  // first step with unit gradient: param moves by ~ -lr
  {
    Tensor p = Tensor::row({0.0});
    AdamW opt(0.9, 0.999, 1e-8, 0.0);
    std::vector<std::pair<std::string, Tensor*>> params{{"p", &p}};
    opt.step(params, {Tensor::row({1.0})}, 0.1);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
  }
  // wd = 0, g = 0: unchanged
  {
    Tensor p = Tensor::row({0.7});
    AdamW opt(0.9, 0.999, 1e-8, 0.0);
    std::vector<std::pair<std::string, Tensor*>> params{{"p", &p}};
    opt.step(params, {Tensor::row({0.0})}, 0.1);
    CHECK(p[0] == 0.7);
  }
  // non-finite gradient aborts with the parameter name and step
  {
    Tensor p = Tensor::row({0.0});
    AdamW opt(0.9, 0.999, 1e-8, 0.0);
    std::vector<std::pair<std::string, Tensor*>> params{{"bad_param", &p}};
    try {
      opt.step(params, {Tensor::row({std::nan("")})}, 0.1);
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      std::string msg = e.what();
      CHECK(msg.find("bad_param") != std::string::npos);
      CHECK(msg.find("step 1") != std::string::npos);
    }
  }
}

TEST_CASE("run_batch: thread count does not change the result") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 31);
  auto items = registry_items(model.trainable_registry());

  auto splits = synth_dataset(cfg.synth_spec(), cfg.data_seed);
  std::vector<const ModalitySample*> batch;
  for (size_t i = 0; i < 8; ++i) batch.push_back(&splits.train[i]);

  GraphBuilder build = [&](Tape& tape, const ModalitySample& s) -> SampleGraph {
    WeightBinder bind(tape, true);
    SampleGraph g;
    for (auto& [name, tensor] : items) g.params.push_back(bind(name, *tensor));
    DiffValue logits = forward_syp(tape, s, backbone, model, nullptr, bind);
    g.loss = tape.scale(compute_loss(tape, logits, s.label, cfg.task), 1.0 / 8.0);
    return g;
  };

  BatchGrads one = run_batch(batch, build, items.size(), 1);
  BatchGrads two = run_batch(batch, build, items.size(), 2);
  CHECK(one.loss == two.loss);
  for (size_t p = 0; p < one.grads.size(); ++p) CHECK(one.grads[p] == two.grads[p]);
}

TEST_CASE("train_prompts: loss decreases, determinism, freeze, changed set == registry") {
  auto cfg = tiny_config();
  cfg.epochs = 3;
  apply_eval_seed(cfg, 17);
  auto splits = synth_dataset(cfg.synth_spec(), cfg.data_seed);
  BackboneBundle backbone = frozen_backbone(cfg);
  uint64_t backbone_before = backbone.checksum();

  MissingPattern train_pattern =
      generate_pattern(cfg.n_train, cfg.eta_train, cfg.kind_train, cfg.pattern_seed_train);
  MissingPattern val_pattern =
      generate_pattern(cfg.n_val, cfg.eta_test, cfg.kind_test, cfg.pattern_seed_val);

  auto run_once = [&](PromptModel& model) {
    FeatureCache cache;
    return train_prompts(cfg, backbone, model, splits.train, train_pattern, splits.val,
                         val_pattern, cache);
  };

  PromptModel m1 = PromptModel::init(cfg, cfg.train_seed);
  auto before = m1.named_weights();
  auto registry_names = [&]() {
    std::set<std::string> names;
    for (auto& [n, p] : m1.trainable_registry()) names.insert(n);
    return names;
  }();
  TrainResult r1 = run_once(m1);

  CHECK(r1.log.size() == 3);
  CHECK(r1.log.back().train_loss < r1.log.front().train_loss);
  CHECK(backbone.checksum() == backbone_before);  // frozen bitwise

  // changed-parameter set equals the registry exactly
  auto after = m1.named_weights();
  for (auto& [name, t] : before) {
    bool changed = !(t == after.at(name));
    bool in_registry = registry_names.count(name) != 0;
    CHECK(changed == in_registry);
  }

  PromptModel m2 = PromptModel::init(cfg, cfg.train_seed);
  TrainResult r2 = run_once(m2);
  REQUIRE(r1.log.size() == r2.log.size());
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_metric == r2.log[i].val_metric);
    CHECK(r1.log[i].lr == r2.log[i].lr);
  }
  CHECK(m1.checksum() == m2.checksum());
}

TEST_CASE("train_prompts: descent check with a tiny lr") {
  auto cfg = tiny_config();
  cfg.lr = 1e-6;
  cfg.weight_decay = 0.0;
  cfg.warmup_frac = 0.5;
  BackboneBundle backbone = frozen_backbone(cfg);
  auto splits = synth_dataset(cfg.synth_spec(), cfg.data_seed);

  Rng rng(555);
  for (int trial = 0; trial < 20; ++trial) {
    PromptModel model = PromptModel::init(cfg, 600 + trial);
    auto items = registry_items(model.trainable_registry());
    std::vector<const ModalitySample*> batch;
    for (int i = 0; i < 8; ++i)
      batch.push_back(&splits.train[static_cast<size_t>(rng.below(cfg.n_train))]);

    GraphBuilder build = [&](Tape& tape, const ModalitySample& s) -> SampleGraph {
      WeightBinder bind(tape, true);
      SampleGraph g;
      for (auto& [name, tensor] : items) g.params.push_back(bind(name, *tensor));
      DiffValue logits = forward_syp(tape, s, backbone, model, nullptr, bind);
      g.loss = tape.scale(compute_loss(tape, logits, s.label, cfg.task), 1.0 / 8.0);
      return g;
    };

    BatchGrads g0 = run_batch(batch, build, items.size(), 0);
    AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, 0.0);
    opt.step(items, g0.grads, 1e-6);
    BatchGrads g1 = run_batch(batch, build, items.size(), 0);
    CHECK(g1.loss <= g0.loss + 1e-6);
  }
}

TEST_CASE("a backbone parameter in the registry is a configuration error") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 32);

  ParamRegistry clean = model.trainable_registry();
  CHECK_NOTHROW(check_registry_excludes_backbone(clean, backbone));

  // aliased by identity under an innocent name
  ParamRegistry by_identity = clean;
  backbone.for_each_weight([&](const std::string& n, Tensor& t) {
    if (n == "backbone.image.cls") by_identity["innocent_name"] = &t;
  });
  CHECK_THROWS_AS(check_registry_excludes_backbone(by_identity, backbone), ContractError);

  // a backbone name pointing at fresh storage
  ParamRegistry by_name = clean;
  Tensor decoy(1, 1);
  by_name["backbone.text.cls"] = &decoy;
  CHECK_THROWS_AS(check_registry_excludes_backbone(by_name, backbone), ContractError);
}
