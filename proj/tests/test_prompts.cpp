#include <doctest.h>

#include <cmath>
#include <set>

#include "syp/experiment.hpp"
#include "syp/grad_check.hpp"
#include "syp/prompts.hpp"
#include "syp/util.hpp"
#include "test_support.hpp"

using namespace syp;
using test::tiny_config;

namespace {

ModalitySample make_sample(const ExperimentConfig& cfg, uint64_t seed, MissingCase c) {
  Rng rng(seed);
  ModalitySample s;
  s.id = static_cast<int>(seed);
  for (int i = 0; i < cfg.t_img; ++i) s.image_tokens.push_back(rng.below(cfg.vocab_img));
  for (int i = 0; i < cfg.t_txt; ++i) s.text_tokens.push_back(rng.below(cfg.vocab_txt));
  s.label.assign(static_cast<size_t>(cfg.n_classes), 0.0);
  s.label[static_cast<size_t>(rng.below(cfg.n_classes))] = 1.0;
  return apply_mask(s, c);
}

BackboneBundle frozen_backbone(const ExperimentConfig& cfg) {
  auto cfg2 = cfg;
  cfg2.pretrain_steps = 5;
  auto splits = synth_dataset(cfg2.synth_spec(), cfg2.data_seed);
  return pretrain_backbone(cfg2, splits.train);
}

void zero_all(Tensor& t) { t.fill(0.0); }

}  // namespace

TEST_CASE("pool_features: zero blocks for missing modalities, concatenation law") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);

  auto text_missing = make_sample(cfg, 1, MissingCase::TextMissing);
  FeatureBundle fb = pool_features(text_missing, backbone);
  for (int j = 0; j < cfg.d; ++j) {
    CHECK(fb.x_txt[static_cast<size_t>(j)] == 0.0);
    CHECK(fb.x_cat[static_cast<size_t>(cfg.d + j)] == 0.0);
    CHECK(fb.x_cat[static_cast<size_t>(j)] == fb.x_img[static_cast<size_t>(j)]);
  }

  auto complete = make_sample(cfg, 2, MissingCase::Complete);
  FeatureBundle fc = pool_features(complete, backbone);
  bool img_nonzero = false, txt_nonzero = false;
  for (int j = 0; j < cfg.d; ++j) {
    img_nonzero |= fc.x_img[static_cast<size_t>(j)] != 0.0;
    txt_nonzero |= fc.x_txt[static_cast<size_t>(j)] != 0.0;
  }
  CHECK(img_nonzero);
  CHECK(txt_nonzero);

  FeatureBundle fc2 = pool_features(complete, backbone);
  CHECK(fc.x_cat == fc2.x_cat);  // determinism
}

TEST_CASE("compute_scaling_factor: zero adapter gives exactly 0.5 everywhere") {
  auto cfg = tiny_config();
  PromptStack stack = PromptStack::init(cfg, 3);
  zero_all(stack.adapter_w1);
  zero_all(stack.adapter_b1);
  zero_all(stack.adapter_w2);
  zero_all(stack.adapter_b2);

  Rng rng(4);
  Tape tape;
  WeightBinder bind(tape, false);
  DiffValue x = tape.constant(test::random_tensor(1, 2 * cfg.d, rng));
  DiffValue s = compute_scaling_factor(tape, x, stack, bind);
  for (int j = 0; j < cfg.d; ++j) CHECK(s.value()[static_cast<size_t>(j)] == 0.5);
}

TEST_CASE("compute_scaling_factor: zero text block contributes nothing when b1 = 0") {
  auto cfg = tiny_config();
  PromptStack stack = PromptStack::init(cfg, 5);
  zero_all(stack.adapter_b1);

  Rng rng(6);
  Tensor x(1, 2 * cfg.d);
  for (int j = 0; j < cfg.d; ++j) x[static_cast<size_t>(j)] = rng.normal();  // text half stays zero

  auto run = [&](const PromptStack& st) {
    Tape tape;
    WeightBinder bind(tape, false);
    return compute_scaling_factor(tape, tape.constant(x), st, bind).value();
  };
  Tensor base = run(stack);

  PromptStack poked_text = stack;
  for (int r = cfg.d; r < 2 * cfg.d; ++r)
    for (int c = 0; c < poked_text.adapter_w1.cols(); ++c) poked_text.adapter_w1.at(r, c) += 3.0;
  CHECK(run(poked_text) == base);  // zero features kill the text rows of W1

  PromptStack poked_img = stack;
  poked_img.adapter_w1.at(0, 0) += 3.0;
  CHECK_FALSE(run(poked_img) == base);
}

TEST_CASE("compute_scaling_factor: range contract and W1 gradient") {
  auto cfg = tiny_config();
  PromptStack stack = PromptStack::init(cfg, 7);
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x(1, 2 * cfg.d);
    bool zero_img = trial % 3 == 0, zero_txt = trial % 3 == 1;
    for (int j = 0; j < cfg.d; ++j) {
      x[static_cast<size_t>(j)] = zero_img ? 0.0 : rng.normal(0.0, 3.0);
      x[static_cast<size_t>(cfg.d + j)] = zero_txt ? 0.0 : rng.normal(0.0, 3.0);
    }
    Tape tape;
    WeightBinder bind(tape, false);
    DiffValue s = compute_scaling_factor(tape, tape.constant(x), stack, bind);
    for (size_t j = 0; j < s.value().numel(); ++j) {
      CHECK(s.value()[j] > 0.0);
      CHECK(s.value()[j] < 1.0);
    }
  }

  // gradient of sum(S_d) w.r.t. W1
  Tensor x = test::random_tensor(1, 2 * cfg.d, rng);
  auto f = [&]() {
    Tape tape;
    WeightBinder bind(tape, true);
    return tape.sum(compute_scaling_factor(tape, tape.constant(x), stack, bind)).value()[0];
  };
  auto grads = [&]() {
    Tape tape;
    WeightBinder bind(tape, true);
    DiffValue w1 = bind("prompt.adapter.w1", stack.adapter_w1);
    tape.backward(tape.sum(compute_scaling_factor(tape, tape.constant(x), stack, bind)));
    return std::vector<Tensor>{w1.grad()};
  };
  ParamRef p{"w1", &stack.adapter_w1};
  auto res = finite_diff_check(f, std::span<const ParamRef>(&p, 1), grads, 1e-6);
  CHECK(res.ok);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("modulate_base_prompts: identity, annihilation, elementwise example") {
  auto cfg = tiny_config();
  cfg.prompt_len = 2;
  cfg.d = 2;
  cfg.d_static = 2;
  cfg.heads = 1;
  PromptStack stack = PromptStack::init(cfg, 9);
  stack.base_img[0] = Tensor::from({{1, 2}, {3, 4}});

  auto run = [&](Tensor s_val) {
    Tape tape;
    WeightBinder bind(tape, false);
    DiffValue s = tape.constant(std::move(s_val));
    auto [pi, pt] = modulate_base_prompts(tape, stack, MissingCase::Complete, s, bind);
    return std::make_pair(pi.value(), pt.value());
  };

  auto [ones_i, ones_t] = run(Tensor::full(1, 2, 1.0));
  CHECK(ones_i == stack.base_img[0]);
  CHECK(ones_t == stack.base_txt[0]);

  auto [zero_i, zero_t] = run(Tensor(1, 2));
  CHECK(zero_i == Tensor(2, 2));
  CHECK(zero_t == Tensor(2, 2));

  auto [ex_i, ex_t] = run(Tensor::row({0.5, 2}));
  CHECK(ex_i == Tensor::from({{0.5, 4}, {1.5, 8}}));
}

TEST_CASE("project_static: identity and zero maps, projection sensitivity") {
  auto cfg = tiny_config();
  PromptStack stack = PromptStack::init(cfg, 10);
  // exact identity / zero maps
  stack.proj_img.fill(0.0);
  for (int i = 0; i < cfg.d; ++i) stack.proj_img.at(i, i) = 1.0;
  stack.proj_txt.fill(0.0);

  Tape tape;
  WeightBinder bind(tape, false);
  auto [pi, pt] = project_static(tape, stack, bind);
  CHECK(pi.value() == stack.static_prompt);
  CHECK(pt.value() == Tensor(cfg.prompt_len, cfg.d));

  // perturbing one map moves only its own projection
  PromptStack perturbed = stack;
  perturbed.proj_img.at(0, 1) += 0.25;
  Tape tape2;
  WeightBinder bind2(tape2, false);
  auto [pi2, pt2] = project_static(tape2, perturbed, bind2);
  CHECK_FALSE(pi2.value() == pi.value());
  CHECK(pt2.value() == pt.value());
}

TEST_CASE("combine_synergistic: additive law") {
  Rng rng(11);
  Tensor d_img = test::random_tensor(3, 4, rng), d_txt = test::random_tensor(3, 4, rng);
  Tensor s_img = test::random_tensor(3, 4, rng), s_txt = test::random_tensor(3, 4, rng);
  Tape tape;
  auto dyn = std::make_pair(tape.constant(d_img), tape.constant(d_txt));
  auto stat = std::make_pair(tape.constant(s_img), tape.constant(s_txt));
  auto [ci, ct] = combine_synergistic(tape, dyn, stat);
  for (size_t i = 0; i < ci.value().numel(); ++i) {
    CHECK(ci.value()[i] == d_img[i] + s_img[i]);
    CHECK(ci.value()[i] - s_img[i] == d_img[i]);  // output - static = dynamic exactly
  }

  auto zero = std::make_pair(tape.constant(Tensor(3, 4)), tape.constant(Tensor(3, 4)));
  auto [zi, zt] = combine_synergistic(tape, zero, stat);
  CHECK(zi.value() == s_img);
  auto [di, dt] = combine_synergistic(tape, dyn, zero);
  CHECK(di.value() == d_img);
}

TEST_CASE("propagate_prompts: depth-1 passthrough and the constant-beta case") {
  auto cfg = tiny_config();
  cfg.prompt_depth = 1;
  PromptStack stack1 = PromptStack::init(cfg, 12);
  CHECK(stack1.prop_img.empty());
  Rng rng(13);
  Tensor p_img = test::random_tensor(cfg.prompt_len, cfg.d, rng);
  Tensor p_txt = test::random_tensor(cfg.prompt_len, cfg.d, rng);
  {
    Tape tape;
    WeightBinder bind(tape, false);
    auto lv = propagate_prompts(tape, tape.constant(p_img), tape.constant(p_txt), stack1, bind);
    REQUIRE(lv.image.size() == 1);
    CHECK(lv.image[0].value() == p_img);
  }

  cfg.prompt_depth = 3;
  PromptStack stack3 = PromptStack::init(cfg, 12);
  double beta = 0.37;
  for (auto* props : {&stack3.prop_img, &stack3.prop_txt}) {
    for (auto& l : *props) {
      zero_all(l.w_in);
      zero_all(l.b_in);
      zero_all(l.w_out);
      zero_all(l.b_out);
      l.ln_g = Tensor::full(1, cfg.d, 1.0);
      l.ln_b = Tensor::full(1, cfg.d, beta);
    }
  }
  {
    Tape tape;
    WeightBinder bind(tape, false);
    auto lv = propagate_prompts(tape, tape.constant(p_img), tape.constant(p_txt), stack3, bind);
    REQUIRE(lv.image.size() == 3);
    for (size_t level = 1; level < 3; ++level)
      for (size_t i = 0; i < lv.image[level].value().numel(); ++i)
        CHECK(lv.image[level].value()[i] == doctest::Approx(beta).epsilon(1e-12));
  }
}

TEST_CASE("propagate_prompts: gradient of a level-M readout w.r.t. level-1 prompts") {
  auto cfg = tiny_config();
  cfg.prompt_depth = 2;
  PromptStack stack = PromptStack::init(cfg, 14);
  Rng rng(15);
  Tensor p_img = test::random_tensor(cfg.prompt_len, cfg.d, rng);
  Tensor p_txt = test::random_tensor(cfg.prompt_len, cfg.d, rng);
  Tensor w = test::random_tensor(cfg.prompt_len, cfg.d, rng);

  auto build = [&](Tape& tape, DiffValue& pi, DiffValue& pt) {
    WeightBinder bind(tape, false);
    pi = tape.param(&p_img);
    pt = tape.param(&p_txt);
    auto lv = propagate_prompts(tape, pi, pt, stack, bind);
    return tape.sum(tape.mul(tape.add(lv.image.back(), lv.text.back()), tape.constant(w)));
  };
  auto f = [&]() {
    Tape t;
    DiffValue a, b;
    return build(t, a, b).value()[0];
  };
  auto grads = [&]() {
    Tape t;
    DiffValue a, b;
    t.backward(build(t, a, b));
    return std::vector<Tensor>{a.grad(), b.grad()};
  };
  std::vector<ParamRef> params{{"p_img", &p_img}, {"p_txt", &p_txt}};
  auto res = finite_diff_check(f, params, grads, 1e-6);
  CHECK(res.ok);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("fuse_and_classify: bias law, concatenation order, shapes") {
  auto cfg = tiny_config();
  Rng rng(16);
  for (int c : {1, 23, 101}) {
    ClassifierHead head;
    head.w = Tensor(2 * cfg.d, c);
    head.b = test::random_tensor(1, c, rng);
    Tape tape;
    WeightBinder bind(tape, false);
    DiffValue a = tape.constant(test::random_tensor(1, cfg.d, rng));
    DiffValue b = tape.constant(test::random_tensor(1, cfg.d, rng));
    DiffValue logits = fuse_and_classify(tape, a, b, head, bind);
    CHECK(logits.cols() == c);
    CHECK(logits.value() == head.b);  // zero weights -> bias only
  }

  ClassifierHead head;
  head.w = test::random_tensor(2 * cfg.d, 3, rng);
  head.b = Tensor(1, 3);
  Tape tape;
  WeightBinder bind(tape, false);
  DiffValue a = tape.constant(test::random_tensor(1, cfg.d, rng));
  DiffValue b = tape.constant(test::random_tensor(1, cfg.d, rng));
  auto ab = fuse_and_classify(tape, a, b, head, bind).value();
  auto ba = fuse_and_classify(tape, b, a, head, bind).value();
  CHECK_FALSE(ab == ba);  // image-then-text order matters under a generic head
}

TEST_CASE("forward_syp: case routing changes logits; zero prompts + zero head give the bias") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 20);

  // the same underlying content under different missing cases
  ModalitySample complete = make_sample(cfg, 30, MissingCase::Complete);
  ModalitySample text_missing = apply_mask(complete, MissingCase::TextMissing);
  ModalitySample image_missing = apply_mask(complete, MissingCase::ImageMissing);
  auto logits_of = [&](const ModalitySample& s) {
    Tape tape;
    WeightBinder bind(tape, false);
    return forward_syp(tape, s, backbone, model, nullptr, bind).value();
  };
  Tensor lc = logits_of(complete);
  CHECK_FALSE(lc == logits_of(text_missing));
  CHECK_FALSE(lc == logits_of(image_missing));
  CHECK_FALSE(logits_of(text_missing) == logits_of(image_missing));

  PromptModel zeroed = model;
  zeroed.stack.for_each_weight([](const std::string&, Tensor& t) { t.fill(0.0); });
  zeroed.head.w.fill(0.0);
  Rng rng(21);
  zeroed.head.b = test::random_tensor(1, cfg.n_classes, rng);
  Tape tape;
  WeightBinder bind(tape, false);
  CHECK(forward_syp(tape, complete, backbone, zeroed, nullptr, bind).value() == zeroed.head.b);
}

TEST_CASE("forward_syp: cached features reproduce the uncached path bitwise") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 22);
  for (auto c : {MissingCase::Complete, MissingCase::TextMissing, MissingCase::ImageMissing}) {
    ModalitySample s = make_sample(cfg, 40 + static_cast<int>(c), c);
    FeatureBundle fb = pool_features(s, backbone);
    Tape t1, t2;
    WeightBinder b1(t1, false), b2(t2, false);
    CHECK(forward_syp(t1, s, backbone, model, nullptr, b1).value() ==
          forward_syp(t2, s, backbone, model, &fb, b2).value());
  }
}

TEST_CASE("forward_syp: missing-input insensitivity to stored text tokens") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 23);
  ModalitySample s = make_sample(cfg, 50, MissingCase::TextMissing);
  ModalitySample poked = s;
  for (auto& t : poked.text_tokens) t = (t + 7) % cfg.vocab_txt;
  Tape t1, t2;
  WeightBinder b1(t1, false), b2(t2, false);
  CHECK(forward_syp(t1, s, backbone, model, nullptr, b1).value() ==
        forward_syp(t2, poked, backbone, model, nullptr, b2).value());
}

TEST_CASE("forward_syp: ablation-path exactness (additive decomposition)") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel syn = PromptModel::init(cfg, 24);
  syn.variant = Variant::Synergistic;

  // static zeroed-and-frozen synergistic == dynamic-only, bitwise
  PromptModel syn_no_static = syn;
  syn_no_static.stack.static_prompt.fill(0.0);
  syn_no_static.stack.proj_img.fill(0.0);
  syn_no_static.stack.proj_txt.fill(0.0);
  PromptModel dyn = syn_no_static;
  dyn.variant = Variant::DynamicOnly;

  // base zeroed-and-frozen synergistic == static-only, bitwise
  PromptModel syn_no_dyn = syn;
  for (auto& t : syn_no_dyn.stack.base_img) t.fill(0.0);
  for (auto& t : syn_no_dyn.stack.base_txt) t.fill(0.0);
  PromptModel stat = syn_no_dyn;
  stat.variant = Variant::StaticOnly;

  for (int i = 0; i < 20; ++i) {
    auto c = static_cast<MissingCase>(i % 3);
    ModalitySample s = make_sample(cfg, 100 + i, c);
    auto run = [&](const PromptModel& m) {
      Tape tape;
      WeightBinder bind(tape, false);
      return forward_syp(tape, s, backbone, m, nullptr, bind).value();
    };
    CHECK(run(syn_no_static) == run(dyn));
    CHECK(run(syn_no_dyn) == run(stat));
  }
}

TEST_CASE("forward_syp: case routing trains only the selected base table") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 25);
  ParamRegistry reg = model.trainable_registry();
  auto items = registry_items(reg);

  for (auto c : {MissingCase::Complete, MissingCase::TextMissing, MissingCase::ImageMissing}) {
    ModalitySample s = make_sample(cfg, 200 + static_cast<int>(c), c);
    Tape tape;
    WeightBinder bind(tape, true);
    std::map<std::string, DiffValue> bound;
    for (auto& [name, tensor] : items) bound[name] = bind(name, *tensor);
    DiffValue logits = forward_syp(tape, s, backbone, model, nullptr, bind);
    tape.backward(tape.sum(logits));
    for (auto& [name, node] : bound) {
      if (name.rfind("prompt.base.", 0) != 0) continue;
      bool is_selected = name.find(to_string(c)) != std::string::npos;
      double norm = 0.0;
      for (size_t i = 0; i < node.grad().numel(); ++i) norm += std::abs(node.grad()[i]);
      if (is_selected) {
        CHECK(norm > 0.0);
      } else {
        CHECK(norm == 0.0);
      }
    }
  }
}

TEST_CASE("trainable registry: variants expose exactly their paths, never the backbone") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  std::set<const Tensor*> backbone_ptrs;
  backbone.for_each_weight([&](const std::string&, Tensor& t) { backbone_ptrs.insert(&t); });

  auto names_of = [&](Variant v, bool adapter) {
    PromptModel m = PromptModel::init(cfg, 26);
    m.variant = v;
    m.adapter_enabled = adapter;
    ParamRegistry reg = m.trainable_registry();
    std::set<std::string> names;
    for (auto& [n, ptr] : reg) {
      CHECK(backbone_ptrs.count(ptr) == 0);
      names.insert(n);
    }
    return names;
  };

  auto np = names_of(Variant::NoPrompt, true);
  CHECK(np == std::set<std::string>{"head.w", "head.b"});

  auto dyn = names_of(Variant::DynamicOnly, true);
  CHECK(dyn.count("prompt.base.image.complete"));
  CHECK(dyn.count("prompt.adapter.w1"));
  CHECK_FALSE(dyn.count("prompt.static.p"));

  auto dyn_noadapter = names_of(Variant::DynamicOnly, false);
  CHECK_FALSE(dyn_noadapter.count("prompt.adapter.w1"));
  CHECK(dyn_noadapter.count("prompt.base.text.image_missing"));

  auto stat = names_of(Variant::StaticOnly, true);
  CHECK(stat.count("prompt.static.p"));
  CHECK(stat.count("prompt.static.proj_text"));
  CHECK_FALSE(stat.count("prompt.base.image.complete"));
  CHECK_FALSE(stat.count("prompt.adapter.w1"));

  auto syn = names_of(Variant::Synergistic, true);
  CHECK(syn.count("prompt.static.p"));
  CHECK(syn.count("prompt.base.image.complete"));
  CHECK(syn.count("prompt.prop.image.2.w_in"));
  CHECK(syn.count("head.w"));
}

TEST_CASE("end-to-end gradients: every trainable matches finite differences on a mixed batch") {
  auto cfg = tiny_config();
  cfg.n_classes = 3;
  BackboneBundle backbone = frozen_backbone(cfg);
  PromptModel model = PromptModel::init(cfg, 27);
  ParamRegistry reg = model.trainable_registry();
  auto items = registry_items(reg);

  std::vector<ModalitySample> batch;
  batch.push_back(make_sample(cfg, 300, MissingCase::Complete));
  batch.push_back(make_sample(cfg, 301, MissingCase::TextMissing));
  batch.push_back(make_sample(cfg, 302, MissingCase::ImageMissing));
  batch.push_back(make_sample(cfg, 303, MissingCase::Complete));

  auto batch_loss = [&](Tape& tape, WeightBinder& bind,
                        std::vector<DiffValue>* params) -> DiffValue {
    if (params)
      for (auto& [name, tensor] : items) params->push_back(bind(name, *tensor));
    DiffValue total;
    for (const auto& s : batch) {
      DiffValue logits = forward_syp(tape, s, backbone, model, nullptr, bind);
      DiffValue loss = tape.scale(compute_loss(tape, logits, s.label, cfg.task), 0.25);
      total = total.valid() ? tape.add(total, loss) : loss;
    }
    return total;
  };

  auto f = [&]() {
    Tape tape;
    WeightBinder bind(tape, true);
    return batch_loss(tape, bind, nullptr).value()[0];
  };
  auto grads = [&]() {
    Tape tape;
    WeightBinder bind(tape, true);
    std::vector<DiffValue> params;
    tape.backward(batch_loss(tape, bind, &params));
    std::vector<Tensor> out;
    for (auto& p : params) out.push_back(p.grad());
    return out;
  };

  std::vector<ParamRef> params;
  for (auto& [name, tensor] : items) params.push_back({name, tensor});
  auto res = finite_diff_check(f, params, grads, 1e-6);
  CAPTURE(res.worst);
  CHECK(res.ok);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("feature cache: precompute covers a pattern; lookups hit") {
  auto cfg = tiny_config();
  BackboneBundle backbone = frozen_backbone(cfg);
  auto splits = synth_dataset(cfg.synth_spec(), cfg.data_seed);
  MissingPattern pattern = generate_pattern(cfg.n_train, 0.5, MissingKind::Both, 77);

  FeatureCache cache;
  cache.precompute(splits.train, pattern, backbone, 0);
  for (size_t i = 0; i < splits.train.size(); ++i) {
    ModalitySample masked = apply_mask(splits.train[i], pattern.cases[i]);
    const FeatureBundle* fb = cache.lookup(masked);
    REQUIRE(fb != nullptr);
    FeatureBundle direct = pool_features(masked, backbone);
    CHECK(fb->x_cat == direct.x_cat);
  }
}
