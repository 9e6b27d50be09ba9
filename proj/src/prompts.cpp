#include "syp/prompts.hpp"

#include <cmath>
#include <omp.h>

#include "syp/rng.hpp"
#include "syp/util.hpp"

namespace syp {

namespace {
constexpr double kLnEps = 1e-5;

const char* case_slug(MissingCase c) { return to_string(c); }
}  // namespace

int adapter_hidden(const ExperimentConfig& cfg) {
  if (cfg.adapter_hidden_override > 0) return cfg.adapter_hidden_override;
  int h = static_cast<int>(std::lround(2.0 * cfg.d / cfg.reduction_r));
  return std::max(h, 1);
}

PromptStack PromptStack::init(const ExperimentConfig& cfg, uint64_t seed) {
  Rng rng(seed ^ 0xC2B2AE3D27D4EB4FULL);
  PromptStack s;
  s.prompt_len = cfg.prompt_len;
  s.d = cfg.d;
  s.d_static = cfg.d_static;
  s.depth = cfg.prompt_depth;
  s.reduction_r = cfg.reduction_r;
  s.scale_inv_r = cfg.adapter_scale_inv_r;

  double std_ = cfg.prompt_init_std;
  for (int c = 0; c < 3; ++c) s.base_img[c] = Tensor::randn(cfg.prompt_len, cfg.d, std_, rng);
  for (int c = 0; c < 3; ++c) s.base_txt[c] = Tensor::randn(cfg.prompt_len, cfg.d, std_, rng);

  s.static_prompt = Tensor::randn(cfg.prompt_len, cfg.d_static, std_, rng);
  auto near_identity = [&](int rows, int cols) {
    Tensor t = Tensor::randn(rows, cols, cfg.static_proj_noise, rng);
    for (int i = 0; i < std::min(rows, cols); ++i) t.at(i, i) += 1.0;
    return t;
  };
  s.proj_img = near_identity(cfg.d_static, cfg.d);
  s.proj_txt = near_identity(cfg.d_static, cfg.d);

  int h = adapter_hidden(cfg);
  s.adapter_w1 = Tensor::randn(2 * cfg.d, h, std_, rng);
  s.adapter_b1 = Tensor::randn(1, h, std_, rng);
  s.adapter_w2 = Tensor::randn(h, cfg.d, std_, rng);
  s.adapter_b2 = Tensor::randn(1, cfg.d, std_, rng);

  int hidden = std::max(cfg.d / cfg.bottleneck_ratio, 1);
  auto make_level = [&]() {
    PromptPropagatorLevel l;
    l.w_in = Tensor::randn(cfg.d, hidden, 1.0 / std::sqrt(static_cast<double>(cfg.d)), rng);
    l.b_in = Tensor::randn(1, hidden, std_, rng);
    l.w_out = Tensor::randn(hidden, cfg.d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    l.b_out = Tensor::randn(1, cfg.d, std_, rng);
    l.ln_g = Tensor::full(1, cfg.d, 1.0);
    l.ln_b = Tensor(1, cfg.d);
    return l;
  };
  for (int i = 2; i <= cfg.prompt_depth; ++i) {
    s.prop_img.push_back(make_level());
    s.prop_txt.push_back(make_level());
  }
  return s;
}

void PromptStack::for_each_weight(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (int c = 0; c < 3; ++c)
    fn(str("prompt.base.image.", case_slug(static_cast<MissingCase>(c))), base_img[c]);
  for (int c = 0; c < 3; ++c)
    fn(str("prompt.base.text.", case_slug(static_cast<MissingCase>(c))), base_txt[c]);
  fn("prompt.static.p", static_prompt);
  fn("prompt.static.proj_image", proj_img);
  fn("prompt.static.proj_text", proj_txt);
  fn("prompt.adapter.w1", adapter_w1);
  fn("prompt.adapter.b1", adapter_b1);
  fn("prompt.adapter.w2", adapter_w2);
  fn("prompt.adapter.b2", adapter_b2);
  auto levels = [&](std::vector<PromptPropagatorLevel>& ls, const char* stream) {
    for (size_t i = 0; i < ls.size(); ++i) {
      std::string p = str("prompt.prop.", stream, ".", i + 2);
      fn(p + ".w_in", ls[i].w_in);
      fn(p + ".b_in", ls[i].b_in);
      fn(p + ".w_out", ls[i].w_out);
      fn(p + ".b_out", ls[i].b_out);
      fn(p + ".ln_g", ls[i].ln_g);
      fn(p + ".ln_b", ls[i].ln_b);
    }
  };
  levels(prop_img, "image");
  levels(prop_txt, "text");
}

ClassifierHead ClassifierHead::init(const ExperimentConfig& cfg, uint64_t seed) {
  Rng rng(seed ^ 0xA0761D6478BD642FULL);
  ClassifierHead h;
  h.w = Tensor::randn(2 * cfg.d, cfg.label_width(), 1.0 / std::sqrt(2.0 * cfg.d), rng);
  h.b = Tensor(1, cfg.label_width());
  return h;
}

void ClassifierHead::for_each_weight(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("head.w", w);
  fn("head.b", b);
}

PromptModel PromptModel::init(const ExperimentConfig& cfg, uint64_t seed) {
  PromptModel m;
  m.stack = PromptStack::init(cfg, seed);
  m.head = ClassifierHead::init(cfg, seed);
  m.variant = cfg.variant;
  m.adapter_enabled = cfg.adapter_enabled;
  return m;
}

ParamRegistry PromptModel::trainable_registry() {
  ParamRegistry reg;
  head.for_each_weight([&](const std::string& n, Tensor& t) { reg[n] = &t; });
  if (variant == Variant::NoPrompt) return reg;

  bool dynamic_path = variant == Variant::Synergistic || variant == Variant::DynamicOnly;
  bool static_path = variant == Variant::Synergistic || variant == Variant::StaticOnly;
  stack.for_each_weight([&](const std::string& n, Tensor& t) {
    bool is_base = n.rfind("prompt.base.", 0) == 0;
    bool is_adapter = n.rfind("prompt.adapter.", 0) == 0;
    bool is_static = n.rfind("prompt.static.", 0) == 0;
    bool is_prop = n.rfind("prompt.prop.", 0) == 0;
    if (is_base && dynamic_path) reg[n] = &t;
    if (is_adapter && dynamic_path && adapter_enabled) reg[n] = &t;
    if (is_static && static_path) reg[n] = &t;
    if (is_prop) reg[n] = &t;
  });
  return reg;
}

std::map<std::string, Tensor> PromptModel::named_weights() const {
  std::map<std::string, Tensor> out;
  auto& self = const_cast<PromptModel&>(*this);
  self.stack.for_each_weight([&](const std::string& n, Tensor& t) { out[n] = t; });
  self.head.for_each_weight([&](const std::string& n, Tensor& t) { out[n] = t; });
  return out;
}

uint64_t PromptModel::checksum() const { return weights_checksum(named_weights()); }

WeightContainer PromptModel::to_container() const {
  WeightContainer wc;
  auto named = named_weights();
  for (auto& [n, t] : named) wc.section("prompts")[n] = t;
  Tensor meta(1, 2);
  meta[0] = static_cast<double>(static_cast<int>(variant));
  meta[1] = adapter_enabled ? 1.0 : 0.0;
  wc.section("prompts.meta")["variant"] = meta;
  return wc;
}

void PromptModel::load_container(const WeightContainer& wc) {
  const auto& sec = wc.section("prompts");
  auto assign = [&](const std::string& n, Tensor& t) {
    auto it = sec.find(n);
    if (it == sec.end()) throw ParseError(str("prompt checkpoint: missing array '", n, "'"));
    if (!it->second.same_shape(t))
      throw ParseError(str("prompt checkpoint: array '", n, "' is ", it->second.shape_str(),
                           ", expected ", t.shape_str()));
    t = it->second;
  };
  stack.for_each_weight(assign);
  head.for_each_weight(assign);
  const Tensor& meta = wc.section("prompts.meta").at("variant");
  variant = static_cast<Variant>(static_cast<int>(meta[0]));
  adapter_enabled = meta[1] != 0.0;
}

FeatureBundle pool_features(const ModalitySample& sample, const BackboneBundle& backbone) {
  if (!backbone.frozen) throw ContractError("pool_features: backbone must be frozen");
  int d = backbone.image.cls.cols();
  FeatureBundle fb;
  fb.x_img = Tensor(1, d);
  fb.x_txt = Tensor(1, d);

  Tape tape;
  WeightBinder frozen(tape, false);
  EmbeddedSample emb = embed_inputs(tape, sample, backbone, frozen);
  if (sample.image_present) {
    EncodedStream s = encode_stream(tape, emb.image_tokens, backbone.image, "backbone.image", {}, frozen);
    fb.x_img = s.class_feature.value();
  }
  if (sample.text_present) {
    EncodedStream s = encode_stream(tape, emb.text_tokens, backbone.text, "backbone.text", {}, frozen);
    fb.x_txt = s.class_feature.value();
  }
  fb.x_cat = Tensor(1, 2 * d);
  for (int j = 0; j < d; ++j) {
    fb.x_cat[static_cast<size_t>(j)] = fb.x_img[static_cast<size_t>(j)];
    fb.x_cat[static_cast<size_t>(d + j)] = fb.x_txt[static_cast<size_t>(j)];
  }
  return fb;
}

DiffValue compute_scaling_factor(Tape& tape, DiffValue x_cat, const PromptStack& stack,
                                 WeightBinder& bind) {
  if (x_cat.cols() != stack.adapter_w1.rows())
    throw ContractError(str("compute_scaling_factor: features ", x_cat.value().shape_str(),
                            " vs adapter input ", stack.adapter_w1.rows()));
  DiffValue pre = tape.matmul(x_cat, bind("prompt.adapter.w1", stack.adapter_w1));
  if (stack.scale_inv_r) pre = tape.scale(pre, 1.0 / stack.reduction_r);
  pre = tape.add_row(pre, bind("prompt.adapter.b1", stack.adapter_b1));
  DiffValue hidden = tape.relu(pre);
  DiffValue out = tape.add_row(tape.matmul(hidden, bind("prompt.adapter.w2", stack.adapter_w2)),
                               bind("prompt.adapter.b2", stack.adapter_b2));
  return tape.sigmoid(out);
}

std::pair<DiffValue, DiffValue> modulate_base_prompts(Tape& tape, const PromptStack& stack,
                                                      MissingCase c, DiffValue s,
                                                      WeightBinder& bind) {
  int ci = static_cast<int>(c);
  if (ci < 0 || ci > 2) throw ContractError("modulate_base_prompts: unknown missing case");
  if (s.cols() != stack.d || s.rows() != 1)
    throw ContractError(str("modulate_base_prompts: scaling factor ", s.value().shape_str(),
                            " vs width ", stack.d));
  DiffValue bi = bind(str("prompt.base.image.", case_slug(c)), stack.base_img[ci]);
  DiffValue bt = bind(str("prompt.base.text.", case_slug(c)), stack.base_txt[ci]);
  return {tape.mul_row(bi, s), tape.mul_row(bt, s)};
}

std::pair<DiffValue, DiffValue> project_static(Tape& tape, const PromptStack& stack,
                                               WeightBinder& bind) {
  DiffValue p = bind("prompt.static.p", stack.static_prompt);
  DiffValue pi = tape.matmul(p, bind("prompt.static.proj_image", stack.proj_img));
  DiffValue pt = tape.matmul(p, bind("prompt.static.proj_text", stack.proj_txt));
  return {pi, pt};
}

std::pair<DiffValue, DiffValue> combine_synergistic(Tape& tape,
                                                    std::pair<DiffValue, DiffValue> dynamic,
                                                    std::pair<DiffValue, DiffValue> static_) {
  return {tape.add(dynamic.first, static_.first), tape.add(dynamic.second, static_.second)};
}

PromptLevels propagate_prompts(Tape& tape, DiffValue p_img, DiffValue p_txt,
                               const PromptStack& stack, WeightBinder& bind) {
  PromptLevels out;
  out.image.push_back(p_img);
  out.text.push_back(p_txt);
  auto run = [&](std::vector<DiffValue>& levels, const std::vector<PromptPropagatorLevel>& props,
                 const char* stream) {
    for (size_t i = 0; i < props.size(); ++i) {
      const auto& l = props[i];
      std::string p = str("prompt.prop.", stream, ".", i + 2);
      DiffValue h = tape.add_row(tape.matmul(levels.back(), bind(p + ".w_in", l.w_in)),
                                 bind(p + ".b_in", l.b_in));
      h = tape.gelu(h);
      h = tape.add_row(tape.matmul(h, bind(p + ".w_out", l.w_out)), bind(p + ".b_out", l.b_out));
      levels.push_back(tape.layer_norm(h, bind(p + ".ln_g", l.ln_g), bind(p + ".ln_b", l.ln_b), kLnEps));
    }
  };
  run(out.image, stack.prop_img, "image");
  run(out.text, stack.prop_txt, "text");
  return out;
}

DiffValue fuse_and_classify(Tape& tape, DiffValue cls_img, DiffValue cls_txt,
                            const ClassifierHead& head, WeightBinder& bind) {
  DiffValue feat = tape.concat_cols(cls_img, cls_txt);
  if (feat.cols() != head.w.rows())
    throw ContractError(str("fuse_and_classify: features [1x", feat.cols(), "] vs head ",
                            head.w.shape_str()));
  return tape.add_row(tape.matmul(feat, bind("head.w", head.w)), bind("head.b", head.b));
}

DiffValue forward_syp(Tape& tape, const ModalitySample& sample, const BackboneBundle& backbone,
                      const PromptModel& model, const FeatureBundle* cached, WeightBinder& bind) {
  if (!backbone.frozen) throw ContractError("forward_syp: backbone must be frozen");

  FeatureBundle local;
  const FeatureBundle* feat = cached;
  if (feat == nullptr) {
    local = pool_features(sample, backbone);
    feat = &local;
  }

  if (model.variant == Variant::NoPrompt) {
    DiffValue x_img = tape.constant(feat->x_img);
    DiffValue x_txt = tape.constant(feat->x_txt);
    return fuse_and_classify(tape, x_img, x_txt, model.head, bind);
  }

  MissingCase c = sample.missing_case();
  bool dynamic_path = model.variant != Variant::StaticOnly;
  bool static_path = model.variant != Variant::DynamicOnly;

  std::pair<DiffValue, DiffValue> level1;
  std::pair<DiffValue, DiffValue> dynamic;
  if (dynamic_path) {
    DiffValue s = model.adapter_enabled
                      ? compute_scaling_factor(tape, tape.constant(feat->x_cat), model.stack, bind)
                      : tape.constant(Tensor::full(1, model.stack.d, 1.0));
    dynamic = modulate_base_prompts(tape, model.stack, c, s, bind);
  }
  if (static_path) {
    auto statics = project_static(tape, model.stack, bind);
    level1 = dynamic_path ? combine_synergistic(tape, dynamic, statics) : statics;
  } else {
    level1 = dynamic;
  }

  PromptLevels levels = propagate_prompts(tape, level1.first, level1.second, model.stack, bind);

  WeightBinder frozen(tape, false);
  EmbeddedSample emb = embed_inputs(tape, sample, backbone, frozen);
  EncodedStream img =
      encode_stream(tape, emb.image_tokens, backbone.image, "backbone.image", levels.image, frozen);
  EncodedStream txt =
      encode_stream(tape, emb.text_tokens, backbone.text, "backbone.text", levels.text, frozen);
  return fuse_and_classify(tape, img.class_feature, txt.class_feature, model.head, bind);
}

void FeatureCache::precompute(const Dataset& ds, const MissingPattern& pattern,
                              const BackboneBundle& backbone, int threads) {
  if (pattern.cases.size() != ds.size())
    throw ContractError(str("FeatureCache: pattern covers ", pattern.cases.size(),
                            " samples, dataset has ", ds.size()));
  std::vector<std::pair<int, ModalitySample>> missing;  // index into ds + masked sample
  for (size_t i = 0; i < ds.size(); ++i) {
    ModalitySample masked = apply_mask(ds[i], pattern.cases[i]);
    auto key = std::make_pair(masked.id, static_cast<uint8_t>(masked.missing_case()));
    if (cache_.find(key) == cache_.end())
      missing.emplace_back(static_cast<int>(i), std::move(masked));
  }
  std::vector<FeatureBundle> computed(missing.size());
  std::exception_ptr error;
  int n = static_cast<int>(missing.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      computed[static_cast<size_t>(i)] = pool_features(missing[static_cast<size_t>(i)].second, backbone);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  for (size_t i = 0; i < missing.size(); ++i) {
    const ModalitySample& m = missing[i].second;
    cache_[{m.id, static_cast<uint8_t>(m.missing_case())}] = std::move(computed[i]);
  }
}

const FeatureBundle* FeatureCache::lookup(const ModalitySample& masked) const {
  auto it = cache_.find({masked.id, static_cast<uint8_t>(masked.missing_case())});
  return it == cache_.end() ? nullptr : &it->second;
}

}  // namespace syp
