#include "syp/backbone.hpp"

#include <cmath>

#include "syp/rng.hpp"
#include "syp/train.hpp"
#include "syp/util.hpp"

namespace syp {

namespace {
constexpr double kLnEps = 1e-5;
}

void StreamEncoder::for_each_weight(const std::string& prefix,
                                    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".embed", embed);
  if (kind == Kind::Image) fn(prefix + ".codebook", codebook);
  fn(prefix + ".pos", pos);
  fn(prefix + ".cls", cls);
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    std::string bp = str(prefix, ".block", i);
    fn(bp + ".wq", b.wq);
    fn(bp + ".bq", b.bq);
    fn(bp + ".wk", b.wk);
    fn(bp + ".bk", b.bk);
    fn(bp + ".wv", b.wv);
    fn(bp + ".bv", b.bv);
    fn(bp + ".wo", b.wo);
    fn(bp + ".bo", b.bo);
    fn(bp + ".ln1_g", b.ln1_g);
    fn(bp + ".ln1_b", b.ln1_b);
    fn(bp + ".ln2_g", b.ln2_g);
    fn(bp + ".ln2_b", b.ln2_b);
    fn(bp + ".w_ff1", b.w_ff1);
    fn(bp + ".b_ff1", b.b_ff1);
    fn(bp + ".w_ff2", b.w_ff2);
    fn(bp + ".b_ff2", b.b_ff2);
  }
}

void BackboneBundle::for_each_weight(const std::function<void(const std::string&, Tensor&)>& fn) {
  image.for_each_weight("backbone.image", fn);
  text.for_each_weight("backbone.text", fn);
}

std::map<std::string, Tensor> BackboneBundle::named_weights() const {
  std::map<std::string, Tensor> out;
  auto& self = const_cast<BackboneBundle&>(*this);
  self.for_each_weight([&](const std::string& name, Tensor& t) { out[name] = t; });
  return out;
}

uint64_t BackboneBundle::checksum() const { return weights_checksum(named_weights()); }

WeightContainer BackboneBundle::to_container() const {
  WeightContainer wc;
  auto& self = const_cast<BackboneBundle&>(*this);
  self.image.for_each_weight("image", [&](const std::string& n, Tensor& t) {
    wc.section("backbone.image")[n.substr(6)] = t;  // strip "image."
  });
  self.text.for_each_weight("text", [&](const std::string& n, Tensor& t) {
    wc.section("backbone.text")[n.substr(5)] = t;
  });
  Tensor m(1, 7);
  m[0] = static_cast<double>(meta.seed >> 32);
  m[1] = static_cast<double>(meta.seed & 0xffffffffULL);
  m[2] = static_cast<double>(meta.steps);
  m[3] = meta.first_loss;
  m[4] = meta.final_loss;
  m[5] = frozen ? 1.0 : 0.0;
  m[6] = static_cast<double>(image.heads);
  wc.section("backbone.meta")["pretrain_info"] = m;
  return wc;
}

namespace {

StreamEncoder stream_from_section(const WeightContainer::Section& sec, StreamEncoder::Kind kind,
                                  int heads) {
  StreamEncoder enc;
  enc.kind = kind;
  enc.heads = heads;
  size_t n_blocks = 0;
  for (const auto& [name, t] : sec) {
    if (name.rfind("block", 0) == 0) {
      size_t dot = name.find('.');
      n_blocks = std::max(n_blocks, static_cast<size_t>(std::stoi(name.substr(5, dot - 5))) + 1);
    }
  }
  enc.blocks.resize(n_blocks);
  auto get = [&](const std::string& n) -> const Tensor& {
    auto it = sec.find(n);
    if (it == sec.end()) throw ParseError(str("backbone checkpoint: missing array '", n, "'"));
    return it->second;
  };
  enc.embed = get("embed");
  if (kind == StreamEncoder::Kind::Image) enc.codebook = get("codebook");
  enc.pos = get("pos");
  enc.cls = get("cls");
  for (size_t i = 0; i < n_blocks; ++i) {
    auto& b = enc.blocks[i];
    std::string bp = str("block", i, ".");
    b.wq = get(bp + "wq");
    b.bq = get(bp + "bq");
    b.wk = get(bp + "wk");
    b.bk = get(bp + "bk");
    b.wv = get(bp + "wv");
    b.bv = get(bp + "bv");
    b.wo = get(bp + "wo");
    b.bo = get(bp + "bo");
    b.ln1_g = get(bp + "ln1_g");
    b.ln1_b = get(bp + "ln1_b");
    b.ln2_g = get(bp + "ln2_g");
    b.ln2_b = get(bp + "ln2_b");
    b.w_ff1 = get(bp + "w_ff1");
    b.b_ff1 = get(bp + "b_ff1");
    b.w_ff2 = get(bp + "w_ff2");
    b.b_ff2 = get(bp + "b_ff2");
  }
  return enc;
}

}  // namespace

BackboneBundle BackboneBundle::from_container(const WeightContainer& wc) {
  const Tensor& m = wc.section("backbone.meta").at("pretrain_info");
  BackboneBundle bundle;
  bundle.meta.seed = (static_cast<uint64_t>(m[0]) << 32) | static_cast<uint64_t>(m[1]);
  bundle.meta.steps = static_cast<int>(m[2]);
  bundle.meta.first_loss = m[3];
  bundle.meta.final_loss = m[4];
  bundle.frozen = m[5] != 0.0;
  int heads = static_cast<int>(m[6]);
  bundle.image = stream_from_section(wc.section("backbone.image"), StreamEncoder::Kind::Image, heads);
  bundle.text = stream_from_section(wc.section("backbone.text"), StreamEncoder::Kind::Text, heads);
  return bundle;
}

namespace {

TransformerBlockWeights init_block(int d, Rng& rng) {
  TransformerBlockWeights b;
  double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  b.wq = Tensor::randn(d, d, w_std, rng);
  b.bq = Tensor(1, d);
  b.wk = Tensor::randn(d, d, w_std, rng);
  b.bk = Tensor(1, d);
  b.wv = Tensor::randn(d, d, w_std, rng);
  b.bv = Tensor(1, d);
  b.wo = Tensor::randn(d, d, w_std, rng);
  b.bo = Tensor(1, d);
  b.ln1_g = Tensor::full(1, d, 1.0);
  b.ln1_b = Tensor(1, d);
  b.ln2_g = Tensor::full(1, d, 1.0);
  b.ln2_b = Tensor(1, d);
  b.w_ff1 = Tensor::randn(d, 4 * d, w_std, rng);
  b.b_ff1 = Tensor(1, 4 * d);
  b.w_ff2 = Tensor::randn(4 * d, d, 1.0 / std::sqrt(4.0 * d), rng);
  b.b_ff2 = Tensor(1, d);
  return b;
}

}  // namespace

BackboneBundle init_backbone(const ExperimentConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  BackboneBundle bundle;
  bundle.meta.seed = seed;

  bundle.image.kind = StreamEncoder::Kind::Image;
  bundle.image.heads = cfg.heads;
  bundle.image.codebook = Tensor::randn(cfg.vocab_img, cfg.patch_dim, 1.0, rng);
  bundle.image.embed = Tensor::randn(cfg.patch_dim, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim)), rng);
  bundle.image.pos = Tensor::randn(1 + cfg.t_img, cfg.d, 0.1, rng);
  bundle.image.cls = Tensor::randn(1, cfg.d, 0.1, rng);
  for (int i = 0; i < cfg.layers; ++i) bundle.image.blocks.push_back(init_block(cfg.d, rng));

  bundle.text.kind = StreamEncoder::Kind::Text;
  bundle.text.heads = cfg.heads;
  bundle.text.embed = Tensor::randn(cfg.vocab_txt, cfg.d, 0.5, rng);
  bundle.text.pos = Tensor::randn(1 + cfg.t_txt, cfg.d, 0.1, rng);
  bundle.text.cls = Tensor::randn(1, cfg.d, 0.1, rng);
  for (int i = 0; i < cfg.layers; ++i) bundle.text.blocks.push_back(init_block(cfg.d, rng));

  return bundle;
}

namespace {

DiffValue embed_stream(Tape& tape, const std::vector<int>& tokens, bool present,
                       const StreamEncoder& enc, const std::string& prefix, WeightBinder& bind) {
  int d = enc.cls.cols();
  DiffValue cls = bind(prefix + ".cls", enc.cls);
  DiffValue pos = bind(prefix + ".pos", enc.pos);
  int len = static_cast<int>(tokens.size());
  if (1 + len > enc.pos.rows())
    throw InputError(str(prefix, ": ", len, " tokens exceed positional table of ",
                         enc.pos.rows() - 1));

  if (!present) {
    // Zero-filled stream: the class token still gets its positional row,
    // the content block stays exactly zero.
    DiffValue cls_pos = tape.add(cls, tape.slice_rows(pos, 0, 1));
    if (len == 0) return cls_pos;
    DiffValue zeros = tape.constant(Tensor(len, d));
    return tape.concat_rows(cls_pos, zeros);
  }

  DiffValue content;
  if (len > 0) {
    if (enc.kind == StreamEncoder::Kind::Image) {
      DiffValue codebook = tape.constant_ref(&enc.codebook);
      DiffValue patches = tape.gather_rows(codebook, tokens);
      content = tape.matmul(patches, bind(prefix + ".embed", enc.embed));
    } else {
      content = tape.gather_rows(bind(prefix + ".embed", enc.embed), tokens);
    }
  }
  DiffValue x = len > 0 ? tape.concat_rows(cls, content) : cls;
  return tape.add(x, tape.slice_rows(pos, 0, 1 + len));
}

DiffValue block_forward(Tape& tape, DiffValue x, const TransformerBlockWeights& blk,
                        const std::string& prefix, int heads, WeightBinder& bind) {
  auto w = [&](const char* n, const Tensor& t) { return bind(prefix + n, t); };
  int d = blk.wq.rows();
  int dh = d / heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  DiffValue h = tape.layer_norm(x, w(".ln1_g", blk.ln1_g), w(".ln1_b", blk.ln1_b), kLnEps);
  DiffValue q = tape.add_row(tape.matmul(h, w(".wq", blk.wq)), w(".bq", blk.bq));
  DiffValue k = tape.add_row(tape.matmul(h, w(".wk", blk.wk)), w(".bk", blk.bk));
  DiffValue v = tape.add_row(tape.matmul(h, w(".wv", blk.wv)), w(".bv", blk.bv));

  DiffValue ctx;
  for (int hh = 0; hh < heads; ++hh) {
    DiffValue qh = tape.slice_cols(q, hh * dh, (hh + 1) * dh);
    DiffValue kh = tape.slice_cols(k, hh * dh, (hh + 1) * dh);
    DiffValue vh = tape.slice_cols(v, hh * dh, (hh + 1) * dh);
    DiffValue scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
    DiffValue attn = tape.softmax_rows(scores);
    DiffValue ctx_h = tape.matmul(attn, vh);
    ctx = hh == 0 ? ctx_h : tape.concat_cols(ctx, ctx_h);
  }
  DiffValue o = tape.add_row(tape.matmul(ctx, w(".wo", blk.wo)), w(".bo", blk.bo));
  x = tape.add(x, o);

  DiffValue h2 = tape.layer_norm(x, w(".ln2_g", blk.ln2_g), w(".ln2_b", blk.ln2_b), kLnEps);
  DiffValue f = tape.add_row(tape.matmul(h2, w(".w_ff1", blk.w_ff1)), w(".b_ff1", blk.b_ff1));
  f = tape.gelu(f);
  f = tape.add_row(tape.matmul(f, w(".w_ff2", blk.w_ff2)), w(".b_ff2", blk.b_ff2));
  return tape.add(x, f);
}

}  // namespace

EmbeddedSample embed_inputs(Tape& tape, const ModalitySample& sample, const BackboneBundle& enc,
                            WeightBinder& bind) {
  EmbeddedSample out;
  out.image_tokens =
      embed_stream(tape, sample.image_tokens, sample.image_present, enc.image, "backbone.image", bind);
  out.text_tokens =
      embed_stream(tape, sample.text_tokens, sample.text_present, enc.text, "backbone.text", bind);
  return out;
}

EncodedStream encode_stream(Tape& tape, DiffValue tokens, const StreamEncoder& enc,
                            const std::string& prefix, std::span<const DiffValue> prompt_hooks,
                            WeightBinder& bind) {
  int n_layers = static_cast<int>(enc.blocks.size());
  int n_hooks = static_cast<int>(prompt_hooks.size());
  int d = enc.cls.cols();
  int input_len = tokens.rows();
  int prompt_len = 0;
  if (n_hooks > 0) {
    if (n_hooks > n_layers)
      throw ContractError(str("encode_stream: ", n_hooks, " prompt blocks for ", n_layers, " layers"));
    prompt_len = prompt_hooks[0].rows();
    for (const DiffValue& h : prompt_hooks)
      if (h.cols() != d || h.rows() != prompt_len)
        throw ContractError(str("encode_stream: prompt block [", h.rows(), "x", h.cols(),
                                "] does not match [", prompt_len, "x", d, "]"));
  }

  DiffValue x = tokens;
  auto with_prompts = [&](DiffValue cur, DiffValue block, bool first) {
    DiffValue head = tape.slice_rows(cur, 0, 1);
    DiffValue joined = tape.concat_rows(head, block);
    int content_from = first ? 1 : 1 + prompt_len;
    int total = first ? input_len : input_len + prompt_len;
    if (content_from < total)
      joined = tape.concat_rows(joined, tape.slice_rows(cur, content_from, total));
    return joined;
  };

  for (int layer = 0; layer < n_layers; ++layer) {
    if (n_hooks > 0 && layer < n_hooks) x = with_prompts(x, prompt_hooks[layer], layer == 0);
    x = block_forward(tape, x, enc.blocks[layer], str(prefix, ".block", layer), enc.heads, bind);
  }

  EncodedStream out;
  out.class_feature = tape.slice_rows(x, 0, 1);
  if (n_hooks > 0) {
    out.tokens = input_len > 1
                     ? tape.concat_rows(out.class_feature,
                                        tape.slice_rows(x, 1 + prompt_len, input_len + prompt_len))
                     : out.class_feature;
  } else {
    out.tokens = x;
  }
  return out;
}

BackboneBundle pretrain_backbone(const ExperimentConfig& cfg, const Dataset& complete_data) {
  for (size_t i = 0; i < complete_data.size(); ++i)
    if (!complete_data[i].image_present || !complete_data[i].text_present)
      throw InputError(str("pretrain_backbone: sample ", i, " has a missing modality"));
  if (complete_data.empty()) throw InputError("pretrain_backbone: empty dataset");

  BackboneBundle bundle = init_backbone(cfg, cfg.backbone_seed);
  int n_classes = cfg.label_width();
  Rng head_rng(cfg.backbone_seed ^ 0x5DEECE66DULL);
  Tensor head_w = Tensor::randn(2 * cfg.d, n_classes, 1.0 / std::sqrt(2.0 * cfg.d), head_rng);
  Tensor head_b(1, n_classes);

  ParamRegistry registry;
  bundle.for_each_weight([&](const std::string& name, Tensor& t) {
    if (name.find(".codebook") == std::string::npos) registry[name] = &t;
  });
  registry["pretrain.head.w"] = &head_w;
  registry["pretrain.head.b"] = &head_b;
  auto items = registry_items(registry);

  GraphBuilder build = [&](Tape& tape, const ModalitySample& s) -> SampleGraph {
    WeightBinder bind(tape, true);
    SampleGraph g;
    g.params.reserve(items.size());
    for (const auto& [name, tensor] : items) g.params.push_back(bind(name, *tensor));
    EmbeddedSample emb = embed_inputs(tape, s, bundle, bind);
    EncodedStream img = encode_stream(tape, emb.image_tokens, bundle.image, "backbone.image", {}, bind);
    EncodedStream txt = encode_stream(tape, emb.text_tokens, bundle.text, "backbone.text", {}, bind);
    DiffValue feat = tape.concat_cols(img.class_feature, txt.class_feature);
    DiffValue logits = tape.add_row(tape.matmul(feat, bind("pretrain.head.w", head_w)),
                                    bind("pretrain.head.b", head_b));
    DiffValue loss = compute_loss(tape, logits, s.label, cfg.task);
    g.loss = tape.scale(loss, 1.0 / static_cast<double>(cfg.pretrain_batch));
    return g;
  };

  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.pretrain_weight_decay);
  Rng order_rng(cfg.backbone_seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<int> order(complete_data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // force an initial shuffle

  bundle.meta.steps = cfg.pretrain_steps;
  for (int step = 0; step < cfg.pretrain_steps; ++step) {
    std::vector<const ModalitySample*> batch;
    batch.reserve(static_cast<size_t>(cfg.pretrain_batch));
    for (int b = 0; b < cfg.pretrain_batch; ++b) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&complete_data[static_cast<size_t>(order[cursor++])]);
    }
    BatchGrads grads = run_batch(batch, build, items.size(), cfg.threads);
    double loss = grads.loss;
    if (step == 0) bundle.meta.first_loss = loss;
    if (step == cfg.pretrain_steps - 1) bundle.meta.final_loss = loss;
    double lr = lr_at(step + 1, cfg.pretrain_steps, cfg.pretrain_lr, 0.1);
    opt.step(items, grads.grads, lr);
  }

  bundle.frozen = true;
  return bundle;
}

}  // namespace syp
