#include <doctest.h>

#include <cmath>

#include "syp/backbone.hpp"
#include "syp/util.hpp"
#include "test_support.hpp"

using namespace syp;
using test::tiny_config;

namespace {

ModalitySample make_sample(const ExperimentConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  ModalitySample s;
  s.id = static_cast<int>(seed);
  for (int i = 0; i < cfg.t_img; ++i) s.image_tokens.push_back(rng.below(cfg.vocab_img));
  for (int i = 0; i < cfg.t_txt; ++i) s.text_tokens.push_back(rng.below(cfg.vocab_txt));
  s.label.assign(static_cast<size_t>(cfg.n_classes), 0.0);
  s.label[0] = 1.0;
  return s;
}

bool block_all_zero(const Tensor& t, int from_row) {
  for (int i = from_row; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j)
      if (t.at(i, j) != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("embed_inputs: zero-fill, empty text, determinism, OOV") {
  auto cfg = tiny_config();
  BackboneBundle enc = init_backbone(cfg, 42);

  ModalitySample s = make_sample(cfg, 1);
  s.image_present = false;  // text present, image missing
  {
    Tape tape;
    WeightBinder bind(tape, false);
    auto emb = embed_inputs(tape, s, enc, bind);
    CHECK(emb.image_tokens.rows() == 1 + cfg.t_img);
    CHECK(block_all_zero(emb.image_tokens.value(), 1));
    CHECK_FALSE(block_all_zero(emb.text_tokens.value(), 1));
  }

  ModalitySample empty_text = make_sample(cfg, 2);
  empty_text.text_tokens.clear();
  {
    Tape tape;
    WeightBinder bind(tape, false);
    auto emb = embed_inputs(tape, empty_text, enc, bind);
    CHECK(emb.text_tokens.rows() == 1);  // class token only
    CHECK(emb.text_tokens.cols() == cfg.d);
  }

  {
    Tape t1, t2;
    WeightBinder b1(t1, false), b2(t2, false);
    ModalitySample s2 = make_sample(cfg, 3);
    auto e1 = embed_inputs(t1, s2, enc, b1);
    auto e2 = embed_inputs(t2, s2, enc, b2);
    CHECK(e1.image_tokens.value() == e2.image_tokens.value());
    CHECK(e1.text_tokens.value() == e2.text_tokens.value());
  }

  ModalitySample oov = make_sample(cfg, 4);
  oov.text_tokens[2] = cfg.vocab_txt + 5;
  Tape tape;
  WeightBinder bind(tape, false);
  CHECK_THROWS_AS(embed_inputs(tape, oov, enc, bind), InputError);
}

TEST_CASE("encode_stream: shape laws and prompt-hook contract") {
  auto cfg = tiny_config();
  BackboneBundle enc = init_backbone(cfg, 42);

  // class token only
  {
    Tape tape;
    WeightBinder bind(tape, false);
    Rng rng1(1);
    DiffValue tokens = tape.constant(Tensor::randn(1, cfg.d, 1.0, rng1));
    auto out = encode_stream(tape, tokens, enc.image, "backbone.image", {}, bind);
    CHECK(out.tokens.rows() == 1);
    CHECK(out.tokens.cols() == cfg.d);
    CHECK(out.class_feature.rows() == 1);
  }

  // output length equals input length with prompts stripped
  Rng rng(7);
  Tensor toks = test::random_tensor(1 + cfg.t_img, cfg.d, rng);
  {
    Tape tape;
    WeightBinder bind(tape, false);
    std::vector<DiffValue> hooks;
    for (int i = 0; i < cfg.prompt_depth; ++i)
      hooks.push_back(tape.constant(test::random_tensor(cfg.prompt_len, cfg.d, rng)));
    auto out = encode_stream(tape, tape.constant_ref(&toks), enc.image, "backbone.image", hooks, bind);
    CHECK(out.tokens.rows() == toks.rows());
    CHECK(out.class_feature.cols() == cfg.d);
  }

  // wrong width / wrong count
  {
    Tape tape;
    WeightBinder bind(tape, false);
    std::vector<DiffValue> bad_width{tape.constant(Tensor(cfg.prompt_len, cfg.d + 1)),
                                     tape.constant(Tensor(cfg.prompt_len, cfg.d + 1))};
    CHECK_THROWS_AS(
        encode_stream(tape, tape.constant_ref(&toks), enc.image, "backbone.image", bad_width, bind),
        ContractError);
    std::vector<DiffValue> too_many;
    for (int i = 0; i < cfg.layers + 1; ++i)
      too_many.push_back(tape.constant(Tensor(cfg.prompt_len, cfg.d)));
    CHECK_THROWS_AS(
        encode_stream(tape, tape.constant_ref(&toks), enc.image, "backbone.image", too_many, bind),
        ContractError);
  }
}

TEST_CASE("zeroing prompt blocks differs from omitting them") {
  auto cfg = tiny_config();
  BackboneBundle enc = init_backbone(cfg, 42);
  Rng rng(13);
  Tensor toks = test::random_tensor(1 + cfg.t_img, cfg.d, rng);

  Tape tape;
  WeightBinder bind(tape, false);
  auto plain = encode_stream(tape, tape.constant_ref(&toks), enc.image, "backbone.image", {}, bind);
  std::vector<DiffValue> zero_hooks;
  for (int i = 0; i < cfg.prompt_depth; ++i)
    zero_hooks.push_back(tape.constant(Tensor(cfg.prompt_len, cfg.d)));
  auto zeroed =
      encode_stream(tape, tape.constant_ref(&toks), enc.image, "backbone.image", zero_hooks, bind);
  // attention normalizes over more positions, so these must differ
  CHECK_FALSE(plain.class_feature.value() == zeroed.class_feature.value());
}

TEST_CASE("attention is sensitive to swapping two content tokens") {
  auto cfg = tiny_config();
  BackboneBundle enc = init_backbone(cfg, 42);
  Rng rng(23);
  Tensor toks = test::random_tensor(1 + cfg.t_img, cfg.d, rng);
  Tensor swapped = toks;
  for (int j = 0; j < cfg.d; ++j) {
    std::swap(swapped.at(2, j), swapped.at(3, j));
  }
  Tape tape;
  WeightBinder bind(tape, false);
  auto a = encode_stream(tape, tape.constant_ref(&toks), enc.image, "backbone.image", {}, bind);
  auto b = encode_stream(tape, tape.constant_ref(&swapped), enc.image, "backbone.image", {}, bind);
  CHECK_FALSE(a.class_feature.value() == b.class_feature.value());
}

TEST_CASE("pretrain_backbone: loss decreases, determinism, freeze contract") {
  auto cfg = tiny_config();
  cfg.pretrain_steps = 60;
  apply_eval_seed(cfg, 17);
  auto splits = synth_dataset(cfg.synth_spec(), cfg.data_seed);

  BackboneBundle b1 = pretrain_backbone(cfg, splits.train);
  CHECK(b1.frozen);
  CHECK(b1.meta.final_loss < b1.meta.first_loss);

  BackboneBundle b2 = pretrain_backbone(cfg, splits.train);
  CHECK(b1.checksum() == b2.checksum());  // bit-identical weights

  // missing modality in pretraining data is an input error
  Dataset bad = splits.train;
  bad[0].text_present = false;
  CHECK_THROWS_AS(pretrain_backbone(cfg, bad), InputError);
}

TEST_CASE("backbone container round-trip preserves weights and metadata") {
  auto cfg = tiny_config();
  cfg.pretrain_steps = 5;
  auto splits = synth_dataset(cfg.synth_spec(), cfg.data_seed);
  BackboneBundle b = pretrain_backbone(cfg, splits.train);

  test::TempDir dir("backbone_ckpt");
  auto path = dir.path / "backbone.ckpt";
  b.to_container().save(path);
  BackboneBundle loaded = BackboneBundle::from_container(WeightContainer::load(path));
  CHECK(loaded.checksum() == b.checksum());
  CHECK(loaded.frozen == b.frozen);
  CHECK(loaded.meta.seed == b.meta.seed);
  CHECK(loaded.meta.steps == b.meta.steps);
  CHECK(loaded.meta.final_loss == b.meta.final_loss);
  CHECK(loaded.image.heads == b.image.heads);
  CHECK(loaded.image.blocks.size() == b.image.blocks.size());
}
