#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "syp/autodiff.hpp"
#include "syp/checkpoint.hpp"
#include "syp/config.hpp"
#include "syp/data.hpp"

namespace syp {

struct TransformerBlockWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [d x d] / [1 x d]
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;      // [1 x d]
  Tensor w_ff1, b_ff1, w_ff2, b_ff2;      // [d x 4d] / [1 x 4d] / [4d x d] / [1 x d]
};

// One token stream: text embeds through a vocabulary table, image through a
// frozen synthetic patch codebook followed by a trainable projection.
struct StreamEncoder {
  enum class Kind { Image, Text };
  Kind kind = Kind::Text;
  int heads = 0;
  Tensor embed;     // text: [vocab x d]; image: [patch_dim x d]
  Tensor codebook;  // image only: [vocab x patch_dim], never trained
  Tensor pos;       // [1 + max_tokens x d]
  Tensor cls;       // [1 x d]
  std::vector<TransformerBlockWeights> blocks;

  // Enumerates every weight as (name, tensor); the codebook rides along so
  // checkpoints and freeze checks cover it.
  void for_each_weight(const std::string& prefix,
                       const std::function<void(const std::string&, Tensor&)>& fn);
};

struct PretrainInfo {
  uint64_t seed = 0;
  int steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

struct BackboneBundle {
  StreamEncoder image, text;
  bool frozen = false;
  PretrainInfo meta;

  void for_each_weight(const std::function<void(const std::string&, Tensor&)>& fn);
  std::map<std::string, Tensor> named_weights() const;
  uint64_t checksum() const;

  WeightContainer to_container() const;
  static BackboneBundle from_container(const WeightContainer& wc);
};

// Fresh random weights (not yet pretrained or frozen).
BackboneBundle init_backbone(const ExperimentConfig& cfg, uint64_t seed);

// Class token prepended, positional embeddings added; a missing modality
// contributes exact zero content rows under its class token.
struct EmbeddedSample {
  DiffValue image_tokens;  // [1 + T_i x d]
  DiffValue text_tokens;   // [1 + len x d]
};
EmbeddedSample embed_inputs(Tape& tape, const ModalitySample& sample, const BackboneBundle& enc,
                            WeightBinder& bind);

struct EncodedStream {
  DiffValue tokens;         // [L x d], prompt rows stripped
  DiffValue class_feature;  // [1 x d]
};

// prompt_hooks: empty for a plain pass, otherwise one [L_p x d] block per
// prompted layer, consumed at layers 1..M; each block replaces the previous
// block's positions before that layer's attention.
EncodedStream encode_stream(Tape& tape, DiffValue tokens, const StreamEncoder& enc,
                            const std::string& prefix, std::span<const DiffValue> prompt_hooks,
                            WeightBinder& bind);

// Joint pretraining of both streams plus a throwaway linear head on
// complete-modality data; returns the bundle frozen.
BackboneBundle pretrain_backbone(const ExperimentConfig& cfg, const Dataset& complete_data);

}  // namespace syp
