#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "syp/backbone.hpp"
#include "syp/config.hpp"
#include "syp/train.hpp"

namespace syp {

// Pooled prompt-free class features; the adapter's input. A missing
// modality's block is exactly zero.
struct FeatureBundle {
  Tensor x_img;  // [1 x d]
  Tensor x_txt;  // [1 x d]
  Tensor x_cat;  // [1 x 2d], image block first
};

struct PromptPropagatorLevel {
  Tensor w_in, b_in;    // [d x d/ratio] / [1 x d/ratio]
  Tensor w_out, b_out;  // [d/ratio x d] / [1 x d]
  Tensor ln_g, ln_b;    // [1 x d]
};

// Every trainable prompt parameter: per-case base prompts, the shared
// static prompt with its two projections, the dynamic adapter, and the
// per-layer propagation networks.
struct PromptStack {
  int prompt_len = 0, d = 0, d_static = 0, depth = 0;
  double reduction_r = 5.0;
  bool scale_inv_r = true;

  Tensor base_img[3], base_txt[3];  // [L_p x d], indexed by MissingCase
  Tensor static_prompt;             // [L_p x d_s]
  Tensor proj_img, proj_txt;        // [d_s x d]
  Tensor adapter_w1, adapter_b1;    // [2d x h] / [1 x h]
  Tensor adapter_w2, adapter_b2;    // [h x d] / [1 x d]
  std::vector<PromptPropagatorLevel> prop_img, prop_txt;  // levels 2..M

  static PromptStack init(const ExperimentConfig& cfg, uint64_t seed);
  void for_each_weight(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct ClassifierHead {
  Tensor w;  // [2d x C]
  Tensor b;  // [1 x C]

  static ClassifierHead init(const ExperimentConfig& cfg, uint64_t seed);
  void for_each_weight(const std::function<void(const std::string&, Tensor&)>& fn);
};

// Adapter hidden width: an explicit override, else round(2d / r), min 1.
int adapter_hidden(const ExperimentConfig& cfg);

// A prompt stack plus head under one ablation variant.
struct PromptModel {
  PromptStack stack;
  ClassifierHead head;
  Variant variant = Variant::Synergistic;
  bool adapter_enabled = true;

  static PromptModel init(const ExperimentConfig& cfg, uint64_t seed);

  // The exact trainable set for this variant (paths that are not computed
  // do not train). The head always trains.
  ParamRegistry trainable_registry();
  std::map<std::string, Tensor> named_weights() const;  // every array, trained or not
  uint64_t checksum() const;
  WeightContainer to_container() const;
  void load_container(const WeightContainer& wc);
};

// Prompt-free class features per stream, zero where the modality is
// missing, concatenated image-then-text.
FeatureBundle pool_features(const ModalitySample& sample, const BackboneBundle& backbone);

// S_d = sigmoid(ReLU((1/r) W1^T X_C + b1) W2 + b2), every entry in (0,1).
DiffValue compute_scaling_factor(Tape& tape, DiffValue x_cat, const PromptStack& stack,
                                 WeightBinder& bind);

// Base prompts for the sample's missing case, scaled elementwise by s
// (broadcast over the L_p rows). Returns (image, text).
std::pair<DiffValue, DiffValue> modulate_base_prompts(Tape& tape, const PromptStack& stack,
                                                      MissingCase c, DiffValue s,
                                                      WeightBinder& bind);

// Row-wise linear projections of the shared static prompt.
std::pair<DiffValue, DiffValue> project_static(Tape& tape, const PromptStack& stack,
                                               WeightBinder& bind);

// Elementwise sum per stream.
std::pair<DiffValue, DiffValue> combine_synergistic(Tape& tape,
                                                    std::pair<DiffValue, DiffValue> dynamic,
                                                    std::pair<DiffValue, DiffValue> static_);

struct PromptLevels {
  std::vector<DiffValue> image, text;  // M levels each; level 1 is the input
};

// Level 1 passes through; level i in [2, M] is LN(FC(GeLU(FC(level i-1))))
// with stream-and-layer-specific parameters.
PromptLevels propagate_prompts(Tape& tape, DiffValue p_img, DiffValue p_txt,
                               const PromptStack& stack, WeightBinder& bind);

// logits = head(concat(image feature, text feature)); no activation.
DiffValue fuse_and_classify(Tape& tape, DiffValue cls_img, DiffValue cls_txt,
                            const ClassifierHead& head, WeightBinder& bind);

// Full composed forward pass for the model's variant. `cached` supplies the
// pooled features when available; otherwise they are recomputed in place.
// `bind` is the trainable binder for prompt/head parameters; backbone
// weights always enter as frozen constants.
DiffValue forward_syp(Tape& tape, const ModalitySample& sample, const BackboneBundle& backbone,
                      const PromptModel& model, const FeatureBundle* cached, WeightBinder& bind);

// Pooled-feature memoization keyed by (sample id, missing case). Fill with
// precompute() before any parallel consumption; lookup() is read-only.
class FeatureCache {
 public:
  void precompute(const Dataset& ds, const MissingPattern& pattern, const BackboneBundle& backbone,
                  int threads);
  const FeatureBundle* lookup(const ModalitySample& masked) const;
  size_t size() const { return cache_.size(); }

 private:
  std::map<std::pair<int, uint8_t>, FeatureBundle> cache_;
};

}  // namespace syp
