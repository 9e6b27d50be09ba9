#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "syp/autodiff.hpp"
#include "syp/data.hpp"
#include "syp/metrics.hpp"

namespace syp {

// Trainable set: name -> externally owned array. std::map so iteration
// order (and with it every reduction) is deterministic.
using ParamRegistry = std::map<std::string, Tensor*>;

// Piecewise-linear schedule: 0 -> peak over the warmup span, then peak -> 0
// at the final step.
double lr_at(double step, double total_steps, double peak_lr, double warmup_frac);

// Task losses; the label vector is validated against the task layout.
DiffValue compute_loss(Tape& tape, DiffValue logits, const std::vector<double>& label,
                       TaskKind task);

// Decoupled-weight-decay Adam. The decay term -lr*wd*param is applied
// independently of the (bias-corrected) gradient term.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  // params/grads aligned; the layout is fixed by the first call.
  // Non-finite gradients abort with the parameter name and step index.
  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<Tensor>& grads, double lr);

  long step_count() const { return step_count_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_, weight_decay_;
  long step_count_ = 0;
};

// One sample's recorded graph: its (already 1/batch-scaled) loss plus the
// parameter leaves in registry iteration order.
struct SampleGraph {
  DiffValue loss;
  std::vector<DiffValue> params;
};
using GraphBuilder = std::function<SampleGraph(Tape&, const ModalitySample&)>;

struct BatchGrads {
  double loss = 0.0;            // sum of the scaled per-sample losses
  std::vector<Tensor> grads;    // aligned with registry order
};

// Forward+backward per sample on private tapes, fanned out across threads;
// gradients are reduced in sample order, so the result is independent of
// the thread count.
BatchGrads run_batch(std::span<const ModalitySample* const> batch, const GraphBuilder& build,
                     size_t n_params, int threads);

std::vector<std::pair<std::string, Tensor*>> registry_items(const ParamRegistry& reg);

struct ExperimentConfig;
struct BackboneBundle;
struct PromptModel;
class FeatureCache;

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRow> log;
  double best_val = 0.0;
  int best_epoch = -1;
};

// Raises a ContractError when any registry entry aliases a backbone weight
// by identity or carries a backbone name.
void check_registry_excludes_backbone(const ParamRegistry& registry,
                                      const BackboneBundle& backbone);

// Prompt-tuning loop: seeded shuffling, per-pattern masking, AdamW over the
// model's trainable registry only, validation once per epoch. The model is
// left holding the best-validation snapshot. Registering any backbone
// parameter is a configuration error raised before step 0.
TrainResult train_prompts(const ExperimentConfig& cfg, const BackboneBundle& backbone,
                          PromptModel& model, const Dataset& train_set,
                          const MissingPattern& train_pattern, const Dataset& val_set,
                          const MissingPattern& val_pattern, FeatureCache& cache);

// Forward-only scoring of a whole split under a pattern (parallel, ordered).
EvalBatch collect_scores(const ExperimentConfig& cfg, const BackboneBundle& backbone,
                         const PromptModel& model, const Dataset& ds,
                         const MissingPattern& pattern, const FeatureCache* cache);

// The task's headline metric: multilabel -> macro F1, multiclass -> top-1
// accuracy, binary -> AUROC.
double task_metric(const ExperimentConfig& cfg, const EvalBatch& batch);

double evaluate_model(const ExperimentConfig& cfg, const BackboneBundle& backbone,
                      const PromptModel& model, const Dataset& ds, const MissingPattern& pattern,
                      const FeatureCache* cache);

}  // namespace syp
