#include "syp/train.hpp"

#include <cmath>
#include <omp.h>
#include <set>

#include "syp/prompts.hpp"
#include "syp/rng.hpp"
#include "syp/util.hpp"

namespace syp {

double lr_at(double step, double total_steps, double peak_lr, double warmup_frac) {
  if (total_steps <= 0.0) throw ContractError("lr_at: total_steps must be positive");
  if (step < 0.0 || step > total_steps)
    throw ContractError(str("lr_at: step ", step, " outside [0, ", total_steps, "]"));
  double w = warmup_frac * total_steps;
  if (step <= w) return w == 0.0 ? peak_lr : peak_lr * step / w;
  return peak_lr * (total_steps - step) / (total_steps - w);
}

DiffValue compute_loss(Tape& tape, DiffValue logits, const std::vector<double>& label,
                       TaskKind task) {
  int width = logits.cols();
  if (static_cast<int>(label.size()) != width)
    throw InputError(str("compute_loss: label width ", label.size(), " vs logits width ", width));
  switch (task) {
    case TaskKind::Multiclass: {
      int cls = -1;
      for (int j = 0; j < width; ++j) {
        double v = label[static_cast<size_t>(j)];
        if (v == 1.0) {
          if (cls >= 0) throw InputError("compute_loss: multiclass label with several hot bits");
          cls = j;
        } else if (v != 0.0) {
          throw InputError(str("compute_loss: multiclass label entry ", v, " is not 0/1"));
        }
      }
      if (cls < 0) throw InputError("compute_loss: multiclass label with no hot bit");
      return tape.softmax_xent(logits, cls);
    }
    case TaskKind::Binary:
      if (label[0] != 0.0 && label[0] != 1.0)
        throw InputError(str("compute_loss: binary label ", label[0], " is not 0/1"));
      [[fallthrough]];
    case TaskKind::Multilabel: {
      Tensor targets(1, width);
      for (int j = 0; j < width; ++j) targets[static_cast<size_t>(j)] = label[static_cast<size_t>(j)];
      return tape.bce_logits(logits, targets);
    }
  }
  throw ContractError("compute_loss: bad task");
}

void AdamW::step(const std::vector<std::pair<std::string, Tensor*>>& params,
                 const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size())
    throw ContractError(str("adamw_step: ", grads.size(), " gradients for ", params.size(), " parameters"));
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      slots_[p].m = Tensor(params[p].second->rows(), params[p].second->cols());
      slots_[p].v = Tensor(params[p].second->rows(), params[p].second->cols());
    }
  }
  if (slots_.size() != params.size())
    throw ContractError("adamw_step: parameter set changed between steps");
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& x = *params[p].second;
    const Tensor& g = grads[p];
    if (!x.same_shape(g))
      throw ContractError(str("adamw_step: gradient ", g.shape_str(), " vs parameter '",
                              params[p].first, "' ", x.shape_str()));
    Tensor& m = slots_[p].m;
    Tensor& v = slots_[p].v;
    for (size_t i = 0; i < x.numel(); ++i) {
      double gi = g[i];
      if (!std::isfinite(gi))
        throw ContractError(str("adamw_step: non-finite gradient for '", params[p].first,
                                "' at step ", step_count_));
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      double x_old = x[i];
      x[i] = x_old - lr * m_hat / (std::sqrt(v_hat) + eps_) - lr * weight_decay_ * x_old;
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> registry_items(const ParamRegistry& reg) {
  std::vector<std::pair<std::string, Tensor*>> items;
  items.reserve(reg.size());
  for (const auto& [name, ptr] : reg) items.emplace_back(name, ptr);
  return items;
}

BatchGrads run_batch(std::span<const ModalitySample* const> batch, const GraphBuilder& build,
                     size_t n_params, int threads) {
  int n = static_cast<int>(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::vector<Tensor>> sample_grads(batch.size());
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic) \
    num_threads(threads > 0 ? threads : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      Tape tape;
      SampleGraph g = build(tape, *batch[static_cast<size_t>(i)]);
      if (g.params.size() != n_params)
        throw ContractError(str("run_batch: builder bound ", g.params.size(), " of ", n_params,
                                " parameters"));
      tape.backward(g.loss);
      losses[static_cast<size_t>(i)] = g.loss.value()[0];
      auto& out = sample_grads[static_cast<size_t>(i)];
      out.reserve(n_params);
      for (const DiffValue& p : g.params) out.push_back(p.grad());
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  BatchGrads out;
  out.grads.resize(n_params);
  for (size_t p = 0; p < n_params; ++p) {
    const Tensor& first = sample_grads[0][p];
    out.grads[p] = Tensor(first.rows(), first.cols());
  }
  // Sample-order reduction keeps the result independent of thread count.
  for (size_t i = 0; i < batch.size(); ++i) {
    out.loss += losses[i];
    for (size_t p = 0; p < n_params; ++p) {
      Tensor& acc = out.grads[p];
      const Tensor& g = sample_grads[i][p];
      for (size_t e = 0; e < acc.numel(); ++e) acc[e] += g[e];
    }
  }
  return out;
}

namespace {

std::vector<ModalitySample> masked_copy(const Dataset& ds, const MissingPattern& pattern) {
  if (pattern.cases.size() != ds.size())
    throw ContractError(str("pattern covers ", pattern.cases.size(), " samples, dataset has ",
                            ds.size()));
  std::vector<ModalitySample> out;
  out.reserve(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) out.push_back(apply_mask(ds[i], pattern.cases[i]));
  return out;
}

}  // namespace

void check_registry_excludes_backbone(const ParamRegistry& registry,
                                      const BackboneBundle& backbone) {
  // Freeze contract, checked by identity and by name.
  std::set<const Tensor*> backbone_ptrs;
  const_cast<BackboneBundle&>(backbone).for_each_weight(
      [&](const std::string&, Tensor& t) { backbone_ptrs.insert(&t); });
  for (const auto& [name, ptr] : registry) {
    if (backbone_ptrs.count(ptr) || name.rfind("backbone.", 0) == 0)
      throw ContractError(str("trainable registry holds backbone parameter '", name, "'"));
  }
}

TrainResult train_prompts(const ExperimentConfig& cfg, const BackboneBundle& backbone,
                          PromptModel& model, const Dataset& train_set,
                          const MissingPattern& train_pattern, const Dataset& val_set,
                          const MissingPattern& val_pattern, FeatureCache& cache) {
  if (!backbone.frozen) throw ContractError("train_prompts: backbone must be frozen");
  ParamRegistry registry = model.trainable_registry();
  check_registry_excludes_backbone(registry, backbone);

  cache.precompute(train_set, train_pattern, backbone, cfg.threads);
  cache.precompute(val_set, val_pattern, backbone, cfg.threads);
  std::vector<ModalitySample> train_masked = masked_copy(train_set, train_pattern);

  auto items = registry_items(registry);
  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  long n = static_cast<long>(train_masked.size());
  long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  double total_steps = static_cast<double>(batches_per_epoch) * cfg.epochs;

  Rng shuffle_rng(cfg.train_seed ^ 0x94D049BB133111EBULL);
  std::vector<int> order(train_masked.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  TrainResult res;
  std::map<std::string, Tensor> best;
  long global_step = 0;
  double lr = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss_sum = 0.0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      size_t lo = static_cast<size_t>(b) * cfg.batch_size;
      size_t hi = std::min(lo + cfg.batch_size, train_masked.size());
      std::vector<const ModalitySample*> batch;
      batch.reserve(hi - lo);
      for (size_t i = lo; i < hi; ++i)
        batch.push_back(&train_masked[static_cast<size_t>(order[i])]);
      double scale = 1.0 / static_cast<double>(batch.size());

      GraphBuilder build = [&](Tape& tape, const ModalitySample& s) -> SampleGraph {
        WeightBinder bind(tape, true);
        SampleGraph g;
        g.params.reserve(items.size());
        for (const auto& [name, tensor] : items) g.params.push_back(bind(name, *tensor));
        const FeatureBundle* fb = cache.lookup(s);
        DiffValue logits = forward_syp(tape, s, backbone, model, fb, bind);
        DiffValue loss = compute_loss(tape, logits, s.label, cfg.task);
        g.loss = tape.scale(loss, scale);
        return g;
      };

      BatchGrads grads = run_batch(batch, build, items.size(), cfg.threads);
      ++global_step;
      lr = lr_at(static_cast<double>(global_step), total_steps, cfg.lr, cfg.warmup_frac);
      opt.step(items, grads.grads, lr);
      epoch_loss_sum += grads.loss * static_cast<double>(batch.size());
    }

    double train_loss = epoch_loss_sum / static_cast<double>(n);
    double val_metric = evaluate_model(cfg, backbone, model, val_set, val_pattern, &cache);
    res.log.push_back({epoch, train_loss, val_metric, lr});
    if (res.best_epoch < 0 || val_metric > res.best_val) {
      res.best_val = val_metric;
      res.best_epoch = epoch;
      best = model.named_weights();
    }
  }

  // The evaluator reads the best-validation snapshot.
  auto restore = [&](const std::string& name, Tensor& t) {
    auto it = best.find(name);
    if (it != best.end()) t = it->second;
  };
  model.stack.for_each_weight(restore);
  model.head.for_each_weight(restore);
  return res;
}

EvalBatch collect_scores(const ExperimentConfig& cfg, const BackboneBundle& backbone,
                         const PromptModel& model, const Dataset& ds,
                         const MissingPattern& pattern, const FeatureCache* cache) {
  std::vector<ModalitySample> masked = masked_copy(ds, pattern);
  EvalBatch batch;
  batch.task = cfg.task;
  batch.scores.resize(masked.size());
  batch.labels.resize(masked.size());
  std::exception_ptr error;
  int n = static_cast<int>(masked.size());

#pragma omp parallel for schedule(dynamic) \
    num_threads(cfg.threads > 0 ? cfg.threads : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      const ModalitySample& s = masked[static_cast<size_t>(i)];
      Tape tape;
      WeightBinder bind(tape, false);  // forward-only
      const FeatureBundle* fb = cache ? cache->lookup(s) : nullptr;
      DiffValue logits = forward_syp(tape, s, backbone, model, fb, bind);
      const Tensor& lv = logits.value();
      std::vector<double> row(lv.numel());
      for (size_t j = 0; j < lv.numel(); ++j) row[j] = lv[j];
      batch.scores[static_cast<size_t>(i)] = std::move(row);
      batch.labels[static_cast<size_t>(i)] = s.label;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return batch;
}

double task_metric(const ExperimentConfig& cfg, const EvalBatch& batch) {
  switch (cfg.task) {
    case TaskKind::Multilabel: return f1_macro(batch, cfg.multilabel_threshold);
    case TaskKind::Multiclass: return top1_accuracy(batch);
    case TaskKind::Binary: return auroc(batch);
  }
  throw ContractError("task_metric: bad task");
}

double evaluate_model(const ExperimentConfig& cfg, const BackboneBundle& backbone,
                      const PromptModel& model, const Dataset& ds, const MissingPattern& pattern,
                      const FeatureCache* cache) {
  return task_metric(cfg, collect_scores(cfg, backbone, model, ds, pattern, cache));
}

}  // namespace syp
