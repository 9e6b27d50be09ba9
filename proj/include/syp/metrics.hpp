#pragma once

#include <vector>

#include "syp/tensor.hpp"

namespace syp {

enum class TaskKind { Multilabel, Multiclass, Binary };

// Parallel per-sample scores and ground truth for one evaluation pass.
struct EvalBatch {
  TaskKind task{};
  std::vector<std::vector<double>> scores;  // logits, width per task
  std::vector<std::vector<double>> labels;  // multilabel: 0/1 per class; multiclass: one-hot; binary: one bit
};

// Per-class F1 with the 0/0 := 0 convention, unweighted mean over classes.
// Predictions are sigmoid(score) >= threshold.
double f1_macro(const EvalBatch& batch, double threshold);

// Fraction of samples whose argmax score hits the label; ties break to the
// lowest class index.
double top1_accuracy(const EvalBatch& batch);

// Mann-Whitney AUROC via rank sums, ties counted 1/2; O(n log n).
double auroc(const EvalBatch& batch);

}  // namespace syp
