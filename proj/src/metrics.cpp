#include "syp/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "syp/util.hpp"

namespace syp {

namespace {

void check_parallel(const EvalBatch& b, const char* what) {
  if (b.scores.empty() || b.scores.size() != b.labels.size())
    throw ContractError(str(what, ": scores/labels must be parallel and nonempty (",
                            b.scores.size(), " vs ", b.labels.size(), ")"));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double f1_macro(const EvalBatch& batch, double threshold) {
  check_parallel(batch, "f1_macro");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ContractError(str("f1_macro: threshold ", threshold, " outside (0,1)"));
  size_t n_classes = batch.scores[0].size();
  double f1_sum = 0.0;
  for (size_t c = 0; c < n_classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < batch.scores.size(); ++i) {
      bool pred = stable_sigmoid(batch.scores[i][c]) >= threshold;
      bool truth = batch.labels[i][c] != 0.0;
      if (pred && truth) ++tp;
      if (pred && !truth) ++fp;
      if (!pred && truth) ++fn;
    }
    double precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    double recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    double f1 = (precision + recall) == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    f1_sum += f1;
  }
  return f1_sum / static_cast<double>(n_classes);
}

double top1_accuracy(const EvalBatch& batch) {
  check_parallel(batch, "top1_accuracy");
  long hits = 0;
  for (size_t i = 0; i < batch.scores.size(); ++i) {
    const auto& s = batch.scores[i];
    size_t arg = 0;
    for (size_t j = 1; j < s.size(); ++j)
      if (s[j] > s[arg]) arg = j;  // strict: ties keep the lowest index
    const auto& y = batch.labels[i];
    size_t truth = 0;
    for (size_t j = 1; j < y.size(); ++j)
      if (y[j] > y[truth]) truth = j;
    if (arg == truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch.scores.size());
}

double auroc(const EvalBatch& batch) {
  check_parallel(batch, "auroc");
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> entries;
  entries.reserve(batch.scores.size());
  size_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < batch.scores.size(); ++i) {
    bool pos = batch.labels[i][0] != 0.0;
    entries.push_back({batch.scores[i][0], pos});
    (pos ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0)
    throw InputError(str("auroc: undefined for a single-class batch (", n_pos, " positives, ",
                         n_neg, " negatives)"));
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });
  // Average ranks over tie groups, then the Mann-Whitney U statistic.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < entries.size()) {
    size_t j = i;
    while (j < entries.size() && entries[j].score == entries[i].score) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k)
      if (entries[k].positive) rank_sum_pos += avg_rank;
    i = j;
  }
  double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace syp
