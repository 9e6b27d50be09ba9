#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "syp/tensor.hpp"

namespace syp {

// A named, externally owned parameter array mutated in place by the checker.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct GradCheckResult {
  bool ok = true;             // false when f went non-finite
  std::string failure;        // names the offending parameter element
  double max_rel_err = 0.0;
  std::string worst;          // "name[i]" with the largest relative error
};

using ScalarFn = std::function<double()>;
// Analytic gradients aligned with the ParamRef list, recomputed fresh.
using GradsFn = std::function<std::vector<Tensor>()>;

// Central finite differences against analytic gradients:
//   |analytic - numeric| / max(1e-12, |analytic| + |numeric|), maxed over
// every element of every parameter. f must be deterministic.
GradCheckResult finite_diff_check(const ScalarFn& f, std::span<const ParamRef> params,
                                  const GradsFn& analytic_grads, double step);

}  // namespace syp
