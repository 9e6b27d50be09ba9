#include "syp/grad_check.hpp"

#include <cmath>

#include "syp/util.hpp"

namespace syp {

GradCheckResult finite_diff_check(const ScalarFn& f, std::span<const ParamRef> params,
                                  const GradsFn& analytic_grads, double step) {
  if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
  GradCheckResult res;
  std::vector<Tensor> grads = analytic_grads();
  if (grads.size() != params.size())
    throw ContractError(str("finite_diff_check: ", grads.size(), " gradients for ",
                            params.size(), " parameters"));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    const Tensor& g = grads[p];
    if (!t.same_shape(g))
      throw ContractError(str("finite_diff_check: gradient shape ", g.shape_str(),
                              " does not match parameter ", params[p].name, " ", t.shape_str()));
    for (size_t i = 0; i < t.numel(); ++i) {
      double saved = t[i];
      t[i] = saved + step;
      double fp = f();
      t[i] = saved - step;
      double fm = f();
      t[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        res.ok = false;
        res.failure = str("non-finite f at ", params[p].name, "[", i, "]");
        return res;
      }
      double numeric = (fp - fm) / (2.0 * step);
      double analytic = g[i];
      double denom = std::max(1e-12, std::abs(analytic) + std::abs(numeric));
      double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = str(params[p].name, "[", i, "]");
      }
    }
  }
  return res;
}

}  // namespace syp
