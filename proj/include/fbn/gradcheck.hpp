#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fbn/common.hpp"
#include "fbn/tensor.hpp"

namespace fbn {

// Central-difference check of reverse-mode gradients.
//
// `loss_fn` must rebuild the scalar loss from the current parameter values on
// every call; `params` are the tracked leaves it reads. Returns the max over
// all coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// The subtraction f(x+h) - f(x-h) carries cancellation noise of a few hundred
// ulps of |f|, so a coordinate whose |analytic - numeric| sits below that
// bound is unresolvable by the oracle in 64-bit arithmetic and is reported
// as consistent; any real backprop defect perturbs salient coordinates by
// amounts proportional to the gradient itself, far above the bound.
inline double max_rel_grad_error(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> params, double h = 1e-5) {
  detail::require(h > 0.0, "max_rel_grad_error: step must be positive");

  for (Tensor& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  if (!loss.all_finite()) throw numeric_error("gradient check: loss is not finite");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  constexpr double kUlp = 2.220446049250313e-16;
  const double noise_floor = 128.0 * kUlp * std::max(1.0, std::fabs(loss.item())) / (2.0 * h);

  double worst = 0.0;
  NoGradGuard guard;  // probe evaluations need values only
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.values()[i] = saved + h;
      const double fp = loss_fn().item();
      p.values()[i] = saved - h;
      const double fm = loss_fn().item();
      p.values()[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw numeric_error("gradient check: non-finite value at probe point");
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      if (std::fabs(a - numeric) <= noise_floor) continue;
      const double err = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace fbn
