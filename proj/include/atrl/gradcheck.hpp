#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "atrl/rng.hpp"
#include "atrl/tensor.hpp"

namespace atrl {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// Central-difference check of analytic gradients. `params` carry already
// computed gradients; `f` re-evaluates the scalar objective from the current
// parameter values (and must not itself touch the gradients). Tensors larger
// than max_coords_per_tensor are spot-checked on a seeded random subset.
// Relative error is |analytic - numeric| / max(1e-8, |numeric|).
inline GradCheckReport finite_diff_check(
    std::span<Tensor> params, const std::function<double()>& f,
    double eps = 1e-3, std::size_t max_coords_per_tensor = 64,
    std::uint64_t seed = 0) {
  if (!(eps > 0.0) || eps > 0.1) {
    throw Error("finite_diff_check: eps must be in (0, 0.1]");
  }
  if (max_coords_per_tensor == 0) {
    throw Error("finite_diff_check: need at least one coordinate per tensor");
  }
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    if (!p.has_grad()) {
      throw Error("finite_diff_check: tensor " + std::to_string(t) +
                  " has no gradient to check");
    }
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_tensor) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng = keyed_rng(seed, "gradcheck", t);
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
      rng.shuffle(coords);
      coords.resize(max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      double& v = p.values()[idx];
      const double saved = v;
      v = saved + eps;
      const double fp = f();
      v = saved - eps;
      const double fm = f();
      v = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p.grad()[idx];
      const double rel = std::fabs(analytic - numeric) /
                         std::max(1e-8, std::fabs(numeric));
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace atrl
