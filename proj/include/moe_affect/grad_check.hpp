#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moe_affect/param_store.hpp"
#include "moe_affect/rng.hpp"

namespace moe_affect {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  bool deterministic = true;
};

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t max_coords = 200;  // random subsample size when the store is larger
  std::uint64_t seed = 0;
};

/// Central-difference check of analytic gradients.
///
/// The numeric side always runs in 64-bit: the store is promoted to double
/// and `loss_fn` is evaluated on the promoted copy. The analytic side stays
/// in the store's own precision via `grad_fn`, which must fill the store's
/// gradient accumulators. For T = float this checks 32-bit gradient rules
/// against a 64-bit finite-difference oracle.
///
/// Relative error uses a denominator floor so coordinates whose true gradient
/// is zero are judged by absolute error.
template <class T>
GradCheckReport grad_check(ParamStore<T>& params,
                           const std::function<double(const ParamStore<double>&)>& loss_fn,
                           const std::function<void(ParamStore<T>&)>& grad_fn,
                           GradCheckOptions opts = {}) {
  GradCheckReport report;
  ParamStore<double> promoted = params.template cast<double>();

  double l1 = loss_fn(promoted);
  double l2 = loss_fn(promoted);
  if (l1 != l2) {
    report.deterministic = false;
    return report;
  }

  params.zero_grads();
  grad_fn(params);

  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& name : params.names()) {
    std::size_t n = params.value(name).size();
    for (std::size_t i = 0; i < n; ++i) coords.push_back({name, i});
  }
  if (coords.size() > opts.max_coords) {
    Rng rng(opts.seed);
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(opts.max_coords);
  }

  for (const auto& c : coords) {
    double& v = promoted.value(c.name).a[c.index];
    double saved = v;
    v = saved + opts.eps;
    double lp = loss_fn(promoted);
    v = saved - opts.eps;
    double lm = loss_fn(promoted);
    v = saved;

    double numeric = (lp - lm) / (2.0 * opts.eps);
    double analytic = double(params.at(c.name).grad.a[c.index]);
    double abs_err = std::abs(analytic - numeric);
    double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    if (rel_err > report.max_rel_err) {
      report.max_rel_err = rel_err;
      report.worst_param = c.name;
      report.worst_index = c.index;
    }
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    ++report.coords_checked;
  }
  return report;
}

}  // namespace moe_affect
