#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/errors.hpp"

namespace smamba {

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference verification of reverse-mode gradients.
//
// f must be deterministic in the current parameter values. Called with a
// non-null grads pointer it returns the scalar loss and writes dL/dparam
// (one array per parameter, matching `params` order); called with nullptr
// it returns the loss only.
//
// Relative error per element: |analytic - numeric| / max(|analytic|, |numeric|, floor).
// The floor keeps central-difference roundoff noise on near-zero gradients
// from registering as spurious relative error.
inline FiniteDiffReport finite_difference_check(
    const std::function<double(std::vector<Array<double>>*)>& f,
    const std::vector<Array<double>*>& params, double h, double floor = 1e-6) {
  if (h <= 0.0) throw ContractError("finite_difference_check requires h > 0");
  std::vector<Array<double>> analytic;
  f(&analytic);
  if (analytic.size() != params.size())
    throw ContractError("analytic gradient count does not match parameter count");

  FiniteDiffReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Array<double>& theta = *params[p];
    if (analytic[p].shape != theta.shape)
      throw ContractError("analytic gradient shape mismatch for parameter " + std::to_string(p));
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double fp = f(nullptr);
      theta[i] = saved - h;
      const double fm = f(nullptr);
      theta[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace smamba
