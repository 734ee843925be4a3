/* Copyright 2026 The latmem Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "latmem/tensor.hpp"

namespace latmem {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;  // index into the checked parameter list
  std::size_t worst_index = 0;  // flat coordinate inside that parameter
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
  // Diagnostics only. Coordinates whose analytic and numeric values are both
  // at float64 round-off level (a true zero gradient) make the relative error
  // 0/0; these fields report the error over the remaining coordinates.
  std::size_t zero_gradient_coordinates = 0;
  double max_rel_error_resolved = 0.0;
};

inline constexpr double kZeroAnalytic = 1e-12;
inline constexpr double kZeroNumeric = 1e-9;

// Compares reverse-mode gradients of `f` against central differences over
// every coordinate of `params`:
//   max |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// `f` must rebuild its graph on every call and be deterministic.
inline GradCheckResult finite_diff_check(const std::function<Tensor()>& f,
                                         std::vector<Tensor> params, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");
  for (Tensor& p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) {
    throw NumericError("finite_diff_check: loss is not finite");
  }
  backward(loss);

  GradCheckResult r;
  NoGradGuard no_record;  // perturbed evaluations only need values
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double fp = f().item();
      data[i] = orig - eps;
      const double fm = f().item();
      data[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_diff_check: non-finite loss at perturbed coordinate " +
                           std::to_string(i) + " of parameter " + std::to_string(pi));
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++r.coordinates;
      if (std::abs(analytic[i]) <= kZeroAnalytic && std::abs(numeric) <= kZeroNumeric) {
        ++r.zero_gradient_coordinates;
      } else {
        r.max_rel_error_resolved = std::max(r.max_rel_error_resolved, err);
      }
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_param = pi;
        r.worst_index = i;
        r.analytic = analytic[i];
        r.numeric = numeric;
      }
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return r;
}

}  // namespace latmem
