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
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "latmem/config.hpp"
#include "latmem/model.hpp"

namespace latmem {

// Adam moments for one parameter. `t` counts the updates this parameter has
// received, so a parameter that joins training late gets its own bias
// correction.
struct Moments {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  bool operator==(const Moments&) const = default;
};

using MomentMap = std::map<std::string, Moments>;

struct StepReport {
  bool applied = false;  // false when a non-finite gradient skipped the step
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

// AdamW with decoupled weight decay and optional global-norm clipping over
// `params`. Gradients are read from each tensor; nothing is zeroed here.
inline StepReport adamw_step(std::span<const NamedTensor> params, MomentMap& moments,
                             const OptimConfig& cfg) {
  StepReport rep;
  double sq = 0.0;
  for (const NamedTensor& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  rep.grad_norm = std::sqrt(sq);
  if (!std::isfinite(rep.grad_norm)) return rep;
  if (cfg.max_grad_norm > 0.0 && rep.grad_norm > cfg.max_grad_norm) {
    rep.clip_scale = cfg.max_grad_norm / (rep.grad_norm + 1e-6);
  }
  for (const NamedTensor& p : params) {
    Tensor param = p.tensor;
    Moments& mo = moments[p.name];
    if (mo.m.size() != param.numel()) {
      mo.m.assign(param.numel(), 0.0);
      mo.v.assign(param.numel(), 0.0);
      mo.t = 0;
    }
    ++mo.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mo.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mo.t));
    auto data = param.data();
    const auto grad = param.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i] * rep.clip_scale;
      mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g;
      mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      data[i] -= cfg.learning_rate * cfg.weight_decay * data[i];
      data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  rep.applied = true;
  return rep;
}

}  // namespace latmem
