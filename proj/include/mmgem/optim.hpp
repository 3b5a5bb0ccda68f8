/*
 * Copyright (c) 2026 The mmgem Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmgem/tensor.hpp"

namespace mmgem {

/// Linear warm-up to `peak`, then cosine decay to zero at `total`.
inline double lr_schedule(std::size_t step, std::size_t warmup, std::size_t total, double peak) {
  if (step > total) throw UsageError("lr_schedule: step " + std::to_string(step) + " beyond total " +
                                     std::to_string(total));
  if (warmup > total) throw UsageError("lr_schedule: warmup exceeds total steps");
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

enum class OptimizerKind { adamw, lamb };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adamw") return OptimizerKind::adamw;
  if (s == "lamb") return OptimizerKind::lamb;
  throw UsageError("unknown optimizer '" + s + "' (adamw|lamb)");
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW (decoupled decay) and LAMB (layer-wise trust ratio) over named parameters.
///
/// Moments are keyed by parameter address and allocated on first update.
/// Parameters with `decay == false` never receive weight decay.
template <class T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, AdamHyper hyper = {}) : kind_(kind), hyper_(hyper) {}

  OptimizerKind kind() const { return kind_; }
  std::size_t step_count() const { return step_; }

  /// One update of every trainable parameter in `params`; `lr_of` maps a
  /// parameter to its learning rate.
  template <class Params, class LrFn>
  void step(Params& params, LrFn&& lr_of, double weight_decay) {
    ++step_;
    for (auto& p : params) {
      if (!p.trainable) continue;
      if (!p.grad.all_finite()) throw NumericError("optimizer: non-finite gradient in " + p.name);
      update(p, lr_of(p), p.decay ? weight_decay : 0.0);
    }
  }

  /// Update of a single parameter (the step counter is advanced by step()).
  void update(Parameter<T>& p, double lr, double wd) {
    auto& st = state_[&p];
    if (st.m.size() != p.value.numel()) {
      st.m.assign(p.value.numel(), 0.0);
      st.v.assign(p.value.numel(), 0.0);
    }
    const double t = static_cast<double>(step_ == 0 ? 1 : step_);
    const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
    const std::size_t n = p.value.numel();
    std::vector<double> dir(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.grad[i];
      st.m[i] = hyper_.beta1 * st.m[i] + (1.0 - hyper_.beta1) * g;
      st.v[i] = hyper_.beta2 * st.v[i] + (1.0 - hyper_.beta2) * g * g;
      const double mhat = st.m[i] / bc1, vhat = st.v[i] / bc2;
      dir[i] = mhat / (std::sqrt(vhat) + hyper_.eps);
    }
    if (kind_ == OptimizerKind::adamw) {
      for (std::size_t i = 0; i < n; ++i) {
        double w = p.value[i];
        w -= lr * wd * w;
        w -= lr * dir[i];
        p.value[i] = static_cast<T>(w);
      }
      return;
    }
    double wnorm = 0, unorm = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dir[i] += wd * static_cast<double>(p.value[i]);
      wnorm += static_cast<double>(p.value[i]) * static_cast<double>(p.value[i]);
      unorm += dir[i] * dir[i];
    }
    wnorm = std::sqrt(wnorm);
    unorm = std::sqrt(unorm);
    const double trust = (wnorm > 0 && unorm > 0) ? wnorm / unorm : 1.0;
    for (std::size_t i = 0; i < n; ++i)
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - lr * trust * dir[i]);
  }

  /// Last trust ratio is not retained; exposed for tests via this helper.
  static double trust_ratio(double weight_norm, double update_norm) {
    return (weight_norm > 0 && update_norm > 0) ? weight_norm / update_norm : 1.0;
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerKind kind_;
  AdamHyper hyper_;
  std::size_t step_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> state_;
};

}  // namespace mmgem
