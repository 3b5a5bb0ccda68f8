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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mmgem/autodiff.hpp"

namespace mmgem {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel = 0;
};

struct GradCheckParam {
  std::string name;
  std::size_t checked = 0;
  double rel = 0;          // ||a - n|| / max(||a||, ||n||) over the checked entries
  double max_entry_rel = 0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckParam> params;
  /// Entries whose element-wise relative error exceeded the flag threshold.
  std::vector<GradCheckEntry> flagged;
  /// Largest per-tensor relative error.
  double max_rel = 0;

  bool passed(double tol) const { return max_rel < tol; }
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares supplied analytic gradients against central differences of `f`.
///
/// `f` is evaluated twice at the unperturbed point first; any bitwise mismatch
/// means it is not deterministic and the comparison would be meaningless.
/// `stride` > 1 checks every stride-th entry of each parameter.
template <class T>
GradCheckReport compare_gradients(const std::function<T()>& f,
                                  const std::vector<Parameter<T>*>& params,
                                  const std::vector<Tensor<T>>& analytic, T eps,
                                  double flag_above = 1e-4, std::size_t stride = 1) {
  if (analytic.size() != params.size())
    throw ShapeError("compare_gradients: one analytic tensor per parameter required");
  const T base = f();
  if (f() != base) throw NumericError("finite_difference_check: objective is not deterministic");

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter<T>& param = *params[p];
    if (analytic[p].shape() != param.value.shape())
      throw ShapeError("compare_gradients: gradient shape mismatch for " + param.name);
    GradCheckParam summary{param.name};
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < param.value.numel(); i += stride) {
      const T saved = param.value[i];
      param.value[i] = saved + eps;
      const T up = f();
      param.value[i] = saved - eps;
      const T down = f();
      param.value[i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
      const double ad = analytic[p][i];
      const double rel = gradcheck_relative_error(ad, numeric);
      ++summary.checked;
      diff2 += (ad - numeric) * (ad - numeric);
      a2 += ad * ad;
      n2 += numeric * numeric;
      if (rel > summary.max_entry_rel) {
        summary.max_entry_rel = rel;
        summary.worst_index = i;
      }
      if (rel > flag_above) report.flagged.push_back({param.name, i, ad, numeric, rel});
    }
    summary.rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    report.max_rel = std::max(report.max_rel, summary.rel);
    report.params.push_back(std::move(summary));
  }
  return report;
}

/// Reverse-mode gradients of `build` checked against central differences.
///
/// `build` records a scalar objective on the tape it is given. Every listed
/// parameter is made trainable for the duration of the check.
template <class T>
GradCheckReport finite_difference_check(const std::function<Var<T>(Tape<T>&)>& build,
                                        const std::vector<Parameter<T>*>& params, T eps,
                                        double flag_above = 1e-4, std::size_t stride = 1) {
  std::vector<bool> was_trainable;
  for (auto* p : params) {
    was_trainable.push_back(p->trainable);
    p->trainable = true;
    p->grad = Tensor<T>(p->value.shape());
  }
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    tape.backward(build(tape));
    for (auto* p : params) analytic.push_back(p->grad);
  }
  const std::function<T()> f = [&build]() {
    Tape<T> tape;
    return build(tape).value()[0];
  };
  auto report = compare_gradients<T>(f, params, analytic, eps, flag_above, stride);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->trainable = was_trainable[i];
  return report;
}

}  // namespace mmgem
