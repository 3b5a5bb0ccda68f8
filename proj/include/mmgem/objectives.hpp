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
#include <vector>

#include "mmgem/ops.hpp"

namespace mmgem {

inline constexpr double kTemperatureFloor = 0.01;

template <class T>
struct ContrastiveLosses {
  Var<T> v2t;
  Var<T> t2v;
  Var<T> total;  // v2t + t2v
};

/// Symmetric in-batch info-NCE over paired unit embeddings visual[B, E], text[B, E].
template <class T>
ContrastiveLosses<T> info_nce(Var<T> visual, Var<T> text, Var<T> tau) {
  const Shape& vs = visual.shape();
  if (vs.size() != 2 || text.shape() != vs || vs[0] == 0)
    throw ShapeError("info_nce: expects two [B, E] batches of equal shape");
  if (tau.numel() != 1 || !(tau.value()[0] > T(0))) throw NumericError("info_nce: tau must be > 0");
  const std::size_t b = vs[0], e = vs[1];
  for (const auto* m : {&visual.value(), &text.value()})
    for (std::size_t r = 0; r < b; ++r) {
      double ss = 0;
      for (std::size_t j = 0; j < e; ++j) ss += double((*m)[r * e + j]) * double((*m)[r * e + j]);
      if (std::abs(std::sqrt(ss) - 1.0) > 1e-5)
        throw NumericError("info_nce: embedding row " + std::to_string(r) + " is not unit norm");
    }
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i;
  auto logits = div_scalar(matmul(visual, transpose(text)), tau);
  auto v2t = mean(cross_entropy_rows(logits, diag));
  auto t2v = mean(cross_entropy_rows(transpose(logits), diag));
  return {v2t, t2v, add(v2t, t2v)};
}

/// Caption loss over scored rows: mean over samples of the mean per-token
/// cross-entropy of that sample's rows.
template <class T>
Var<T> caption_loss_rows(Var<T> logits, const std::vector<std::size_t>& targets,
                         const std::vector<std::size_t>& sample_of, std::size_t batch) {
  if (targets.empty()) throw NumericError("caption_loss: no scored positions");
  if (sample_of.size() != targets.size()) throw ShapeError("caption_loss: row bookkeeping mismatch");
  std::vector<std::size_t> count(batch, 0);
  for (auto s : sample_of) ++count.at(s);
  std::size_t present = 0;
  for (auto c : count) present += c > 0;
  Tensor<T> weights({targets.size()});
  for (std::size_t r = 0; r < targets.size(); ++r)
    weights[r] = T(1) / (static_cast<T>(present) * static_cast<T>(count[sample_of[r]]));
  auto ce = cross_entropy_rows(logits, targets);
  return sum(mul(ce, logits.tape->constant(std::move(weights))));
}

/// Caption loss from dense logits[B, L, V] with a per-position mask.
template <class T>
Var<T> caption_loss(Var<T> logits, const std::vector<std::vector<std::size_t>>& targets,
                    const std::vector<std::vector<bool>>& mask) {
  const Shape& s = logits.shape();
  if (s.size() != 3 || targets.size() != s[0] || mask.size() != s[0])
    throw ShapeError("caption_loss: expects logits [B, L, V] with per-sample targets and mask");
  const std::size_t batch = s[0], len = s[1];
  std::vector<std::size_t> rows, tgt, sample_of;
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b].size() != len || mask[b].size() != len)
      throw ShapeError("caption_loss: targets/mask length must equal L");
    for (std::size_t i = 0; i < len; ++i)
      if (mask[b][i]) {
        rows.push_back(b * len + i);
        tgt.push_back(targets[b][i]);
        sample_of.push_back(b);
      }
  }
  if (rows.empty()) throw NumericError("caption_loss: mask selects no positions");
  auto flat = reshape(logits, {batch * len, s[2]});
  return caption_loss_rows(gather_rows(flat, rows), tgt, sample_of, batch);
}

/// Unweighted sum of the embedding and captioning objectives.
template <class T>
Var<T> combined_loss(Var<T> l_emb, Var<T> l_gen) {
  if (l_emb.numel() != 1 || l_gen.numel() != 1) throw ShapeError("combined_loss: scalar losses expected");
  if (!std::isfinite(l_emb.value()[0]) || !std::isfinite(l_gen.value()[0]))
    throw NumericError("combined_loss: non-finite input");
  return add(l_emb, l_gen);
}

/// Projects tau back onto [0.01, inf) after an optimizer update.
template <class T>
void clamp_temperature(Tensor<T>& tau) {
  if (tau[0] < static_cast<T>(kTemperatureFloor)) tau[0] = static_cast<T>(kTemperatureFloor);
}

}  // namespace mmgem
