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
#include <vector>

#include "mmgem/model.hpp"

namespace mmgem {

enum class DecodeMode { greedy, beam };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::greedy;
  std::size_t beam_k = 3;
  std::size_t max_new = 20;
};

namespace detail {

// Log-probabilities of the next token for each of `seqs`, all sharing `prefix` [P, M].
template <class T>
std::vector<std::vector<double>> next_token_logprobs(const Model<T>& model, const Tensor<T>& prefix,
                                                     PromptMode prompt,
                                                     const std::vector<std::vector<TokenId>>& seqs) {
  Tape<T> tape(false);
  const std::size_t batch = seqs.size(), m = model.config().lm_dim, p = prefix.dim(0);
  Tensor<T> tiled({batch, p, m});
  for (std::size_t b = 0; b < batch; ++b)
    std::copy(prefix.data().begin(), prefix.data().end(), tiled.data().begin() + b * p * m);
  std::vector<TokenId> flat;
  for (const auto& s : seqs) {
    flat.push_back(Vocabulary::kBos);
    flat.insert(flat.end(), s.begin(), s.end());
  }
  auto prompt_vecs = model.prompt_vectors(tape, prompt, batch);
  auto inputs = concat<T>({tape.constant(std::move(tiled)), prompt_vecs, model.embed_tokens(tape, flat, batch)}, 1);
  auto hidden = model.lm_hidden(tape, inputs);
  const std::size_t total = inputs.dim(1);
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch; ++b) rows.push_back(b * total + total - 1);
  auto logp = log_softmax(model.logits_for_rows(tape, hidden, rows));
  const std::size_t v = logp.dim(1);
  std::vector<std::vector<double>> out(batch, std::vector<double>(v));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < v; ++j) out[b][j] = logp.value()[b * v + j];
  return out;
}

// Reserved ids other than EOS are never emitted.
inline bool emittable(TokenId id) { return id == Vocabulary::kEos || !Vocabulary::is_reserved(id); }

}  // namespace detail

/// Decodes a caption after [prefix ; prompt ; BOS]. The returned ids exclude EOS.
///
/// Greedy takes the arg-max each step (lowest id on ties). Beam search keeps
/// `beam_k` hypotheses ranked by mean log-probability per emitted token.
template <class T>
std::vector<TokenId> generate(const Model<T>& model, const Tensor<T>& prefix, PromptMode prompt,
                              const DecodeOptions& opt) {
  if (opt.max_new == 0) throw UsageError("generate: max_new must be positive");
  if (prefix.rank() != 2 || prefix.dim(1) != model.config().lm_dim)
    throw ShapeError("generate: prefix must be [P, lm_dim]");
  const std::size_t k = opt.mode == DecodeMode::greedy ? 1 : opt.beam_k;
  if (k == 0) throw UsageError("generate: beam width must be positive");

  struct Hyp {
    std::vector<TokenId> ids;
    double logp = 0;
    double score() const { return logp / static_cast<double>(std::max<std::size_t>(ids.size(), 1)); }
  };
  std::vector<Hyp> live = {Hyp{}};
  std::vector<Hyp> done;

  for (std::size_t step = 0; step < opt.max_new && !live.empty(); ++step) {
    std::vector<std::vector<TokenId>> seqs;
    for (const auto& h : live) seqs.push_back(h.ids);
    const auto logp = detail::next_token_logprobs(model, prefix, prompt, seqs);

    struct Cand {
      std::size_t hyp;
      TokenId tok;
      double logp;
      double score;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h)
      for (TokenId t = 0; t < logp[h].size(); ++t) {
        if (!detail::emittable(t)) continue;
        const double lp = live[h].logp + logp[h][t];
        cands.push_back({h, t, lp, lp / static_cast<double>(live[h].ids.size() + 1)});
      }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<Hyp> next;
    for (const auto& c : cands) {
      if (next.size() + done.size() >= k) break;
      Hyp h{live[c.hyp].ids, c.logp};
      h.ids.push_back(c.tok);
      if (c.tok == Vocabulary::kEos)
        done.push_back(std::move(h));
      else
        next.push_back(std::move(h));
    }
    live = std::move(next);
  }
  for (auto& h : live) done.push_back(std::move(h));
  std::stable_sort(done.begin(), done.end(),
                   [](const Hyp& a, const Hyp& b) { return a.score() > b.score(); });
  std::vector<TokenId> out = done.front().ids;
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

}  // namespace mmgem
