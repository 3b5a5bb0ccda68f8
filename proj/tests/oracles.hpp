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

// Brute-force reference implementations used to check the metric kernels.
// Written without any code from mmgem/metrics.hpp: n-grams are vectors of
// words compared by linear scan, and ranking uses a full sort.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using Words = std::vector<std::string>;
using Gram = std::vector<std::string>;

inline std::vector<Gram> grams(const Words& w, std::size_t n) {
  std::vector<Gram> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) out.emplace_back(w.begin() + i, w.begin() + i + n);
  return out;
}

inline std::size_t count(const std::vector<Gram>& gs, const Gram& g) {
  return static_cast<std::size_t>(std::count(gs.begin(), gs.end(), g));
}

inline std::vector<Gram> unique(std::vector<Gram> gs) {
  std::sort(gs.begin(), gs.end());
  gs.erase(std::unique(gs.begin(), gs.end()), gs.end());
  return gs;
}

// Clipped precision, zero-unigram -> 0, smoothed 1/(total+1) for empty higher
// orders, closest reference length with ties to the shorter.
inline double bleu4(const Words& cand, const std::vector<Words>& refs) {
  double logp = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cg = grams(cand, n);
    double match = 0;
    for (const auto& g : unique(cg)) {
      std::size_t best = 0;
      for (const auto& r : refs) best = std::max(best, count(grams(r, n), g));
      match += static_cast<double>(std::min(count(cg, g), best));
    }
    if (n == 1 && match == 0) return 0.0;
    const double p = match > 0 ? match / static_cast<double>(cg.size()) : 1.0 / (static_cast<double>(cg.size()) + 1.0);
    logp += std::log(p);
  }
  std::vector<std::size_t> lens;
  for (const auto& r : refs) lens.push_back(r.size());
  std::sort(lens.begin(), lens.end());
  std::size_t r = lens[0];
  const auto c = static_cast<long>(cand.size());
  for (auto l : lens)
    if (std::labs(static_cast<long>(l) - c) < std::labs(static_cast<long>(r) - c)) r = l;
  const double bp = cand.size() > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(cand.size()));
  return bp * std::exp(logp / 4.0);
}

struct TfIdf {
  std::vector<std::pair<Gram, double>> v;
  double norm = 0;
};

// Document frequency of g: the number of reference sets containing it anywhere.
inline double df(const std::vector<std::vector<Words>>& corpus, const Gram& g) {
  double d = 0;
  for (const auto& set : corpus) {
    bool hit = false;
    for (const auto& r : set) hit = hit || count(grams(r, g.size()), g) > 0;
    d += hit ? 1.0 : 0.0;
  }
  return d;
}

inline TfIdf tfidf(const Words& w, std::size_t n, const std::vector<std::vector<Words>>& corpus) {
  TfIdf t;
  const auto gs = grams(w, n);
  for (const auto& g : unique(gs)) {
    const double x = static_cast<double>(count(gs, g)) *
                     (std::log(static_cast<double>(corpus.size())) - std::log(std::max(1.0, df(corpus, g))));
    t.v.emplace_back(g, x);
    t.norm += x * x;
  }
  t.norm = std::sqrt(t.norm);
  return t;
}

// CIDEr-D: clipped tf-idf cosine per order with a Gaussian length penalty on
// the bigram-count difference (sigma 6), averaged over orders and references, x10.
inline double cider_d(const Words& cand, const std::vector<Words>& refs,
                      const std::vector<std::vector<Words>>& corpus) {
  double total = 0;
  for (const auto& r : refs) {
    const double delta = static_cast<double>(grams(cand, 2).size()) - static_cast<double>(grams(r, 2).size());
    const double pen = std::exp(-delta * delta / 72.0);
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = tfidf(cand, n, corpus), q = tfidf(r, n, corpus);
      double dot = 0;
      for (const auto& [g, x] : h.v)
        for (const auto& [g2, y] : q.v)
          if (g == g2) dot += std::min(x, y) * y;
      if (h.norm != 0 && q.norm != 0) dot /= h.norm * q.norm;
      total += dot * pen;
    }
  }
  return 10.0 * total / 4.0 / static_cast<double>(refs.size());
}

// Recall@k by sorting candidate indices per query (score descending, index ascending).
inline double recall(const std::vector<std::vector<double>>& s, std::size_t k) {
  double hits = 0;
  for (std::size_t q = 0; q < s.size(); ++q) {
    std::vector<std::size_t> idx(s[q].size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[q][a] > s[q][b]; });
    const auto pos = static_cast<std::size_t>(std::find(idx.begin(), idx.end(), q) - idx.begin());
    hits += pos < k ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(s.size());
}

// Recall@k with group ids: a hit when any candidate of the query's group sorts within the top k.
inline double recall(const std::vector<std::vector<double>>& s, std::size_t k, const std::vector<std::size_t>& qg,
                     const std::vector<std::size_t>& cg) {
  double hits = 0;
  for (std::size_t q = 0; q < s.size(); ++q) {
    std::vector<std::size_t> idx(s[q].size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[q][a] > s[q][b]; });
    for (std::size_t p = 0; p < k; ++p)
      if (cg[idx[p]] == qg[q]) {
        hits += 1.0;
        break;
      }
  }
  return hits / static_cast<double>(s.size());
}

}  // namespace oracle
