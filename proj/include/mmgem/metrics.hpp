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
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmgem/error.hpp"

namespace mmgem {

using Words = std::vector<std::string>;

/// Dense row-major similarity scores: rows are queries, columns candidates.
struct SimilarityMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  SimilarityMatrix() = default;
  SimilarityMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  SimilarityMatrix transposed() const {
    SimilarityMatrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
    return t;
  }

  /// Cosine matrices must stay inside [-1, 1] up to rounding.
  void check_cosine_range(double tol = 1e-5) const {
    for (double v : values)
      if (!(std::abs(v) <= 1.0 + tol)) throw NumericError("similarity outside [-1,1]: " + std::to_string(v));
  }
};

/// Rank (0-based) of candidate `truth` for query `q`: candidates scoring higher,
/// plus equal-scoring candidates with a lower index.
inline std::size_t rank_of(const SimilarityMatrix& s, std::size_t q, std::size_t truth) {
  const double target = s.at(q, truth);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < s.cols; ++j) {
    const double v = s.at(q, j);
    if (v > target || (v == target && j < truth)) ++rank;
  }
  return rank;
}

/// Recall@K per k with the true match of query i being candidate i.
inline std::vector<double> recall_at_k(const SimilarityMatrix& s, const std::vector<std::size_t>& ks) {
  if (s.rows == 0) throw UsageError("recall_at_k: no queries");
  if (s.rows > s.cols) throw UsageError("recall_at_k: more queries than candidates");
  for (auto k : ks)
    if (k == 0 || k > s.cols)
      throw UsageError("recall_at_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(s.cols) + "]");
  std::vector<double> out(ks.size(), 0.0);
  for (std::size_t q = 0; q < s.rows; ++q) {
    const std::size_t r = rank_of(s, q, q);
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (r < ks[i]) out[i] += 1.0;
  }
  for (auto& v : out) v /= static_cast<double>(s.rows);
  return out;
}

/// Recall@K when several candidates can be correct: query q is a hit when a
/// candidate j with cand_group[j] == query_group[q] ranks within the top K.
/// With query_group[q] = q and cand_group[j] = j this is recall_at_k.
inline std::vector<double> recall_at_k(const SimilarityMatrix& s, const std::vector<std::size_t>& ks,
                                       const std::vector<std::size_t>& query_group,
                                       const std::vector<std::size_t>& cand_group) {
  if (s.rows == 0) throw UsageError("recall_at_k: no queries");
  if (query_group.size() != s.rows || cand_group.size() != s.cols)
    throw UsageError("recall_at_k: one group id per query and per candidate required");
  for (auto k : ks)
    if (k == 0 || k > s.cols)
      throw UsageError("recall_at_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(s.cols) + "]");
  std::vector<double> out(ks.size(), 0.0);
  for (std::size_t q = 0; q < s.rows; ++q) {
    std::size_t best = s.cols;
    for (std::size_t j = 0; j < s.cols; ++j)
      if (cand_group[j] == query_group[q]) best = std::min(best, rank_of(s, q, j));
    if (best == s.cols) throw UsageError("recall_at_k: query " + std::to_string(q) + " has no correct candidate");
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (best < ks[i]) out[i] += 1.0;
  }
  for (auto& v : out) v /= static_cast<double>(s.rows);
  return out;
}

inline Words split_words(const std::string& text) {
  Words out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join_words(const Words& w, std::size_t begin, std::size_t end) {
  std::string s;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) s.push_back(' ');
    s += w[i];
  }
  return s;
}

/// Counts of every n-gram of order `n`.
inline std::map<std::string, std::size_t> ngram_counts(const Words& w, std::size_t n) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[join_words(w, i, i + n)];
  return out;
}

// ---------------------------------------------------------------------------
// BLEU-4
// ---------------------------------------------------------------------------

struct BleuCounts {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;  // closest reference length, shorter on ties
};

inline BleuCounts bleu_counts(const Words& cand, const std::vector<Words>& refs) {
  if (cand.empty()) throw UsageError("bleu4: empty candidate");
  if (refs.empty()) throw UsageError("bleu4: no references");
  BleuCounts c;
  c.cand_len = cand.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::string, std::size_t> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
    for (const auto& [g, k] : ngram_counts(cand, n)) {
      c.totals[n - 1] += k;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) c.matches[n - 1] += std::min(k, it->second);
    }
  }
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > c.cand_len ? len - c.cand_len : c.cand_len - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  c.ref_len = best;
  return c;
}

/// Score from counts. A zero unigram match gives 0. For n >= 2 a zero match
/// count is smoothed to 1/(total+1).
inline double bleu4_from_counts(const BleuCounts& c) {
  if (c.matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (c.matches[n] > 0)
      p = static_cast<double>(c.matches[n]) / static_cast<double>(c.totals[n]);
    else
      p = 1.0 / static_cast<double>(c.totals[n] + 1);
    log_sum += std::log(p);
  }
  const double bp = c.cand_len > c.ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.cand_len));
  return bp * std::exp(log_sum / 4.0);
}

inline double bleu4(const Words& cand, const std::vector<Words>& refs) {
  return bleu4_from_counts(bleu_counts(cand, refs));
}

// ---------------------------------------------------------------------------
// CIDEr-D
// ---------------------------------------------------------------------------

inline constexpr double kCiderSigma = 6.0;

/// Document frequencies of n-grams (orders 1..4) over reference sets.
struct CorpusStats {
  std::map<std::string, std::size_t> df[4];
  std::size_t documents = 0;

  static CorpusStats build(const std::vector<std::vector<Words>>& ref_sets) {
    CorpusStats s;
    for (const auto& refs : ref_sets) {
      ++s.documents;
      for (std::size_t n = 1; n <= 4; ++n) {
        std::set<std::string> seen;
        for (const auto& r : refs)
          for (const auto& [g, k] : ngram_counts(r, n)) seen.insert(g);
        for (const auto& g : seen) ++s.df[n - 1][g];
      }
    }
    return s;
  }
};

namespace detail {

struct CiderVec {
  std::map<std::string, double> v[4];
  double norm[4] = {0, 0, 0, 0};
  std::size_t length = 0;  // number of bigrams
};

inline CiderVec cider_vec(const Words& w, const CorpusStats& st) {
  CiderVec out;
  const double ref_len = std::log(static_cast<double>(st.documents));
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& [g, tf] : ngram_counts(w, n)) {
      const auto it = st.df[n - 1].find(g);
      const double df = std::log(std::max(1.0, it == st.df[n - 1].end() ? 0.0 : static_cast<double>(it->second)));
      const double x = static_cast<double>(tf) * (ref_len - df);
      out.v[n - 1][g] = x;
      out.norm[n - 1] += x * x;
      if (n == 2) out.length += tf;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

inline std::array<double, 4> cider_sim(const CiderVec& h, const CiderVec& r) {
  std::array<double, 4> val{};
  const double delta = static_cast<double>(h.length) - static_cast<double>(r.length);
  for (std::size_t n = 0; n < 4; ++n) {
    for (const auto& [g, x] : h.v[n]) {
      const auto it = r.v[n].find(g);
      if (it != r.v[n].end()) val[n] += std::min(x, it->second) * it->second;
    }
    if (h.norm[n] != 0 && r.norm[n] != 0) val[n] /= h.norm[n] * r.norm[n];
    val[n] *= std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  }
  return val;
}

}  // namespace detail

/// CIDEr-D of one candidate against its references (x10 scale).
inline double cider_d(const Words& cand, const std::vector<Words>& refs, const CorpusStats& stats) {
  if (stats.documents == 0) throw UsageError("cider_d: empty corpus statistics");
  if (refs.empty()) throw UsageError("cider_d: no references");
  const auto h = detail::cider_vec(cand, stats);
  std::array<double, 4> score{};
  for (const auto& r : refs) {
    const auto s = detail::cider_sim(h, detail::cider_vec(r, stats));
    for (std::size_t n = 0; n < 4; ++n) score[n] += s[n];
  }
  double avg = (score[0] + score[1] + score[2] + score[3]) / 4.0;
  avg /= static_cast<double>(refs.size());
  return avg * 10.0;
}

}  // namespace mmgem
