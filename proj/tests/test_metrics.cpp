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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mmgem/metrics.hpp"
#include "mmgem/rng.hpp"
#include "oracles.hpp"

using namespace mmgem;

namespace {

Words random_sentence(Rng& rng, std::size_t min_len, std::size_t max_len) {
  static const char* vocab[] = {"a", "red", "blue", "circle", "square", "and", "the"};
  Words w(min_len + rng.below(max_len - min_len + 1));
  for (auto& x : w) x = vocab[rng.below(7)];
  return w;
}

std::vector<Words> random_refs(Rng& rng) {
  std::vector<Words> refs(1 + rng.below(4));
  for (auto& r : refs) r = random_sentence(rng, 1, 9);
  return refs;
}

}  // namespace

TEST(Bleu, HandWorkedExample) {
  const double s = bleu4(split_words("a b c d e"), {split_words("a b c d f")});
  EXPECT_NEAR(s, std::pow(0.2, 0.25), 1e-15);
  EXPECT_NEAR(s, oracle::bleu4(split_words("a b c d e"), {split_words("a b c d f")}), 1e-15);
}

TEST(Bleu, IdenticalIsOneAndDisjointIsZero) {
  const auto w = split_words("a red circle and a blue square");
  EXPECT_DOUBLE_EQ(bleu4(w, {w}), 1.0);
  EXPECT_EQ(bleu4(split_words("x y z"), {w}), 0.0);
  EXPECT_THROW(bleu4({}, {w}), UsageError);
  EXPECT_THROW(bleu4(w, {}), UsageError);
}

TEST(Bleu, BrevityPenaltyUsesClosestReference) {
  const auto c = bleu_counts(split_words("a b c"), {split_words("a b c d e f g"), split_words("a b")});
  EXPECT_EQ(c.ref_len, 2u);
  const auto tie = bleu_counts(split_words("a b c"), {split_words("a b c d"), split_words("a b")});
  EXPECT_EQ(tie.ref_len, 2u);
}

TEST(Bleu, MatchesBruteForceOracle) {
  Rng rng(100);
  for (int i = 0; i < 50; ++i) {
    const auto cand = random_sentence(rng, 1, 9);
    const auto refs = random_refs(rng);
    EXPECT_NEAR(bleu4(cand, refs), oracle::bleu4(cand, refs), 1e-12) << i;
  }
}

TEST(Cider, IdenticalCandidateScoresTen) {
  const std::vector<std::vector<Words>> corpus = {{split_words("a red circle")},
                                                  {split_words("a blue square and a red circle")},
                                                  {split_words("the green triangle")}};
  const auto stats = CorpusStats::build(corpus);
  EXPECT_NEAR(cider_d(corpus[1][0], corpus[1], stats), 10.0, 1e-12);
  EXPECT_EQ(cider_d(split_words("x y z w"), corpus[2], stats), 0.0);
}

TEST(Cider, DuplicatingTheCorpusLeavesScoresUnchanged) {
  Rng rng(7);
  std::vector<std::vector<Words>> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(random_refs(rng));
  auto doubled = corpus;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  const auto a = CorpusStats::build(corpus), b = CorpusStats::build(doubled);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    // candidates drawn from the corpus so every n-gram has a document frequency
    const auto& ref = corpus[i][0];
    const Words cand(ref.begin(), ref.begin() + static_cast<long>(1 + rng.below(ref.size())));
    EXPECT_NEAR(cider_d(cand, corpus[i], a), cider_d(cand, corpus[i], b), 1e-12);
  }
}

TEST(Cider, MatchesBruteForceOracle) {
  Rng rng(200);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::vector<Words>> corpus;
    const std::size_t docs = 2 + rng.below(5);
    for (std::size_t d = 0; d < docs; ++d) corpus.push_back(random_refs(rng));
    const auto stats = CorpusStats::build(corpus);
    const auto cand = random_sentence(rng, 1, 9);
    const auto& refs = corpus[rng.below(docs)];
    EXPECT_NEAR(cider_d(cand, refs, stats), oracle::cider_d(cand, refs, corpus), 1e-12) << i;
  }
}

TEST(Recall, MatchesFullSortOracleIncludingTies) {
  Rng rng(300);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng.below(12);
    SimilarityMatrix s(n, n);
    std::vector<std::vector<double>> rows(n, std::vector<double>(n));
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t j = 0; j < n; ++j) s.at(q, j) = rows[q][j] = static_cast<double>(rng.below(4)) / 4.0;
    for (std::size_t k = 1; k <= n; ++k) EXPECT_EQ(recall_at_k(s, {k})[0], oracle::recall(rows, k)) << i;
  }
}

TEST(Recall, GroupedMatchesFullSortOracle) {
  Rng rng(301);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 2 + rng.below(11);
    SimilarityMatrix s(n, n);
    std::vector<std::vector<double>> rows(n, std::vector<double>(n));
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t j = 0; j < n; ++j) s.at(q, j) = rows[q][j] = static_cast<double>(rng.below(4)) / 4.0;
    // each item belongs to the group of a lower (or its own) index
    std::vector<std::size_t> g(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = rng.below(3) == 0 ? g[rng.below(j + 1)] : j;
    for (std::size_t k = 1; k <= n; ++k) EXPECT_EQ(recall_at_k(s, {k}, g, g)[0], oracle::recall(rows, k, g, g)) << i;
  }
}

TEST(Recall, GroupsOfSingletonsEqualPlainRecall) {
  Rng rng(302);
  SimilarityMatrix s(7, 7);
  for (auto& v : s.values) v = rng.uniform(-1, 1);
  std::vector<std::size_t> id(7);
  std::iota(id.begin(), id.end(), 0);
  EXPECT_EQ(recall_at_k(s, {1, 3, 7}, id, id), recall_at_k(s, {1, 3, 7}));
  EXPECT_THROW(recall_at_k(s, {1}, std::vector<std::size_t>(7, 9), id), UsageError);
}

TEST(Recall, EdgeCases) {
  SimilarityMatrix one(1, 1);
  EXPECT_EQ(recall_at_k(one, {1})[0], 1.0);
  SimilarityMatrix s(3, 3);
  EXPECT_THROW(recall_at_k(s, {0}), UsageError);
  EXPECT_THROW(recall_at_k(s, {4}), UsageError);
  // all-equal scores: ties resolve to the lower index
  EXPECT_EQ(recall_at_k(s, {1, 2, 3}), (std::vector<double>{1.0 / 3, 2.0 / 3, 1.0}));
}

TEST(Recall, SymmetricMatrixGivesEqualDirections) {
  Rng rng(9);
  SimilarityMatrix s(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j <= i; ++j) s.at(i, j) = s.at(j, i) = rng.uniform(-1, 1);
  EXPECT_EQ(recall_at_k(s, {1, 3}), recall_at_k(s.transposed(), {1, 3}));
}
