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
#include <filesystem>

#include "mmgem/evaluation.hpp"
#include "mmgem/training.hpp"

using namespace mmgem;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.patch = 8;
  c.vision_dim = 8;
  c.vision_depth = 1;
  c.vision_heads = 2;
  c.lm_dim = 8;
  c.lm_depth = 1;
  c.lm_heads = 2;
  c.embed_dim = 8;
  return c;
}

const Corpus& corpus() {
  static const Corpus c = [] {
    const auto dir = fs::temp_directory_path() / "mmgem_test_eval_corpus";
    fs::remove_all(dir);
    gen_synthetic_corpus({6, 31, false}, dir.string());
    return load_corpus(dir.string());
  }();
  return c;
}

const Model<float>& model() {
  static const Model<float> m = [] {
    Model<float> x(small_config(), 12);
    TrainConfig t;
    t.batch = 4;
    t.steps = 3;
    t.warmup = 1;
    t.model = small_config();
    train(x, t, corpus());
    return x;
  }();
  return m;
}

}  // namespace

TEST(Heatmap, ShapeAndRange) {
  for (int stage : {1, 2}) {
    const auto h = similarity_heatmap(model(), corpus().images[0], model().tokenize("a red circle"), stage);
    EXPECT_EQ(h.height, 4u);
    EXPECT_EQ(h.width, 4u);
    ASSERT_EQ(h.values.size(), 16u);
    for (double v : h.values) {
      EXPECT_GE(v, -1.0 - 1e-6);
      EXPECT_LE(v, 1.0 + 1e-6);
    }
  }
  EXPECT_THROW(similarity_heatmap(model(), corpus().images[0], model().tokenize("red"), 3), UsageError);
}

TEST(Heatmap, IdentityH4GivesTheSameMapInBothStages) {
  const auto text = model().tokenize("a blue square");
  EXPECT_EQ(similarity_heatmap(model(), corpus().images[1], text, 1).values,
            similarity_heatmap(model(), corpus().images[1], text, 2).values);
}

TEST(Heatmap, ArgmaxQuadrant) {
  HeatMap h;
  h.height = h.width = 4;
  h.values.assign(16, 0.0);
  h.values[2 * 4 + 3] = 0.9;
  EXPECT_EQ(h.argmax(), (std::pair<std::size_t, std::size_t>{2, 3}));
  EXPECT_EQ(h.argmax_quadrant(), 3);
  h.values[1] = 0.9;  // tie: first in row-major order
  EXPECT_EQ(h.argmax_quadrant(), 0);
}

TEST(ZeroShot, SingleClassAlwaysWins) {
  for (std::size_t i = 0; i < corpus().size(); ++i)
    EXPECT_EQ(zero_shot_classify(model(), corpus().images[i], {"circle"}, {"a photo of a {}"}), 0u);
}

TEST(ZeroShot, DuplicateClassesResolveToTheLowerIndex) {
  for (std::size_t i = 0; i < corpus().size(); ++i) {
    const auto c = zero_shot_classify(model(), corpus().images[i], {"square", "square", "square"}, {"a {}"});
    EXPECT_EQ(c, 0u);
  }
}

TEST(ZeroShot, MatchesBruteForceOverTemplates) {
  const std::vector<std::string> classes = {"circle", "square", "triangle", "red", "blue"};
  const std::vector<std::string> templates = {"a {}", "a photo of a {}", "a {} shape"};
  for (std::size_t i = 0; i < corpus().size(); ++i) {
    const auto img = embed_images(model(), {&corpus().images[i]}).front();
    std::size_t best = 0;
    double best_s = -2;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::vector<double> mean(img.size(), 0.0);
      for (const auto& t : templates) {
        const std::string text = t.substr(0, t.find("{}")) + classes[c] + t.substr(t.find("{}") + 2);
        const auto e = model().text_embeddings({model().tokenize(text)}).front();
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
      }
      double n = 0, s = 0;
      for (double x : mean) n += x * x;
      for (std::size_t j = 0; j < mean.size(); ++j) s += img[j] * mean[j] / std::sqrt(n);
      if (s > best_s) best = c, best_s = s;
    }
    EXPECT_EQ(zero_shot_classify(model(), corpus().images[i], classes, templates), best) << i;
  }
}

TEST(ZeroShot, BadInputs) {
  EXPECT_THROW(fill_template("no placeholder", "x"), UsageError);
  EXPECT_THROW(class_embeddings(model(), {}, {"a {}"}), UsageError);
  EXPECT_THROW(class_embeddings(model(), {"x"}, {}), UsageError);
}

TEST(Retrieval, RecallsAreFractionsAndMonotone) {
  const auto r = retrieval_eval(model(), corpus(), false, {1, 5, 10});
  ASSERT_EQ(r.i2t.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_GE(r.i2t[i], 0.0);
    EXPECT_LE(r.t2i[i], 1.0);
    if (i) {
      EXPECT_GE(r.i2t[i], r.i2t[i - 1]);
    }
  }
  // k beyond the corpus size is clamped, so R@10 over 6 pairs is 1
  EXPECT_EQ(r.i2t[2], 1.0);
  EXPECT_EQ(r.t2i[2], 1.0);
  EXPECT_TRUE(r.to_json().contains("i2t"));
}

TEST(Retrieval, EvaluationBatchingDoesNotChangeEmbeddings) {
  std::vector<const Image*> imgs;
  for (const auto& im : corpus().images) imgs.push_back(&im);
  const auto all = embed_images(model(), imgs);
  for (std::size_t i = 0; i < imgs.size(); ++i) EXPECT_EQ(embed_images(model(), {imgs[i]}).front(), all[i]);
}

TEST(Caption, BeamWidthOneEqualsGreedy) {
  for (int stage : {1, 2})
    for (std::size_t i = 0; i < corpus().size(); ++i) {
      const auto [prefix, mode] = caption_prefix(model(), corpus().images[i], stage);
      const auto g = generate(model(), prefix, mode, {DecodeMode::greedy, 3, 12});
      const auto b = generate(model(), prefix, mode, {DecodeMode::beam, 1, 12});
      EXPECT_EQ(g, b);
      EXPECT_LE(g.size(), 12u);
      for (auto id : g) EXPECT_FALSE(Vocabulary::is_reserved(id));
    }
}

TEST(Caption, BeamSearchOutputIsWellFormed) {
  const auto [prefix, mode] = caption_prefix(model(), corpus().images[0], 1);
  const auto b = generate(model(), prefix, mode, {DecodeMode::beam, 4, 10});
  EXPECT_LE(b.size(), 10u);
  for (auto id : b) EXPECT_FALSE(Vocabulary::is_reserved(id));
  EXPECT_THROW(generate(model(), prefix, mode, {DecodeMode::beam, 0, 10}), UsageError);
  EXPECT_THROW(generate(model(), prefix, mode, {DecodeMode::greedy, 1, 0}), UsageError);
}

TEST(Caption, EvaluationReport) {
  const auto ev = caption_eval(model(), corpus(), 1, {DecodeMode::greedy, 1, 12});
  EXPECT_EQ(ev.captions.size(), corpus().size());
  EXPECT_GE(ev.bleu4, 0.0);
  EXPECT_LE(ev.bleu4, 1.0);
  EXPECT_GE(ev.cider_d, 0.0);
  EXPECT_GE(ev.token_accuracy, 0.0);
  EXPECT_LE(ev.token_accuracy, 1.0);
  const auto j = ev.to_json();
  EXPECT_EQ(j.at("METEOR"), "unsupported");
  EXPECT_EQ(j.at("ROUGE-L"), "unsupported");
}

TEST(Caption, RegionCaptioningRejectsInvalidRegions) {
  EXPECT_THROW(caption_image(model(), corpus().images[0], 2, Region{0.5, 0, 0.5, 1}, {}), UsageError);
  EXPECT_NO_THROW(caption_image(model(), corpus().images[0], 2, Region{0, 0, 0.5, 0.5}, {}));
}
