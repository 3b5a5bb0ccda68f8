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
#include <set>

#include "mmgem/gradcheck.hpp"
#include "mmgem/model.hpp"
#include "mmgem/objectives.hpp"

using namespace mmgem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch = 4;
  c.vision_dim = 8;
  c.vision_depth = 1;
  c.vision_heads = 2;
  c.lm_dim = 8;
  c.lm_depth = 1;
  c.lm_heads = 2;
  c.embed_dim = 8;
  c.long_text_len = 8;
  c.max_text_len = 6;
  c.init_std = 0.3;
  return c;
}

Image random_image(Rng& rng, std::size_t s) {
  Image img({3, s, s});
  for (auto& x : img.storage()) x = static_cast<float>(rng.uniform());
  return img;
}

std::vector<TokenId> words(const Model<double>& m, const std::string& s) { return m.tokenize(s); }

}  // namespace

TEST(Patchify, LayoutIsChannelThenRowThenColumn) {
  Image img({3, 4, 4});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i);
  const auto p = patchify<double>(img, 2);
  ASSERT_EQ(p.shape(), (Shape{4, 12}));
  // patch (0,1): x in [2,4), y in [0,2)
  EXPECT_EQ(p[1 * 12 + 0], 2.0);
  EXPECT_EQ(p[1 * 12 + 1], 3.0);
  EXPECT_EQ(p[1 * 12 + 2], 6.0);
  EXPECT_EQ(p[1 * 12 + 4], 16.0 + 2.0);
  EXPECT_THROW(patchify<double>(img, 3), ShapeError);
}

TEST(Model, EncoderShapes) {
  auto cfg = tiny_config();
  Model<double> m(cfg, 1);
  Rng rng(2);
  const Image a = random_image(rng, 8), b = random_image(rng, 8);
  Tape<double> t(false);
  auto v = m.encode_images(t, {&a, &b});
  EXPECT_EQ(v.shape(), (Shape{2, 4, 8}));
  EXPECT_EQ(m.embed_visual(t, v).shape(), (Shape{2, 8}));
  EXPECT_EQ(m.visual_prefix(t, v, 1).shape(), (Shape{2, 1, 8}));
  EXPECT_EQ(m.visual_prefix(t, v, 2).shape(), (Shape{2, 4, 8}));
  EXPECT_EQ(m.feature_map(a).channels, 8u);
  const Image wrong = random_image(rng, 12);
  EXPECT_THROW(m.encode_images(t, {&wrong}), ShapeError);
}

TEST(Model, DefaultConfigHasEightByEightGrid) {
  ModelConfig c;
  EXPECT_EQ(c.grid(), 8u);
  EXPECT_EQ(c.num_patches(), 64u);
  Image img({3, 32, 32});
  EXPECT_EQ(patchify<float>(img, c.patch).shape(), (Shape{64, 48}));
}

TEST(Model, EmbeddingsAreUnitNorm) {
  Model<double> m(tiny_config(), 3);
  Rng rng(4);
  const Image a = random_image(rng, 8);
  Tape<double> t(false);
  auto e = m.embed_visual(t, m.encode_images(t, {&a}));
  double ss = 0;
  for (double x : e.value().storage()) ss += x * x;
  EXPECT_NEAR(ss, 1.0, 1e-12);
  const auto txt = m.text_embeddings({words(m, "a red circle")});
  ss = 0;
  for (double x : txt[0]) ss += x * x;
  EXPECT_NEAR(ss, 1.0, 1e-12);
}

TEST(Model, CausalDecoderIgnoresLaterTokens) {
  Model<double> m(tiny_config(), 5);
  const auto a = words(m, "a red circle and a blue square");
  auto b = a;
  b.back() = *m.vocab().find("triangle");
  Tape<double> t(false);
  const auto ha = m.lm_forward(t, std::nullopt, a).hidden.value();
  const auto hb = m.lm_forward(t, std::nullopt, b).hidden.value();
  const std::size_t d = 8;
  for (std::size_t i = 0; i + 1 < a.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(ha[i * d + j], hb[i * d + j]);
  bool last_differs = false;
  for (std::size_t j = 0; j < d; ++j) last_differs |= ha[(a.size() - 1) * d + j] != hb[(a.size() - 1) * d + j];
  EXPECT_TRUE(last_differs);
}

TEST(Model, TextEncodingRules) {
  Model<double> m(tiny_config(), 6);
  Tape<double> t(false);
  EXPECT_THROW(m.encode_text(t, {{}}), UsageError);
  EXPECT_THROW(m.encode_text(t, {{Vocabulary::kEmb}}), UsageError);
  EXPECT_THROW(m.encode_text(t, {{Vocabulary::kCap}}), UsageError);
  // padding in a batch does not change an embedding
  const auto short_text = words(m, "a red circle");
  const auto long_text = words(m, "a green square and a red circle");
  const auto alone = m.text_embeddings({short_text});
  const auto batched = m.text_embeddings({long_text, short_text});
  EXPECT_EQ(alone[0], batched[1]);
}

TEST(Model, TruncationBeforeEmbToken) {
  Model<double> m(tiny_config(), 6);
  std::string text;
  for (int i = 0; i < 120; ++i) text += "red ";
  EXPECT_EQ(m.tokenize(text).size(), tiny_config().max_text_len);
  EXPECT_EQ(m.tokenize(text, true).size(), tiny_config().long_text_len);
}

TEST(Model, ContextLengthIsEnforced) {
  Model<double> m(tiny_config(), 7);
  std::vector<TokenId> too_long(m.config().context_len() + 1, *m.vocab().find("red"));
  Tape<double> t(false);
  EXPECT_THROW(m.lm_forward(t, std::nullopt, too_long), ShapeError);
}

TEST(Model, H4StartsAsIdentity) {
  Model<double> m(tiny_config(), 8);
  Rng rng(9);
  const Image a = random_image(rng, 8), b = random_image(rng, 8);
  const std::vector<Region> rs = {{0, 0, 0.5, 0.5}, {0.25, 0.5, 1, 1}};
  Tape<double> t(false);
  auto v = m.encode_images(t, {&a, &b});
  EXPECT_EQ(m.embed_visual_fine(t, v, rs, true).value(), m.embed_visual_fine(t, v, rs, false).value());
}

TEST(Model, WholeRegionFineEmbeddingMatchesCoarse) {
  Model<double> m(tiny_config(), 10);
  Rng rng(11);
  const Image a = random_image(rng, 8);
  Tape<double> t(false);
  auto v = m.encode_images(t, {&a});
  const auto coarse = m.embed_visual(t, v).value();
  const auto fine = m.embed_visual_fine(t, v, {Region::whole()}, false).value();
  for (std::size_t i = 0; i < coarse.numel(); ++i) EXPECT_NEAR(coarse[i], fine[i], 1e-12);
}

TEST(Model, CaptionRowsScoreTextAndEos) {
  Model<double> m(tiny_config(), 12);
  Rng rng(13);
  const Image a = random_image(rng, 8), b = random_image(rng, 8);
  Tape<double> t(false);
  auto v = m.encode_images(t, {&a, &b});
  const std::vector<std::vector<TokenId>> caps = {words(m, "a red circle"), words(m, "a blue square and a red circle")};
  auto cl = m.caption_logits(t, m.visual_prefix(t, v, 1), PromptMode::cap_token, caps);
  // the second caption is truncated to max_text_len = 6 words
  EXPECT_EQ(cl.targets.size(), 4u + 7u);
  EXPECT_EQ(cl.logits.shape(), (Shape{11, m.vocab().size()}));
  EXPECT_EQ(cl.targets[3], Vocabulary::kEos);
  EXPECT_EQ(cl.targets.back(), Vocabulary::kEos);
  EXPECT_EQ(cl.sample_of[4], 1u);
  auto cl2 = m.caption_logits(t, m.visual_prefix(t, v, 2), PromptMode::soft_prompts, caps);
  EXPECT_EQ(cl2.targets, cl.targets);
}

TEST(Model, ParameterNamingAndGroups) {
  Model<double> m(tiny_config(), 14);
  std::set<std::string> modules;
  for (const auto& p : m.params().all()) {
    modules.insert(module_of(p.name));
    const bool projection = p.group == "projection";
    const auto mod = module_of(p.name);
    EXPECT_EQ(projection, mod == "h1" || mod == "h2" || mod == "h3" || mod == "h4" || mod == "tau" ||
                              mod == "soft_prompts")
        << p.name;
    const auto ends_with = [&](const std::string& suf) {
      return p.name.size() >= suf.size() && p.name.compare(p.name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".bias") || ends_with(".gain") || mod == "tau" || mod == "soft_prompts" ||
        p.name == "lm.tok" || p.name == "lm.pos" || p.name == "vision.pos") {
      EXPECT_FALSE(p.decay) << p.name;
    }
  }
  EXPECT_EQ(modules, (std::set<std::string>{"vision", "lm", "h1", "h2", "h3", "h4", "tau", "soft_prompts"}));
}

TEST(Model, ConfigJsonRoundTrip) {
  const auto c = tiny_config();
  EXPECT_EQ(ModelConfig::from_json(c.to_json()).to_json(), c.to_json());
  auto bad = c.to_json();
  bad["patch"] = 3;
  EXPECT_THROW(ModelConfig::from_json(bad), UsageError);
}

// Full objectives of every stage against central differences, all parameters.
TEST(ModelGradients, AllObjectivesMatchFiniteDifferences) {
  Model<double> m(tiny_config(), 21);
  m.set_all_trainable(true);
  Rng rng(22);
  const Image a = random_image(rng, 8), b = random_image(rng, 8);
  // move the soft prompts and h4 away from their special initial values
  for (auto& x : m.soft_prompts().value.storage()) x = 0.3 * rng.normal();
  const std::vector<std::vector<TokenId>> caps = {words(m, "a red circle"), words(m, "a blue square")};
  const std::vector<Region> rs = {{0, 0, 0.5, 0.75}, {0.25, 0.25, 1, 1}};
  std::vector<Parameter<double>*> all = m.params().pointers();

  auto stage1 = [&](Tape<double>& t) {
    auto v = m.encode_images(t, {&a, &b});
    auto nce = info_nce(m.embed_visual(t, v), m.encode_text(t, caps), t.param(m.tau()));
    auto cl = m.caption_logits(t, m.visual_prefix(t, v, 1), PromptMode::cap_token, caps);
    auto gen = caption_loss_rows(cl.logits, {cl.targets.begin(), cl.targets.end()}, cl.sample_of, cl.batch);
    return combined_loss(nce.total, gen);
  };
  auto stage2 = [&](Tape<double>& t) {
    auto v = m.encode_images(t, {&a, &b});
    auto cl = m.caption_logits(t, m.visual_prefix(t, v, 2, rs), PromptMode::soft_prompts, caps);
    auto gen = caption_loss_rows(cl.logits, {cl.targets.begin(), cl.targets.end()}, cl.sample_of, cl.batch);
    auto nce = info_nce(m.embed_visual_fine(t, v, rs, true), m.encode_text(t, caps), t.param(m.tau()));
    return add(gen, nce.total);
  };
  for (const auto& f : {std::function<Var<double>(Tape<double>&)>(stage1), std::function<Var<double>(Tape<double>&)>(stage2)}) {
    const auto report = finite_difference_check<double>(f, all, 1e-5, 1e-4, 1);
    for (const auto& p : report.params) EXPECT_LT(p.rel, 1e-4) << p.name;
    EXPECT_LT(report.max_rel, 1e-4);
  }
}
