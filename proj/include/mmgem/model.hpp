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
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgem/data.hpp"
#include "mmgem/nn.hpp"
#include "mmgem/pooling.hpp"
#include "mmgem/vocab.hpp"

namespace mmgem {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch = 4;
  std::size_t vision_dim = 64;
  std::size_t vision_depth = 2;
  std::size_t vision_heads = 4;
  std::size_t lm_dim = 64;
  std::size_t lm_depth = 4;
  std::size_t lm_heads = 4;
  std::size_t embed_dim = 64;
  std::size_t num_prompts = kNumSoftPrompts;
  std::size_t max_text_len = kDefaultMaxTextLen;
  std::size_t long_text_len = kLongTextLen;
  double init_std = 0.02;
  double temperature_init = 0.07;

  std::size_t grid() const { return image_size / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch * patch; }
  /// Longest sequence the decoder must position-encode: a stage-two caption
  /// prompt (H*W prefix + soft prompts + BOS + long text + EOS slot).
  std::size_t context_len() const { return num_patches() + num_prompts + long_text_len + 2; }

  void validate() const {
    if (patch == 0 || image_size % patch != 0)
      throw UsageError("model config: image_size must be divisible by patch");
    if (vision_dim % vision_heads != 0 || lm_dim % lm_heads != 0)
      throw UsageError("model config: width must be divisible by heads");
    if (embed_dim == 0 || vision_depth == 0 || lm_depth == 0)
      throw UsageError("model config: zero-sized component");
    if (num_prompts != kNumSoftPrompts)
      throw UsageError("model config: the vocabulary reserves exactly 64 soft-prompt slots");
  }

  nlohmann::json to_json() const {
    return {{"image_size", image_size},     {"patch", patch},
            {"vision_dim", vision_dim},     {"vision_depth", vision_depth},
            {"vision_heads", vision_heads}, {"lm_dim", lm_dim},
            {"lm_depth", lm_depth},         {"lm_heads", lm_heads},
            {"embed_dim", embed_dim},       {"num_prompts", num_prompts},
            {"max_text_len", max_text_len}, {"long_text_len", long_text_len},
            {"init_std", init_std},         {"temperature_init", temperature_init}};
  }

  static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig()); }

  static ModelConfig from_json(const nlohmann::json& j, ModelConfig c) {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("image_size", c.image_size);
    get("patch", c.patch);
    get("vision_dim", c.vision_dim);
    get("vision_depth", c.vision_depth);
    get("vision_heads", c.vision_heads);
    get("lm_dim", c.lm_dim);
    get("lm_depth", c.lm_depth);
    get("lm_heads", c.lm_heads);
    get("embed_dim", c.embed_dim);
    get("num_prompts", c.num_prompts);
    get("max_text_len", c.max_text_len);
    get("long_text_len", c.long_text_len);
    get("init_std", c.init_std);
    get("temperature_init", c.temperature_init);
    c.validate();
    return c;
  }
};

/// Patch vectors of a [3, S, S] image: (S/P)^2 rows of length 3P^2, patches in
/// row-major grid order, each vector laid out [channel][dy][dx].
template <class T>
Tensor<T> patchify(const Image& img, std::size_t patch) {
  if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != img.dim(2))
    throw ShapeError("patchify: expects a square [3, S, S] image");
  const std::size_t s = img.dim(1);
  if (patch == 0 || s % patch != 0)
    throw ShapeError("patchify: image size " + std::to_string(s) + " not divisible by patch " +
                     std::to_string(patch));
  const std::size_t g = s / patch, len = 3 * patch * patch;
  Tensor<T> out({g * g, len});
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px) {
      T* dst = out.data().data() + (py * g + px) * len;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx)
            *dst++ = static_cast<T>(img[(c * s + py * patch + dy) * s + px * patch + dx]);
    }
  return out;
}

enum class PromptMode { cap_token, soft_prompts };

/// Logits of the scored caption positions plus their bookkeeping.
template <class T>
struct CaptionLogits {
  Var<T> logits;                       // [rows, vocab]
  std::vector<TokenId> targets;        // per row
  std::vector<std::size_t> sample_of;  // batch index per row
  std::size_t batch = 0;
};

template <class T>
struct LmOutput {
  Var<T> hidden;  // [L, M]
  Var<T> logits;  // [L, vocab]
};

/// Owner module of a parameter name: "vision", "lm", "h1".."h4", "tau", "soft_prompts".
inline std::string module_of(const std::string& name) {
  return name.substr(0, name.find('.'));
}

/// Vision encoder, decoder language model, projection heads and temperature.
template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), vocab_(Vocabulary::standard()) {
    cfg_.validate();
    Rng rng(seed);
    const double sd = cfg_.init_std;
    const std::size_t c = cfg_.vision_dim, m = cfg_.lm_dim, e = cfg_.embed_dim;

    patch_embed_ = Linear<T>(store_, "vision.patch", cfg_.patch_dim(), c, sd, rng, "backbone");
    vision_pos_ = store_.add("vision.pos", truncated_normal<T>({cfg_.num_patches(), c}, sd, rng),
                             false, "backbone");
    for (std::size_t i = 0; i < cfg_.vision_depth; ++i)
      vision_blocks_.emplace_back(store_, "vision.block" + std::to_string(i), c, cfg_.vision_heads,
                                  false, sd, rng, "backbone");
    vision_norm_ = LayerNorm<T>(store_, "vision.norm", c, "backbone");

    tok_embed_ = store_.add("lm.tok", truncated_normal<T>({vocab_.size(), m}, sd, rng), false,
                            "backbone");
    lm_pos_ = store_.add("lm.pos", truncated_normal<T>({cfg_.context_len(), m}, sd, rng), false,
                         "backbone");
    for (std::size_t i = 0; i < cfg_.lm_depth; ++i)
      lm_blocks_.emplace_back(store_, "lm.block" + std::to_string(i), m, cfg_.lm_heads, true, sd,
                              rng, "backbone");
    lm_norm_ = LayerNorm<T>(store_, "lm.norm", m, "backbone");
    lm_head_ = store_.add("lm.head", truncated_normal<T>({m, vocab_.size()}, sd, rng), true,
                          "backbone");

    h1_ = Linear<T>(store_, "h1", c, e, sd, rng, "projection");
    h2_ = Linear<T>(store_, "h2", m, e, sd, rng, "projection");
    h3_ = Linear<T>(store_, "h3", e, m, sd, rng, "projection");
    h4_ = Linear<T>::identity(store_, "h4", e, "projection");
    tau_ = store_.add("tau", Tensor<T>::scalar(static_cast<T>(cfg_.temperature_init)), false,
                      "projection");
    soft_prompts_ = store_.add("soft_prompts", truncated_normal<T>({cfg_.num_prompts, m}, sd, rng),
                               false, "projection");
  }

  Model(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  Parameter<T>& tau() { return *tau_; }
  Parameter<T>& soft_prompts() { return *soft_prompts_; }
  Parameter<T>& token_embedding() { return *tok_embed_; }
  const Linear<T>& h1() const { return h1_; }
  const Linear<T>& h2() const { return h2_; }
  const Linear<T>& h3() const { return h3_; }
  const Linear<T>& h4() const { return h4_; }

  void set_all_trainable(bool on) {
    for (auto& p : store_.all()) p.trainable = on;
  }

  // -------------------------------------------------------------------------
  // Vision
  // -------------------------------------------------------------------------

  /// Feature maps of a batch, cell-major: [B, H*W, C].
  Var<T> encode_images(Tape<T>& tape, const std::vector<const Image*>& images) const {
    if (images.empty()) throw UsageError("encode_images: empty batch");
    const std::size_t n = cfg_.num_patches(), d = cfg_.patch_dim();
    Tensor<T> patches({images.size(), n, d});
    for (std::size_t b = 0; b < images.size(); ++b) {
      if (images[b]->rank() != 3 || images[b]->dim(1) != cfg_.image_size)
        throw ShapeError("encode_images: image is not " + std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size));
      const auto p = patchify<T>(*images[b], cfg_.patch);
      std::copy(p.data().begin(), p.data().end(), patches.data().begin() + b * n * d);
    }
    auto x = patch_embed_(tape, tape.constant(std::move(patches)));
    x = add_broadcast(x, tape.param(*vision_pos_));
    for (const auto& blk : vision_blocks_) x = blk(tape, x);
    return vision_norm_(tape, x);
  }

  FeatureMap<T> feature_map(const Image& img) const {
    Tape<T> tape(false);
    auto v = encode_images(tape, {&img});
    return FeatureMap<T>::from_cells(v.value().data().data(), cfg_.vision_dim, cfg_.grid(),
                                     cfg_.grid());
  }

  /// RoI-pooled cells on the encoder grid: [B, H*W, C].
  Var<T> region_cells(Var<T> v, const std::vector<Region>& regions) const {
    const std::size_t g = cfg_.grid();
    return roi_align(v, g, g, regions, g, g);
  }

  /// Coarse embedding: normalize(h1(MeanPool(V))). [B, E]
  Var<T> embed_visual(Tape<T>& tape, Var<T> v) const {
    return l2_normalize(h1_(tape, mean_axis(v, 1)));
  }

  /// Fine embedding: normalize(h4(mean of h1 over RoIAlign(V, R) cells)). With
  /// `use_h4` false the h4 head is skipped (the stage-one regional embedding).
  Var<T> embed_visual_fine(Tape<T>& tape, Var<T> v, const std::vector<Region>& regions,
                           bool use_h4 = true) const {
    auto pooled = mean_axis(h1_(tape, region_cells(v, regions)), 1);
    return l2_normalize(use_h4 ? h4_(tape, pooled) : pooled);
  }

  /// Visual prefix in the decoder input space: [B, 1, M] for stage one, [B, H*W, M] for stage two.
  Var<T> visual_prefix(Tape<T>& tape, Var<T> v, int stage,
                       const std::vector<Region>& regions = {}) const {
    const std::size_t b = v.dim(0);
    if (stage == 1) return reshape(h3_(tape, h1_(tape, mean_axis(v, 1))), {b, 1, cfg_.lm_dim});
    if (stage != 2) throw UsageError("visual_prefix: stage must be 1 or 2");
    const auto rs = regions.empty() ? std::vector<Region>(b, Region::whole()) : regions;
    return h3_(tape, h1_(tape, region_cells(v, rs)));
  }

  // -------------------------------------------------------------------------
  // Language model
  // -------------------------------------------------------------------------

  /// Causal decoder over input vectors [B, L, M]; returns final hidden states [B, L, M].
  Var<T> lm_hidden(Tape<T>& tape, Var<T> inputs) const {
    const std::size_t len = inputs.dim(1);
    if (len > cfg_.context_len())
      throw ShapeError("sequence of " + std::to_string(len) + " exceeds context length " +
                       std::to_string(cfg_.context_len()));
    auto x = add_broadcast(inputs, slice(tape.param(*lm_pos_), 0, 0, len));
    for (const auto& blk : lm_blocks_) x = blk(tape, x);
    return lm_norm_(tape, x);
  }

  /// Token embeddings of a padded id matrix: [B, L, M].
  Var<T> embed_tokens(Tape<T>& tape, const std::vector<TokenId>& flat, std::size_t batch) const {
    const std::size_t len = flat.size() / batch;
    return reshape(gather_rows(tape.param(*tok_embed_), flat), {batch, len, cfg_.lm_dim});
  }

  /// Next-token logits for rows of a hidden-state matrix.
  Var<T> logits_for_rows(Tape<T>& tape, Var<T> hidden, const std::vector<std::size_t>& rows) const {
    auto flat = reshape(hidden, {hidden.numel() / cfg_.lm_dim, cfg_.lm_dim});
    return matmul(gather_rows(flat, rows), tape.param(*lm_head_));
  }

  /// Decoder over [prefix ; tokens] for one sequence. `prefix` may be empty ([0, M] is not
  /// representable, so pass nullopt). Hidden states and logits for every position.
  LmOutput<T> lm_forward(Tape<T>& tape, std::optional<Var<T>> prefix,
                         const std::vector<TokenId>& tokens) const {
    if (tokens.empty()) throw UsageError("lm_forward: no tokens");
    auto toks = embed_tokens(tape, tokens, 1);
    auto inputs = prefix ? concat<T>({reshape(*prefix, {1, prefix->numel() / cfg_.lm_dim, cfg_.lm_dim}), toks}, 1)
                         : toks;
    auto hidden = lm_hidden(tape, inputs);
    const std::size_t len = inputs.dim(1);
    std::vector<std::size_t> rows(len);
    for (std::size_t i = 0; i < len; ++i) rows[i] = i;
    return {reshape(hidden, {len, cfg_.lm_dim}), logits_for_rows(tape, hidden, rows)};
  }

  /// Text embeddings: normalize(h2(hidden at [EMB])) for [BOS, text..., EMB]. [B, E]
  ///
  /// The sequence builder owns [EMB] placement: reserved ids inside the text
  /// (an [EMB] in particular) are rejected.
  Var<T> encode_text(Tape<T>& tape, const std::vector<std::vector<TokenId>>& texts) const {
    if (texts.empty()) throw UsageError("encode_text: empty batch");
    std::size_t longest = 0;
    for (const auto& t : texts) {
      if (t.empty()) throw UsageError("encode_text: empty text after tokenization");
      for (TokenId id : t)
        if (Vocabulary::is_reserved(id) || id >= vocab_.size())
          throw UsageError("encode_text: reserved or unknown id " + std::to_string(id) +
                           " inside text; [EMB] is appended by the sequence builder");
      longest = std::max(longest, t.size());
    }
    const std::size_t len = longest + 2, batch = texts.size();
    std::vector<TokenId> flat(batch * len, Vocabulary::kPad);
    std::vector<std::size_t> emb_rows;
    for (std::size_t b = 0; b < batch; ++b) {
      flat[b * len] = Vocabulary::kBos;
      std::copy(texts[b].begin(), texts[b].end(), flat.begin() + b * len + 1);
      flat[b * len + texts[b].size() + 1] = Vocabulary::kEmb;
      emb_rows.push_back(b * len + texts[b].size() + 1);
    }
    auto hidden = lm_hidden(tape, embed_tokens(tape, flat, batch));
    auto at_emb = gather_rows(reshape(hidden, {batch * len, cfg_.lm_dim}), emb_rows);
    return l2_normalize(h2_(tape, at_emb));
  }

  /// [CAP] embedding or the soft prompts, tiled over the batch: [B, 1 or N, M].
  Var<T> prompt_vectors(Tape<T>& tape, PromptMode mode, std::size_t batch) const {
    if (mode == PromptMode::cap_token)
      return reshape(gather_rows(tape.param(*tok_embed_), std::vector<std::size_t>(batch, Vocabulary::kCap)),
                     {batch, 1, cfg_.lm_dim});
    std::vector<std::size_t> ids;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < cfg_.num_prompts; ++i) ids.push_back(i);
    return reshape(gather_rows(tape.param(*soft_prompts_), ids), {batch, cfg_.num_prompts, cfg_.lm_dim});
  }

  /// Teacher-forced caption logits over [prefix ; prompt ; BOS x1..xL].
  /// Scored targets are x1..xL followed by EOS; prefix, prompt and padding are never scored.
  CaptionLogits<T> caption_logits(Tape<T>& tape, Var<T> prefix, PromptMode mode,
                                  const std::vector<std::vector<TokenId>>& captions) const {
    const std::size_t batch = prefix.dim(0);
    if (captions.size() != batch) throw ShapeError("caption_logits: one caption per prefix");
    std::size_t longest = 0;
    for (const auto& c : captions) longest = std::max(longest, c.size());
    const std::size_t tlen = longest + 1;
    std::vector<TokenId> flat(batch * tlen, Vocabulary::kPad);
    for (std::size_t b = 0; b < batch; ++b) {
      flat[b * tlen] = Vocabulary::kBos;
      std::copy(captions[b].begin(), captions[b].end(), flat.begin() + b * tlen + 1);
    }
    auto prompt = prompt_vectors(tape, mode, batch);
    auto inputs = concat<T>({prefix, prompt, embed_tokens(tape, flat, batch)}, 1);
    auto hidden = lm_hidden(tape, inputs);
    const std::size_t total = inputs.dim(1), start = prefix.dim(1) + prompt.dim(1);
    CaptionLogits<T> out;
    out.batch = batch;
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i <= captions[b].size(); ++i) {
        rows.push_back(b * total + start + i);
        out.targets.push_back(i < captions[b].size() ? captions[b][i] : Vocabulary::kEos);
        out.sample_of.push_back(b);
      }
    out.logits = logits_for_rows(tape, hidden, rows);
    return out;
  }

  // -------------------------------------------------------------------------
  // Inference helpers (no gradients recorded)
  // -------------------------------------------------------------------------

  std::vector<TokenId> tokenize(const std::string& text, bool long_text = false) const {
    return vocab_.tokenize(text, long_text ? cfg_.long_text_len : cfg_.max_text_len);
  }

  std::vector<std::vector<T>> text_embeddings(const std::vector<std::vector<TokenId>>& texts) const {
    Tape<T> tape(false);
    return rows_of(encode_text(tape, texts).value());
  }

  static std::vector<std::vector<T>> rows_of(const Tensor<T>& m) {
    const std::size_t w = m.shape().back(), n = m.numel() / w;
    std::vector<std::vector<T>> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i].assign(m.data().begin() + i * w, m.data().begin() + (i + 1) * w);
    return out;
  }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamStore<T> store_;

  Linear<T> patch_embed_;
  Parameter<T>* vision_pos_ = nullptr;
  std::vector<TransformerBlock<T>> vision_blocks_;
  LayerNorm<T> vision_norm_;

  Parameter<T>* tok_embed_ = nullptr;
  Parameter<T>* lm_pos_ = nullptr;
  std::vector<TransformerBlock<T>> lm_blocks_;
  LayerNorm<T> lm_norm_;
  Parameter<T>* lm_head_ = nullptr;

  Linear<T> h1_, h2_, h3_, h4_;
  Parameter<T>* tau_ = nullptr;
  Parameter<T>* soft_prompts_ = nullptr;
};

}  // namespace mmgem
