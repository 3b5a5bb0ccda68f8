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
#include <fstream>
#include <map>
#include <iomanip>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgem/generate.hpp"
#include "mmgem/metrics.hpp"
#include "mmgem/model.hpp"

namespace mmgem {

/// Extraction chunk size; results do not depend on it.
inline constexpr std::size_t kEvalChunk = 64;

using Embeddings = std::vector<std::vector<double>>;

/// Unit visual embeddings of images over regions (whole image when `regions`
/// is empty). `fine` selects the RoIAlign path, `use_h4` adds the h4 head.
template <class T>
Embeddings embed_images(const Model<T>& model, const std::vector<const Image*>& images,
                        const std::vector<Region>& regions = {}, bool fine = false, bool use_h4 = false) {
  if (!regions.empty() && regions.size() != images.size())
    throw UsageError("embed_images: one region per image expected");
  Embeddings out;
  for (std::size_t b = 0; b < images.size(); b += kEvalChunk) {
    const std::size_t e = std::min(images.size(), b + kEvalChunk);
    Tape<T> tape(false);
    auto v = model.encode_images(tape, {images.begin() + b, images.begin() + e});
    Var<T> emb;
    if (fine) {
      std::vector<Region> rs(regions.empty() ? std::vector<Region>(e - b, Region::whole())
                                             : std::vector<Region>(regions.begin() + b, regions.begin() + e));
      emb = model.embed_visual_fine(tape, v, rs, use_h4);
    } else {
      emb = model.embed_visual(tape, v);
    }
    for (auto& row : Model<T>::rows_of(emb.value())) out.emplace_back(row.begin(), row.end());
  }
  return out;
}

template <class T>
Embeddings embed_texts(const Model<T>& model, const std::vector<std::vector<TokenId>>& texts) {
  Embeddings out;
  for (std::size_t b = 0; b < texts.size(); b += kEvalChunk) {
    const std::size_t e = std::min(texts.size(), b + kEvalChunk);
    for (auto& row : model.text_embeddings({texts.begin() + b, texts.begin() + e}))
      out.emplace_back(row.begin(), row.end());
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// S[i][j] = queries[i] . candidates[j]
inline SimilarityMatrix similarity(const Embeddings& queries, const Embeddings& candidates) {
  SimilarityMatrix s(queries.size(), candidates.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (std::size_t j = 0; j < candidates.size(); ++j) s.at(i, j) = dot(queries[i], candidates[j]);
  s.check_cosine_range();
  return s;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

struct RetrievalResult {
  std::vector<std::size_t> ks;
  // identical caption strings count as the same match
  std::vector<double> i2t, t2i;
  // strict pairing: only record i matches record i
  std::vector<double> i2t_pairwise, t2i_pairwise;
  std::size_t duplicate_captions = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const std::string k = "R@" + std::to_string(ks[i]);
      j["i2t"][k] = i2t[i];
      j["t2i"][k] = t2i[i];
      j["i2t_pairwise"][k] = i2t_pairwise[i];
      j["t2i_pairwise"][k] = t2i_pairwise[i];
    }
    j["duplicate_captions"] = duplicate_captions;
    return j;
  }
};

/// Group id per record: the index of the first record with the same caption text.
inline std::vector<std::size_t> caption_groups(const Corpus& corpus) {
  std::vector<std::size_t> g(corpus.size());
  std::map<std::string, std::size_t> first;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    g[i] = first.emplace(Vocabulary::lowercase(corpus.record(i).caption), i).first->second;
  return g;
}

/// Image-to-text and text-to-image Recall@K over a corpus (pair i = record i).
/// Records with identical captions are interchangeable matches; the strict
/// pairwise figures are reported alongside. `long_text` raises caption
/// truncation from max_text_len to long_text_len.
template <class T>
RetrievalResult retrieval_eval(const Model<T>& model, const Corpus& corpus, bool long_text = false,
                               std::vector<std::size_t> ks = {1, 5, 10}) {
  if (corpus.images.size() != corpus.manifest.records.size())
    throw FormatError("retrieval_eval: manifest/image count mismatch");
  std::vector<const Image*> imgs;
  std::vector<std::vector<TokenId>> texts;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    imgs.push_back(&corpus.images[i]);
    texts.push_back(model.tokenize(corpus.record(i).caption, long_text));
  }
  const auto s = similarity(embed_images(model, imgs), embed_texts(model, texts));
  const auto st = s.transposed();
  std::vector<std::size_t> usable;
  for (auto k : ks) usable.push_back(std::min(k, s.cols));
  const auto groups = caption_groups(corpus);
  RetrievalResult r;
  r.ks = ks;
  r.i2t = recall_at_k(s, usable, groups, groups);
  r.t2i = recall_at_k(st, usable, groups, groups);
  r.i2t_pairwise = recall_at_k(s, usable);
  r.t2i_pairwise = recall_at_k(st, usable);
  for (std::size_t i = 0; i < groups.size(); ++i) r.duplicate_captions += groups[i] != i;
  return r;
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

inline std::string fill_template(const std::string& tmpl, const std::string& name) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) throw UsageError("template '" + tmpl + "' has no {} placeholder");
  return tmpl.substr(0, pos) + name + tmpl.substr(pos + 2);
}

/// Unit class embeddings: normalized mean of template text embeddings.
template <class T>
Embeddings class_embeddings(const Model<T>& model, const std::vector<std::string>& classes,
                            const std::vector<std::string>& templates) {
  if (classes.empty()) throw UsageError("zero-shot: empty class list");
  if (templates.empty()) throw UsageError("zero-shot: empty template list");
  Embeddings out;
  for (const auto& c : classes) {
    std::vector<std::vector<TokenId>> texts;
    for (const auto& t : templates) texts.push_back(model.tokenize(fill_template(t, c)));
    const auto e = embed_texts(model, texts);
    std::vector<double> mean(e.front().size(), 0.0);
    for (const auto& row : e)
      for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j];
    double nrm = 0;
    for (double& x : mean) {
      x /= static_cast<double>(e.size());
      nrm += x * x;
    }
    nrm = std::sqrt(nrm);
    if (!(nrm > 0)) throw NumericError("zero-shot: class '" + c + "' has a zero mean embedding");
    for (double& x : mean) x /= nrm;
    out.push_back(std::move(mean));
  }
  return out;
}

/// Arg-max cosine class; the lowest index wins ties.
inline std::size_t argmax_class(const std::vector<double>& image, const Embeddings& classes) {
  std::size_t best = 0;
  double best_s = dot(image, classes[0]);
  for (std::size_t c = 1; c < classes.size(); ++c) {
    const double s = dot(image, classes[c]);
    if (s > best_s) {
      best = c;
      best_s = s;
    }
  }
  return best;
}

template <class T>
std::size_t zero_shot_classify(const Model<T>& model, const Image& image, const std::vector<std::string>& classes,
                               const std::vector<std::string>& templates) {
  const auto cls = class_embeddings(model, classes, templates);
  return argmax_class(embed_images(model, {&image}).front(), cls);
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

struct HeatMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

  /// Cell with the largest value (first in row-major order on ties).
  std::pair<std::size_t, std::size_t> argmax() const {
    const auto it = std::max_element(values.begin(), values.end());
    const auto i = static_cast<std::size_t>(it - values.begin());
    return {i / width, i % width};
  }

  /// Quadrant (0 TL, 1 TR, 2 BL, 3 BR) of the arg-max cell.
  int argmax_quadrant() const {
    const auto [y, x] = argmax();
    return (2 * y >= height ? 2 : 0) + (2 * x >= width ? 1 : 0);
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path);
    os << std::setprecision(9);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) os << (x ? "," : "") << at(y, x);
      os << '\n';
    }
  }

  /// 8-bit PGM with [-1, 1] mapped affinely to [0, 255].
  void write_pgm(const std::string& path) const {
    std::vector<float> px;
    for (double v : values) px.push_back(static_cast<float>((std::clamp(v, -1.0, 1.0) + 1.0) / 2.0));
    mmgem::write_pgm(path, height, width, px);
  }
};

/// Per-cell cosine between normalize(h1(V[y,x])) (stage 1) or
/// normalize(h4(h1(V[y,x]))) (stage 2) and the text embedding.
template <class T>
HeatMap similarity_heatmap(const Model<T>& model, const Image& image, const std::vector<TokenId>& text, int stage) {
  if (stage != 1 && stage != 2) throw UsageError("heatmap: stage must be 1 or 2");
  Tape<T> tape(false);
  auto v = model.encode_images(tape, {&image});
  auto cells = model.h1()(tape, v);
  if (stage == 2) cells = model.h4()(tape, cells);
  const auto unit = Model<T>::rows_of(l2_normalize(cells).value());
  const auto t = embed_texts(model, {text}).front();
  HeatMap h;
  h.height = h.width = model.config().grid();
  for (const auto& row : unit) h.values.push_back(dot(std::vector<double>(row.begin(), row.end()), t));
  return h;
}

// ---------------------------------------------------------------------------
// Captioning
// ---------------------------------------------------------------------------

/// Decoder prefix for one image: stage 1 uses the pooled vector and [CAP];
/// stage 2 the RoI-pooled grid and the soft prompts.
template <class T>
std::pair<Tensor<T>, PromptMode> caption_prefix(const Model<T>& model, const Image& image, int stage,
                                                const Region& region = Region::whole()) {
  Tape<T> tape(false);
  auto v = model.encode_images(tape, {&image});
  auto p = model.visual_prefix(tape, v, stage, {region});
  const std::size_t m = model.config().lm_dim;
  return {p.value().reshaped({p.numel() / m, m}),
          stage == 1 ? PromptMode::cap_token : PromptMode::soft_prompts};
}

template <class T>
std::string caption_image(const Model<T>& model, const Image& image, int stage, const Region& region,
                          const DecodeOptions& opt) {
  region.validate();
  const auto [prefix, mode] = caption_prefix(model, image, stage, region);
  return model.vocab().detokenize(generate(model, prefix, mode, opt));
}

/// Teacher-forced next-token accuracy over scored caption positions (EOS included).
template <class T>
double caption_token_accuracy(const Model<T>& model, const std::vector<const Image*>& images,
                              const std::vector<std::vector<TokenId>>& texts, int stage,
                              const std::vector<Region>& regions = {}) {
  if (images.size() != texts.size()) throw UsageError("caption accuracy: images/texts mismatch");
  std::size_t correct = 0, total = 0;
  for (std::size_t b = 0; b < images.size(); b += kEvalChunk) {
    const std::size_t e = std::min(images.size(), b + kEvalChunk);
    Tape<T> tape(false);
    auto v = model.encode_images(tape, {images.begin() + b, images.begin() + e});
    std::vector<Region> rs = regions.empty() ? std::vector<Region>(e - b, Region::whole())
                                             : std::vector<Region>(regions.begin() + b, regions.begin() + e);
    auto prefix = model.visual_prefix(tape, v, stage, rs);
    auto cl = model.caption_logits(tape, prefix, stage == 1 ? PromptMode::cap_token : PromptMode::soft_prompts,
                                   {texts.begin() + b, texts.begin() + e});
    const auto& lg = cl.logits.value();
    const std::size_t vsz = lg.dim(1);
    for (std::size_t r = 0; r < cl.targets.size(); ++r) {
      const T* row = lg.data().data() + r * vsz;
      const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + vsz) - row);
      correct += arg == cl.targets[r];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

struct CaptionEval {
  double bleu4 = 0;
  double cider_d = 0;
  double token_accuracy = 0;
  std::size_t grammatical = 0;
  std::vector<std::string> captions;

  nlohmann::json to_json() const {
    return {{"BLEU@4", bleu4},
            {"CIDEr-D", cider_d},
            {"METEOR", "unsupported"},
            {"ROUGE-L", "unsupported"},
            {"token_accuracy", token_accuracy},
            {"grammatical", grammatical},
            {"count", captions.size()},
            {"captions", captions}};
  }
};

/// Whole-image captioning over a corpus with each record's caption as reference.
template <class T>
CaptionEval caption_eval(const Model<T>& model, const Corpus& corpus, int stage, const DecodeOptions& opt) {
  std::vector<std::vector<Words>> refs;
  std::vector<const Image*> imgs;
  std::vector<std::vector<TokenId>> texts;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    refs.push_back({split_words(Vocabulary::lowercase(corpus.record(i).caption))});
    imgs.push_back(&corpus.images[i]);
    texts.push_back(model.tokenize(corpus.record(i).caption));
  }
  const auto stats = CorpusStats::build(refs);
  CaptionEval ev;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto cap = caption_image(model, corpus.images[i], stage, Region::whole(), opt);
    ev.captions.push_back(cap);
    ev.grammatical += parse_scene_caption(cap).has_value();
    const auto w = split_words(cap);
    if (!w.empty()) {
      ev.bleu4 += bleu4(w, refs[i]);
      ev.cider_d += cider_d(w, refs[i], stats);
    }
  }
  ev.bleu4 /= static_cast<double>(corpus.size());
  ev.cider_d /= static_cast<double>(corpus.size());
  ev.token_accuracy = caption_token_accuracy(model, imgs, texts, stage);
  return ev;
}

}  // namespace mmgem
