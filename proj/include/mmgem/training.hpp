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
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgem/model.hpp"
#include "mmgem/objectives.hpp"
#include "mmgem/optim.hpp"

namespace mmgem {

enum class Stage { one, two_caption, two_retrieval };

inline Stage parse_stage(const std::string& s) {
  if (s == "one") return Stage::one;
  if (s == "two_caption") return Stage::two_caption;
  if (s == "two_retrieval") return Stage::two_retrieval;
  throw UsageError("unknown stage '" + s + "' (one|two_caption|two_retrieval)");
}

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::one: return "one";
    case Stage::two_caption: return "two_caption";
    case Stage::two_retrieval: return "two_retrieval";
  }
  return "?";
}

/// Which losses a stage-one run optimizes.
enum class Objective { mmgem, clip_only, cap_only };

inline Objective parse_objective(const std::string& s) {
  if (s == "mmgem") return Objective::mmgem;
  if (s == "clip_only") return Objective::clip_only;
  if (s == "cap_only") return Objective::cap_only;
  throw UsageError("unknown objective '" + s + "' (mmgem|clip_only|cap_only)");
}

inline std::string objective_name(Objective o) {
  switch (o) {
    case Objective::mmgem: return "mmgem";
    case Objective::clip_only: return "clip_only";
    case Objective::cap_only: return "cap_only";
  }
  return "?";
}

struct StageSpec {
  Stage stage = Stage::one;
  std::vector<std::string> modules;  // trainable owner modules (see module_of)
  std::string data_mode;

  static StageSpec of(Stage s) {
    switch (s) {
      case Stage::one: return {s, {"vision", "lm", "h1", "h2", "h3", "tau"}, "image-caption"};
      case Stage::two_caption: return {s, {"h3", "soft_prompts"}, "mixed region+caption"};
      case Stage::two_retrieval: return {s, {"h4"}, "regional pairs"};
    }
    throw UsageError("unknown stage");
  }

  bool trains(const std::string& param_name) const {
    return std::find(modules.begin(), modules.end(), module_of(param_name)) != modules.end();
  }

  /// Marks exactly the stage's parameters trainable.
  template <class T>
  void apply(Model<T>& model) const {
    for (auto& p : model.params().all()) p.trainable = trains(p.name);
  }
};

struct TrainConfig {
  std::size_t batch = 32;
  std::size_t steps = 1000;
  std::size_t warmup = 100;
  double lr_backbone = 5e-4;
  double lr_projection = 5e-3;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::size_t max_text_len = kDefaultMaxTextLen;
  Stage stage = Stage::one;
  Objective objective = Objective::mmgem;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double prompt_noise = 0.01;  // std of the noise added to replicated [CAP] prompts
  ModelConfig model;

  void validate() const {
    if (batch == 0) throw UsageError("train config: batch must be positive");
    if (steps == 0) throw UsageError("train config: steps must be positive");
    if (warmup > steps) throw UsageError("train config: warmup must not exceed steps");
    if (!(lr_backbone > 0) || !(lr_projection > 0)) throw UsageError("train config: learning rates must be > 0");
    if (!(weight_decay >= 0)) throw UsageError("train config: weight_decay must be >= 0");
    if (max_text_len == 0) throw UsageError("train config: max_text_len must be positive");
    model.validate();
  }

  nlohmann::json to_json() const {
    return {{"batch", batch},
            {"steps", steps},
            {"warmup", warmup},
            {"lr_backbone", lr_backbone},
            {"lr_projection", lr_projection},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"max_text_len", max_text_len},
            {"stage", stage_name(stage)},
            {"objective", objective_name(objective)},
            {"optimizer", optimizer == OptimizerKind::adamw ? "adamw" : "lamb"},
            {"prompt_noise", prompt_noise},
            {"model", model.to_json()}};
  }

  /// Fields absent from `j` keep their value in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig c) {
    try {
      auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
      };
      get("batch", c.batch);
      get("steps", c.steps);
      get("warmup", c.warmup);
      get("lr_backbone", c.lr_backbone);
      get("lr_projection", c.lr_projection);
      get("weight_decay", c.weight_decay);
      get("seed", c.seed);
      get("max_text_len", c.max_text_len);
      get("prompt_noise", c.prompt_noise);
      if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
      if (j.contains("objective")) c.objective = parse_objective(j.at("objective").get<std::string>());
      if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
      if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"), c.model);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("train config: ") + e.what());
    }
    c.model.max_text_len = c.max_text_len;
    c.validate();
    return c;
  }

  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }
};

/// One row of the training log. Losses a step does not compute are NaN.
struct StepReport {
  std::size_t step = 0;
  double lr = 0;
  double l_emb = std::numeric_limits<double>::quiet_NaN();
  double l_gen = std::numeric_limits<double>::quiet_NaN();
  double l_total = std::numeric_limits<double>::quiet_NaN();
  double tau = 0;
  std::size_t duplicate_images = 0;

  static std::string csv_header() { return "step,lr,L_Emb,L_Gen,L_MM-GEM,tau"; }

  std::string csv_row() const {
    std::ostringstream os;
    os << std::setprecision(9) << step << ',' << lr << ',' << l_emb << ',' << l_gen << ','
       << l_total << ',' << tau;
    return os.str();
  }
};

/// One training example: an image, the region it is described over, and the text.
struct Sample {
  const Image* image = nullptr;
  Region region = Region::whole();
  std::vector<TokenId> text;
};

/// Number of images in a batch that repeat an earlier image (pixel-identical).
inline std::size_t count_duplicate_images(const std::vector<Sample>& batch) {
  std::size_t dup = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (batch[j].image == batch[i].image || *batch[j].image == *batch[i].image) {
        ++dup;
        break;
      }
  return dup;
}

/// Replaces the soft prompts with the [CAP] embedding repeated plus N(0, noise^2).
template <class T>
void init_soft_prompts(Model<T>& model, double noise, Rng& rng) {
  const auto& tok = model.token_embedding().value;
  auto& sp = model.soft_prompts().value;
  const std::size_t m = tok.dim(1);
  for (std::size_t i = 0; i < sp.dim(0); ++i)
    for (std::size_t j = 0; j < m; ++j)
      sp[i * m + j] = tok[Vocabulary::kCap * m + j] + static_cast<T>(noise * rng.normal());
}

/// Stage-aware single-step trainer owning the optimizer state.
template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig cfg)
      : model_(model), cfg_(std::move(cfg)), spec_(StageSpec::of(cfg_.stage)), opt_(cfg_.optimizer) {
    cfg_.validate();
    spec_.apply(model_);
  }

  const TrainConfig& config() const { return cfg_; }
  const StageSpec& spec() const { return spec_; }
  Optimizer<T>& optimizer() { return opt_; }

  double lr_at(std::size_t t, const std::string& group) const {
    const double peak = group == "projection" ? cfg_.lr_projection : cfg_.lr_backbone;
    return lr_schedule(t, cfg_.warmup, cfg_.steps, peak);
  }

  /// Stage one: embeddings and L_Emb, then the captioning forward from the
  /// single-vector prefix and L_Gen; one backward on their sum.
  StepReport step_stage1(const std::vector<Sample>& batch, std::size_t t) {
    require_stage(Stage::one);
    StepReport rep = begin(batch, t);
    Tape<T> tape;
    auto v = model_.encode_images(tape, images_of(batch));
    const auto texts = texts_of(batch);
    std::optional<Var<T>> l_emb, l_gen;
    if (cfg_.objective != Objective::cap_only) {
      auto nce = info_nce(model_.embed_visual(tape, v), model_.encode_text(tape, texts),
                          tape.param(model_.tau()));
      l_emb = nce.total;
      rep.l_emb = l_emb->value()[0];
    }
    if (cfg_.objective != Objective::clip_only) {
      auto cl = model_.caption_logits(tape, model_.visual_prefix(tape, v, 1), PromptMode::cap_token, texts);
      l_gen = caption_loss_rows(cl.logits, to_rows(cl.targets), cl.sample_of, cl.batch);
      rep.l_gen = l_gen->value()[0];
    }
    auto total = (l_emb && l_gen) ? combined_loss(*l_emb, *l_gen) : (l_emb ? *l_emb : *l_gen);
    return finish(tape, total, rep, t);
  }

  /// Stage two, captioning: region-pooled prefix, soft prompts, L_Gen.
  StepReport step_stage2_caption(const std::vector<Sample>& batch, std::size_t t) {
    require_stage(Stage::two_caption);
    StepReport rep = begin(batch, t);
    Tape<T> tape;
    auto v = model_.encode_images(tape, images_of(batch));
    auto prefix = model_.visual_prefix(tape, v, 2, regions_of(batch));
    auto cl = model_.caption_logits(tape, prefix, PromptMode::soft_prompts, texts_of(batch));
    auto l_gen = caption_loss_rows(cl.logits, to_rows(cl.targets), cl.sample_of, cl.batch);
    rep.l_gen = l_gen.value()[0];
    return finish(tape, l_gen, rep, t);
  }

  /// Stage two, retrieval: info-NCE between h4 region embeddings and text embeddings.
  StepReport step_stage2_retrieval(const std::vector<Sample>& batch, std::size_t t) {
    require_stage(Stage::two_retrieval);
    StepReport rep = begin(batch, t);
    Tape<T> tape;
    auto v = model_.encode_images(tape, images_of(batch));
    auto nce = info_nce(model_.embed_visual_fine(tape, v, regions_of(batch), true),
                        model_.encode_text(tape, texts_of(batch)), tape.param(model_.tau()));
    rep.l_emb = nce.total.value()[0];
    return finish(tape, nce.total, rep, t);
  }

  StepReport step(const std::vector<Sample>& batch, std::size_t t) {
    switch (cfg_.stage) {
      case Stage::one: return step_stage1(batch, t);
      case Stage::two_caption: return step_stage2_caption(batch, t);
      case Stage::two_retrieval: return step_stage2_retrieval(batch, t);
    }
    throw UsageError("unknown stage");
  }

 private:
  void require_stage(Stage s) const {
    if (cfg_.stage != s)
      throw UsageError("trainer configured for stage " + stage_name(cfg_.stage) + ", not " + stage_name(s));
  }

  StepReport begin(const std::vector<Sample>& batch, std::size_t t) const {
    if (batch.empty()) throw UsageError("train step: empty batch");
    for (const auto& s : batch) s.region.validate();
    StepReport rep;
    rep.step = t;
    rep.lr = lr_at(t, "backbone");
    rep.duplicate_images = count_duplicate_images(batch);
    return rep;
  }

  StepReport finish(Tape<T>& tape, Var<T> loss, StepReport rep, std::size_t t) {
    if (!std::isfinite(loss.value()[0])) throw NumericError("train step: non-finite loss");
    rep.l_total = loss.value()[0];
    model_.params().zero_grad();
    tape.backward(loss);
    opt_.step(model_.params().all(), [&](const Parameter<T>& p) { return lr_at(t, p.group); },
              cfg_.weight_decay);
    clamp_temperature(model_.tau().value);
    rep.tau = model_.tau().value[0];
    return rep;
  }

  static std::vector<const Image*> images_of(const std::vector<Sample>& b) {
    std::vector<const Image*> out;
    for (const auto& s : b) out.push_back(s.image);
    return out;
  }
  static std::vector<Region> regions_of(const std::vector<Sample>& b) {
    std::vector<Region> out;
    for (const auto& s : b) out.push_back(s.region);
    return out;
  }
  static std::vector<std::vector<TokenId>> texts_of(const std::vector<Sample>& b) {
    std::vector<std::vector<TokenId>> out;
    for (const auto& s : b) out.push_back(s.text);
    return out;
  }
  static std::vector<std::size_t> to_rows(const std::vector<TokenId>& ids) {
    return std::vector<std::size_t>(ids.begin(), ids.end());
  }

  Model<T>& model_;
  TrainConfig cfg_;
  StageSpec spec_;
  Optimizer<T> opt_;
};

/// Seeded batch source over a corpus for one stage.
///
/// Stage one draws (image, caption) pairs. Stage two captioning alternates
/// region descriptions and whole-image captions 1:1 within every batch.
/// Stage two retrieval draws (image, region, description) triples. Each
/// stream is reshuffled at the start of every pass.
class BatchSampler {
 public:
  BatchSampler(const Corpus& corpus, const Vocabulary& vocab, Stage stage, std::size_t max_text_len,
               std::uint64_t seed)
      : corpus_(corpus), vocab_(vocab), stage_(stage), max_len_(max_text_len), rng_(seed) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      whole_.items.push_back({i, -1});
      for (std::size_t r = 0; r < corpus.record(i).regions.size(); ++r)
        region_.items.push_back({i, static_cast<int>(r)});
    }
    if (whole_.items.empty()) throw UsageError("batch sampler: empty corpus");
    if (stage != Stage::one && region_.items.empty())
      throw UsageError("batch sampler: stage " + stage_name(stage) + " needs region descriptions");
  }

  std::vector<Sample> next(std::size_t batch) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < batch; ++i) {
      Stream* s = &whole_;
      if (stage_ == Stage::two_retrieval || (stage_ == Stage::two_caption && i % 2 == 0)) s = &region_;
      out.push_back(make(draw(*s)));
    }
    return out;
  }

 private:
  struct Item {
    std::size_t record;
    int region;  // -1: whole image with its caption
  };
  struct Stream {
    std::vector<Item> items;
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };

  Item draw(Stream& s) {
    if (s.pos == s.order.size()) {
      s.order.resize(s.items.size());
      for (std::size_t i = 0; i < s.order.size(); ++i) s.order[i] = i;
      for (std::size_t i = s.order.size(); i > 1; --i) std::swap(s.order[i - 1], s.order[rng_.below(i)]);
      s.pos = 0;
    }
    return s.items[s.order[s.pos++]];
  }

  Sample make(const Item& it) const {
    const auto& rec = corpus_.record(it.record);
    Sample s;
    s.image = &corpus_.images[it.record];
    if (it.region < 0) {
      s.text = vocab_.tokenize(rec.caption, max_len_);
    } else {
      s.region = rec.regions[static_cast<std::size_t>(it.region)].box;
      s.text = vocab_.tokenize(rec.regions[static_cast<std::size_t>(it.region)].text, max_len_);
    }
    if (s.text.empty()) throw FormatError("record " + rec.image + ": text tokenizes to nothing");
    return s;
  }

  const Corpus& corpus_;
  const Vocabulary& vocab_;
  Stage stage_;
  std::size_t max_len_;
  Rng rng_;
  Stream whole_, region_;
};

/// Runs `cfg.steps` steps of `cfg.stage` on `corpus`. Soft prompts are
/// initialized from [CAP] when a captioning stage starts. Each report is passed
/// to `on_step` and, when `log_csv` is non-empty, appended to that CSV file.
template <class T>
std::vector<StepReport> train(Model<T>& model, const TrainConfig& cfg, const Corpus& corpus,
                              const std::string& log_csv = "",
                              const std::function<void(const StepReport&)>& on_step = {}) {
  Trainer<T> trainer(model, cfg);
  Rng rng(cfg.seed);
  if (cfg.stage == Stage::two_caption) init_soft_prompts(model, cfg.prompt_noise, rng);
  BatchSampler sampler(corpus, model.vocab(), cfg.stage, cfg.max_text_len, rng.next_u64());
  std::ofstream log;
  if (!log_csv.empty()) {
    log.open(log_csv);
    if (!log) throw FormatError("cannot write " + log_csv);
    log << StepReport::csv_header() << '\n';
  }
  std::vector<StepReport> reports;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    reports.push_back(trainer.step(sampler.next(cfg.batch), t));
    if (log) log << reports.back().csv_row() << '\n';
    if (on_step) on_step(reports.back());
  }
  return reports;
}

}  // namespace mmgem
