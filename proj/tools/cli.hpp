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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmgem/checkpoint.hpp"
#include "mmgem/evaluation.hpp"
#include "mmgem/gradcheck.hpp"
#include "mmgem/training.hpp"

namespace mmgem::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Raw flag values; `std::nullopt` means "not given on the command line".
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string ckpt, ckpt_out, data, out, image, text;
  std::optional<std::string> stage;
  std::string k = "1,5,10";
  std::string region;
  bool long_text = false;
  std::string mode = "greedy";
  std::size_t beam_k = 3;
  std::size_t max_new = 20;
  std::size_t n = 64;
  bool long_captions = false;
  std::optional<std::size_t> steps;
  std::optional<std::string> objective;
  double eps = 1e-5;
  std::string classes = "circle,square,triangle";
  std::vector<std::string> templates;
  std::string log;
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  for (const auto& item : split_list(s)) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw UsageError("--k: '" + item + "' is not a positive integer");
    ks.push_back(v);
  }
  if (ks.empty()) throw UsageError("--k: empty list");
  return ks;
}

inline DecodeOptions decode_options(const Flags& f) {
  DecodeOptions o;
  if (f.mode == "greedy")
    o.mode = DecodeMode::greedy;
  else if (f.mode == "beam")
    o.mode = DecodeMode::beam;
  else
    throw UsageError("--mode must be greedy or beam");
  if (f.beam_k == 0) throw UsageError("--beam-k must be positive");
  if (f.max_new == 0) throw UsageError("--max-new must be positive");
  o.beam_k = f.beam_k;
  o.max_new = f.max_new;
  return o;
}

/// Stage one uses the coarse head and [CAP]; either stage-two mode selects the
/// stage-two path (RoI prefix and soft prompts, or h4).
inline int eval_stage(const Flags& f) {
  return (!f.stage || parse_stage(*f.stage) == Stage::one) ? 1 : 2;
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << j.dump(2) << '\n';
}

/// Built-in defaults, then the JSON file, then explicit flags.
inline TrainConfig resolve_train_config(const Flags& f) {
  TrainConfig c;
  if (!f.config.empty()) c = TrainConfig::from_json(read_json_file(f.config), c);
  if (f.seed) c.seed = *f.seed;
  if (f.stage) c.stage = parse_stage(*f.stage);
  if (f.steps) c.steps = *f.steps;
  if (f.objective) c.objective = parse_objective(*f.objective);
  if (c.warmup > c.steps) c.warmup = c.steps;
  c.validate();
  return c;
}

inline Model<float> load_model(const Flags& f) {
  require(f.ckpt, "--ckpt");
  return load_checkpoint<float>(f.ckpt);
}

inline nlohmann::json provenance(const std::string& command, const Flags& f) {
  nlohmann::json j = {{"command", command}, {"seed", f.seed ? *f.seed : 0}};
  if (!f.ckpt.empty()) {
    j["checkpoint"] = f.ckpt;
    j["checkpoint_meta"] = read_sidecar(f.ckpt);
  }
  if (!f.data.empty()) j["data"] = f.data;
  return j;
}

inline int cmd_gen_data(const Flags& f) {
  require(f.out, "--out");
  if (f.n == 0) throw UsageError("--n must be positive");
  const std::uint64_t seed = f.seed.value_or(0);
  const auto m = gen_synthetic_corpus({f.n, seed, f.long_captions}, f.out);
  write_json((std::filesystem::path(f.out) / "generation.json").string(),
             {{"command", "gen-data"}, {"n", f.n}, {"seed", seed}, {"long_captions", f.long_captions}});
  std::cerr << "wrote " << m.records.size() << " records to " << f.out << '\n';
  return kOk;
}

inline int cmd_train(const Flags& f) {
  require(f.data, "--data");
  require(f.ckpt_out, "--ckpt-out");
  TrainConfig cfg = resolve_train_config(f);
  if (cfg.stage != Stage::one && f.ckpt.empty())
    throw UsageError("stage " + stage_name(cfg.stage) + " needs a stage-one checkpoint (--ckpt)");
  std::optional<Model<float>> model;
  if (!f.ckpt.empty()) {
    model.emplace(load_checkpoint<float>(f.ckpt));
    cfg.model = model->config();
    cfg.max_text_len = cfg.model.max_text_len;
  } else {
    model.emplace(cfg.model, cfg.seed);
  }
  const Corpus corpus = load_corpus(f.data, cfg.model.image_size);
  const std::string log = f.log.empty() ? f.ckpt_out + ".log.csv" : f.log;
  const auto reports = train(*model, cfg, corpus, log);
  save_checkpoint(*model, f.ckpt_out, {stage_name(cfg.stage), cfg.seed, cfg.to_json()});
  std::size_t dups = 0;
  for (const auto& r : reports) dups += r.duplicate_images;
  const auto& last = reports.back();
  nlohmann::json rep = {{"command", "train"},
                        {"seed", cfg.seed},
                        {"config", cfg.to_json()},
                        {"data", f.data},
                        {"init_checkpoint", f.ckpt},
                        {"checkpoint", f.ckpt_out},
                        {"log", log},
                        {"final", {{"L_Emb", last.l_emb}, {"L_Gen", last.l_gen}, {"L_MM-GEM", last.l_total}, {"tau", last.tau}}},
                        {"duplicate_images", dups}};
  write_json(f.out.empty() ? f.ckpt_out + ".report.json" : f.out, rep);
  std::cerr << "trained " << cfg.steps << " steps of stage " << stage_name(cfg.stage) << "; final loss "
            << last.l_total << '\n';
  return kOk;
}

inline int cmd_eval_retrieval(const Flags& f) {
  const auto ks = parse_ks(f.k);
  require(f.data, "--data");
  require(f.out, "--out");
  const auto model = load_model(f);
  const auto corpus = load_corpus(f.data, model.config().image_size);
  const auto r = retrieval_eval(model, corpus, f.long_text, ks);
  auto rep = provenance("eval-retrieval", f);
  rep["long_text"] = f.long_text;
  rep["pairs"] = corpus.size();
  rep["recall"] = r.to_json();
  write_json(f.out, rep);
  return kOk;
}

inline int cmd_eval_zeroshot(const Flags& f) {
  require(f.data, "--data");
  require(f.out, "--out");
  const auto classes = split_list(f.classes);
  if (classes.empty()) throw UsageError("--classes: empty list");
  const auto templates = f.templates.empty() ? std::vector<std::string>{"a {}", "a photo of a {}", "an image of a {}"}
                                             : f.templates;
  for (const auto& t : templates) fill_template(t, "x");
  const auto model = load_model(f);
  const auto corpus = load_corpus(f.data, model.config().image_size);
  const auto cls = class_embeddings(model, classes, templates);
  std::vector<const Image*> imgs;
  for (const auto& im : corpus.images) imgs.push_back(&im);
  const auto emb = embed_images(model, imgs);
  // An image is labelled when exactly one class name occurs in its caption.
  std::size_t labelled = 0, correct = 0;
  nlohmann::json preds = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto pred = argmax_class(emb[i], cls);
    const auto words = split_words(Vocabulary::lowercase(corpus.record(i).caption));
    std::optional<std::size_t> label;
    std::size_t hits = 0;
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (std::find(words.begin(), words.end(), classes[c]) != words.end()) ++hits, label = c;
    nlohmann::json p = {{"image", corpus.record(i).image}, {"prediction", classes[pred]}};
    if (hits == 1) {
      ++labelled;
      correct += pred == *label;
      p["label"] = classes[*label];
    }
    preds.push_back(p);
  }
  auto rep = provenance("eval-zeroshot", f);
  rep["classes"] = classes;
  rep["templates"] = templates;
  rep["labelled"] = labelled;
  rep["accuracy"] = labelled ? static_cast<double>(correct) / static_cast<double>(labelled) : 0.0;
  rep["predictions"] = preds;
  write_json(f.out, rep);
  return kOk;
}

inline int cmd_eval_caption(const Flags& f) {
  const auto opt = decode_options(f);
  const int stage = eval_stage(f);
  require(f.data, "--data");
  require(f.out, "--out");
  const auto model = load_model(f);
  const auto corpus = load_corpus(f.data, model.config().image_size);
  auto rep = provenance("eval-caption", f);
  rep["stage"] = stage;
  rep["decode"] = {{"mode", f.mode}, {"beam_k", opt.beam_k}, {"max_new", opt.max_new}};
  rep["metrics"] = caption_eval(model, corpus, stage, opt).to_json();
  write_json(f.out, rep);
  return kOk;
}

inline int cmd_caption(const Flags& f) {
  const auto opt = decode_options(f);
  const Region region = f.region.empty() ? Region::whole() : Region::parse(f.region);
  int stage = eval_stage(f);
  if (!f.region.empty() && !f.stage) stage = 2;
  require(f.image, "--image");
  const auto model = load_model(f);
  const Image img = read_image(f.image, model.config().image_size);
  const std::string cap = caption_image(model, img, stage, region, opt);
  std::cout << cap << '\n';
  if (!f.out.empty()) {
    auto rep = provenance("caption", f);
    rep["image"] = f.image;
    rep["region"] = {region.x0, region.y0, region.x1, region.y1};
    rep["stage"] = stage;
    rep["caption"] = cap;
    write_json(f.out, rep);
  }
  return kOk;
}

inline int cmd_embed(const Flags& f) {
  require(f.out, "--out");
  if (f.image.empty() == f.text.empty()) throw UsageError("embed needs exactly one of --image or --text");
  const std::optional<Region> region = f.region.empty() ? std::nullopt : std::optional(Region::parse(f.region));
  const auto model = load_model(f);
  auto rep = provenance("embed", f);
  std::vector<double> e;
  if (!f.image.empty()) {
    const Image img = read_image(f.image, model.config().image_size);
    const bool h4 = eval_stage(f) == 2;
    e = embed_images(model, {&img}, {region.value_or(Region::whole())}, region.has_value() || h4, h4).front();
    rep["image"] = f.image;
    if (region) rep["region"] = {region->x0, region->y0, region->x1, region->y1};
  } else {
    e = embed_texts(model, {model.tokenize(f.text, f.long_text)}).front();
    rep["text"] = f.text;
  }
  rep["embedding"] = e;
  write_json(f.out, rep);
  return kOk;
}

inline int cmd_heatmap(const Flags& f) {
  require(f.image, "--image");
  require(f.text, "--text");
  require(f.out, "--out");
  const int stage = eval_stage(f);
  const auto model = load_model(f);
  const Image img = read_image(f.image, model.config().image_size);
  const auto h = similarity_heatmap(model, img, model.tokenize(f.text), stage);
  const std::filesystem::path out(f.out);
  if (out.extension() == ".pgm")
    h.write_pgm(f.out);
  else
    h.write_csv(f.out);
  auto rep = provenance("heatmap", f);
  rep["stage"] = stage;
  rep["text"] = f.text;
  rep["argmax_quadrant"] = h.argmax_quadrant();
  write_json(f.out + ".json", rep);
  return kOk;
}

/// Small configuration used when gradcheck is run without --config.
inline ModelConfig gradcheck_config() {
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

inline constexpr double kGradcheckTolerance = 1e-4;

inline int cmd_gradcheck(const Flags& f) {
  if (!(f.eps > 0)) throw UsageError("--eps must be positive");
  ModelConfig mc = gradcheck_config();
  if (!f.config.empty()) mc = ModelConfig::from_json(read_json_file(f.config), mc);
  const std::uint64_t seed = f.seed.value_or(0);
  Model<double> m(mc, seed);
  m.set_all_trainable(true);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<Image> imgs;
  for (int i = 0; i < 2; ++i) {
    Image img({3, mc.image_size, mc.image_size});
    for (auto& x : img.storage()) x = static_cast<float>(rng.uniform());
    imgs.push_back(std::move(img));
  }
  for (auto& x : m.soft_prompts().value.storage()) x = mc.init_std * rng.normal();
  for (auto& x : m.h4().weight->value.storage()) x += 0.1 * rng.normal();
  const std::vector<std::vector<TokenId>> caps = {m.tokenize("a red circle"), m.tokenize("a blue square")};
  const std::vector<Region> rs = {{0, 0, 0.5, 0.75}, {0.25, 0.25, 1, 1}};
  const std::vector<const Image*> ptrs = {&imgs[0], &imgs[1]};

  const std::function<Var<double>(Tape<double>&)> stage1 = [&](Tape<double>& t) {
    auto v = m.encode_images(t, ptrs);
    auto nce = info_nce(m.embed_visual(t, v), m.encode_text(t, caps), t.param(m.tau()));
    auto cl = m.caption_logits(t, m.visual_prefix(t, v, 1), PromptMode::cap_token, caps);
    auto gen = caption_loss_rows(cl.logits, {cl.targets.begin(), cl.targets.end()}, cl.sample_of, cl.batch);
    return combined_loss(nce.total, gen);
  };
  const std::function<Var<double>(Tape<double>&)> stage2 = [&](Tape<double>& t) {
    auto v = m.encode_images(t, ptrs);
    auto cl = m.caption_logits(t, m.visual_prefix(t, v, 2, rs), PromptMode::soft_prompts, caps);
    auto gen = caption_loss_rows(cl.logits, {cl.targets.begin(), cl.targets.end()}, cl.sample_of, cl.batch);
    auto nce = info_nce(m.embed_visual_fine(t, v, rs, true), m.encode_text(t, caps), t.param(m.tau()));
    return add(gen, nce.total);
  };

  nlohmann::json rep = {{"command", "gradcheck"}, {"seed", seed}, {"eps", f.eps}, {"model_config", mc.to_json()},
                        {"tolerance", kGradcheckTolerance}};
  double worst = 0;
  for (const auto& [name, fn] : {std::pair{"stage_one", stage1}, std::pair{"stage_two", stage2}}) {
    const auto r = finite_difference_check<double>(fn, m.params().pointers(), f.eps, kGradcheckTolerance);
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : r.params) {
      params.push_back({{"name", p.name}, {"checked", p.checked}, {"rel", p.rel}, {"max_entry_rel", p.max_entry_rel}});
      std::cout << name << ' ' << p.name << " rel=" << p.rel << '\n';
    }
    rep[name] = {{"max_rel", r.max_rel}, {"params", params}};
    worst = std::max(worst, r.max_rel);
  }
  rep["max_rel"] = worst;
  rep["passed"] = worst < kGradcheckTolerance;
  if (!f.out.empty()) write_json(f.out, rep);
  std::cout << "max_rel=" << worst << (worst < kGradcheckTolerance ? " PASS" : " FAIL") << '\n';
  return worst < kGradcheckTolerance ? kOk : kNumeric;
}

/// Parses argv and runs one command. Errors go to `err`; the return value is the exit code.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"mmgem: joint contrastive embedding and captioning with one language model"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON configuration file");
    sub->add_option("--seed", f.seed, "random seed");
  };
  auto with_model = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--ckpt", f.ckpt, "checkpoint to load");
    sub->add_option("--stage", f.stage, "one | two_caption | two_retrieval");
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus");
  common(gen);
  gen->add_option("--out", f.out, "output directory");
  gen->add_option("--n", f.n, "number of images");
  gen->add_flag("--long-captions", f.long_captions, "verbose captions for long-text retrieval");

  auto* tr = app.add_subcommand("train", "train one stage");
  with_model(tr);
  tr->add_option("--data", f.data, "corpus directory");
  tr->add_option("--ckpt-out", f.ckpt_out, "checkpoint to write");
  tr->add_option("--steps", f.steps, "number of steps");
  tr->add_option("--objective", f.objective, "mmgem | clip_only | cap_only");
  tr->add_option("--log", f.log, "CSV training log");
  tr->add_option("--out", f.out, "report JSON");

  auto* er = app.add_subcommand("eval-retrieval", "image-text Recall@K");
  with_model(er);
  er->add_option("--data", f.data, "corpus directory");
  er->add_option("--k", f.k, "comma-separated K values");
  er->add_flag("--long-text", f.long_text, "long-text truncation");
  er->add_option("--out", f.out, "report JSON");

  auto* ez = app.add_subcommand("eval-zeroshot", "zero-shot classification");
  with_model(ez);
  ez->add_option("--data", f.data, "corpus directory");
  ez->add_option("--classes", f.classes, "comma-separated class names");
  ez->add_option("--template", f.templates, "prompt template containing {} (repeatable)");
  ez->add_option("--out", f.out, "report JSON");

  auto* ec = app.add_subcommand("eval-caption", "captioning metrics");
  with_model(ec);
  ec->add_option("--data", f.data, "corpus directory");
  ec->add_option("--mode", f.mode, "greedy | beam");
  ec->add_option("--beam-k", f.beam_k, "beam width");
  ec->add_option("--max-new", f.max_new, "maximum generated tokens");
  ec->add_option("--out", f.out, "report JSON");

  auto* cap = app.add_subcommand("caption", "caption an image or a region");
  with_model(cap);
  cap->add_option("--image", f.image, "PPM image");
  cap->add_option("--region", f.region, "x0,y0,x1,y1 in [0,1]");
  cap->add_option("--mode", f.mode, "greedy | beam");
  cap->add_option("--beam-k", f.beam_k, "beam width");
  cap->add_option("--max-new", f.max_new, "maximum generated tokens");
  cap->add_option("--out", f.out, "report JSON");

  auto* emb = app.add_subcommand("embed", "embed an image, a region or a text");
  with_model(emb);
  emb->add_option("--image", f.image, "PPM image");
  emb->add_option("--text", f.text, "text");
  emb->add_option("--region", f.region, "x0,y0,x1,y1 in [0,1]");
  emb->add_flag("--long-text", f.long_text, "long-text truncation");
  emb->add_option("--out", f.out, "output JSON");

  auto* hm = app.add_subcommand("heatmap", "per-cell image-text similarity");
  with_model(hm);
  hm->add_option("--image", f.image, "PPM image");
  hm->add_option("--text", f.text, "query text");
  hm->add_option("--out", f.out, "CSV, or PGM when the name ends in .pgm");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full objectives");
  common(gc);
  gc->add_option("--eps", f.eps, "central-difference step");
  gc->add_option("--out", f.out, "report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f);
    if (tr->parsed()) return cmd_train(f);
    if (er->parsed()) return cmd_eval_retrieval(f);
    if (ez->parsed()) return cmd_eval_zeroshot(f);
    if (ec->parsed()) return cmd_eval_caption(f);
    if (cap->parsed()) return cmd_caption(f);
    if (emb->parsed()) return cmd_embed(f);
    if (hm->parsed()) return cmd_heatmap(f);
    if (gc->parsed()) return cmd_gradcheck(f);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace mmgem::cli
