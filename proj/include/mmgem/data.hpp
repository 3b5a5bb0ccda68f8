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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgem/region.hpp"
#include "mmgem/rng.hpp"
#include "mmgem/tensor.hpp"
#include "mmgem/vocab.hpp"

namespace mmgem {

namespace fs = std::filesystem;

/// RGB image as [3, height, width] with values in [0, 1].
using Image = Tensor<float>;

// ---------------------------------------------------------------------------
// PPM / PGM
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_all(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for " + path);
}

// Next whitespace-delimited header field, skipping '#' comments.
inline std::string header_field(const std::string& bytes, std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw FormatError(path + ": truncated header");
  return bytes.substr(start, pos - start);
}

inline std::uint8_t quantize(float v) {
  const double q = std::floor(static_cast<double>(v) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

}  // namespace detail

/// Binary P6 with maxval 255.
inline Image decode_ppm(const std::string& bytes, const std::string& path = "<memory>") {
  if (bytes.size() < 2 || bytes.compare(0, 2, "P6") != 0)
    throw FormatError(path + ": not a binary PPM (P6)");
  std::size_t pos = 2;
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::header_field(bytes, pos, path));
    h = std::stoi(detail::header_field(bytes, pos, path));
    maxval = std::stoi(detail::header_field(bytes, pos, path));
  } catch (const std::logic_error&) {
    throw FormatError(path + ": malformed header");
  }
  if (w <= 0 || h <= 0) throw FormatError(path + ": bad dimensions");
  if (maxval != 255) throw FormatError(path + ": only 8-bit (maxval 255) PPM supported");
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < pos + 3 * n)
    throw FormatError(path + ": pixel data truncated at byte " + std::to_string(bytes.size()));
  Image img({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img[c * n + i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + 3 * i + c])) / 255.0f;
  return img;
}

inline std::string encode_ppm(const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("encode_ppm: expects [3, H, W]");
  const std::size_t h = img.dim(1), w = img.dim(2), n = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(detail::quantize(img[c * n + i])));
  return out;
}

inline Image read_image(const std::string& path, std::size_t expected_size = 0) {
  Image img = decode_ppm(detail::read_all(path), path);
  if (expected_size != 0 && (img.dim(1) != expected_size || img.dim(2) != expected_size))
    throw FormatError(path + ": expected " + std::to_string(expected_size) + "x" +
                      std::to_string(expected_size) + " image");
  return img;
}

inline void write_image(const std::string& path, const Image& img) {
  detail::write_all(path, encode_ppm(img));
}

/// 8-bit P5 grayscale; `values` is row-major [h, w] in [0, 1].
inline void write_pgm(const std::string& path, std::size_t h, std::size_t w,
                      const std::vector<float>& values) {
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (float v : values) out.push_back(static_cast<char>(detail::quantize(v)));
  detail::write_all(path, out);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct RegionText {
  Region box;
  std::string text;
  friend bool operator==(const RegionText&, const RegionText&) = default;
};

struct SampleRecord {
  std::string image;  // relative to the manifest directory
  std::string caption;
  std::vector<RegionText> regions;
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;

  nlohmann::json to_json() const {
    nlohmann::json regs = nlohmann::json::array();
    for (const auto& r : regions)
      regs.push_back({{"box", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}}, {"text", r.text}});
    nlohmann::json j;
    j["image"] = image;
    j["caption"] = caption;
    j["regions"] = regs;
    return j;
  }

  static SampleRecord from_json(const nlohmann::json& j) {
    SampleRecord s;
    try {
      s.image = j.at("image").get<std::string>();
      s.caption = j.at("caption").get<std::string>();
      for (const auto& r : j.at("regions")) {
        const auto& b = r.at("box");
        if (!b.is_array() || b.size() != 4) throw FormatError("region box needs 4 numbers");
        RegionText rt{{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                      r.at("text").get<std::string>()};
        if (!rt.box.valid()) throw FormatError("invalid region box " + rt.box.str());
        s.regions.push_back(std::move(rt));
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest record: ") + e.what());
    }
    if (s.caption.empty()) throw FormatError("manifest record with empty caption");
    return s;
  }
};

struct Manifest {
  fs::path root;  // directory holding manifest.jsonl
  std::vector<SampleRecord> records;

  std::string image_path(std::size_t i) const { return (root / records.at(i).image).string(); }
};

inline std::string serialize_manifest(const std::vector<SampleRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  return out;
}

inline std::vector<SampleRecord> parse_manifest(const std::string& text) {
  std::vector<SampleRecord> out;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(SampleRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Accepts either a corpus directory or a path to its manifest.jsonl.
inline Manifest load_manifest(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "manifest.jsonl";
  Manifest m;
  m.root = p.parent_path();
  m.records = parse_manifest(detail::read_all(p.string()));
  if (m.records.empty()) throw FormatError(p.string() + ": empty manifest");
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSceneSize = 32;

inline const std::array<std::array<float, 3>, 4> kColorRgb = {{
    {0.90f, 0.10f, 0.10f},  // red
    {0.10f, 0.80f, 0.15f},  // green
    {0.15f, 0.25f, 0.95f},  // blue
    {0.95f, 0.90f, 0.10f},  // yellow
}};

inline const std::array<std::array<float, 3>, 5> kBackgroundRgb = {{
    {0.05f, 0.05f, 0.05f},  // black
    {0.45f, 0.45f, 0.45f},  // gray
    {0.40f, 0.26f, 0.13f},  // brown
    {0.35f, 0.15f, 0.40f},  // purple
    {0.92f, 0.92f, 0.95f},  // white
}};

struct SceneShape {
  int quadrant = 0;  // 0 TL, 1 TR, 2 BL, 3 BR
  int color = 0;
  int shape = 0;     // 0 circle, 1 square, 2 triangle
  int x = 0, y = 0;  // top-left pixel of the bounding box
  int size = 0;

  Region box() const {
    const double s = kSceneSize;
    return {x / s, y / s, (x + size) / s, (y + size) / s};
  }
  std::string phrase() const { return "a " + kColors[color] + " " + kShapes[shape]; }
};

struct Scene {
  int background = 0;
  std::vector<SceneShape> shapes;  // ascending quadrant order

  std::string caption() const {
    std::string c;
    for (const auto& s : shapes) c += (c.empty() ? "" : " and ") + s.phrase();
    return c;
  }

  /// Verbose description used for the long-text retrieval mode.
  std::string long_caption() const {
    static const std::array<std::string, 4> counts = {"one", "two", "three", "four"};
    std::string c = "this image shows " + counts[shapes.size() - 1] + " " +
                    (shapes.size() == 1 ? "shape" : "shapes") + " on a " +
                    kBackgrounds[background] + " background .";
    for (const auto& s : shapes) {
      const std::string sz = s.size >= 11 ? "large" : "small";
      c += " there is a " + sz + " " + kColors[s.color] + " " + kShapes[s.shape] + " in the " +
           kQuadrantNames[s.quadrant] + " corner of the image . the " + kShapes[s.shape] +
           " is " + kColors[s.color] + " .";
    }
    return c;
  }
};

inline Scene sample_scene(Rng& rng) {
  Scene scene;
  scene.background = static_cast<int>(rng.below(kBackgroundRgb.size()));
  const int count = rng.range(1, 4);
  std::array<int, 4> quads = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(quads[i], quads[rng.below(static_cast<std::uint64_t>(i + 1))]);
  std::sort(quads.begin(), quads.begin() + count);
  for (int i = 0; i < count; ++i) {
    SceneShape s;
    s.quadrant = quads[i];
    s.color = static_cast<int>(rng.below(kColors.size()));
    s.shape = static_cast<int>(rng.below(kShapes.size()));
    s.size = rng.range(8, 14);
    const int half = static_cast<int>(kSceneSize / 2);
    const int qx = (s.quadrant % 2) * half, qy = (s.quadrant / 2) * half;
    s.x = qx + rng.range(1, half - 1 - s.size);
    s.y = qy + rng.range(1, half - 1 - s.size);
    scene.shapes.push_back(s);
  }
  return scene;
}

inline bool shape_covers(const SceneShape& s, int px, int py) {
  if (px < s.x || py < s.y || px >= s.x + s.size || py >= s.y + s.size) return false;
  const double fx = px + 0.5 - s.x, fy = py + 0.5 - s.y, n = s.size;
  switch (s.shape) {
    case 0: {
      const double r = n / 2.0, dx = fx - r, dy = fy - r;
      return dx * dx + dy * dy <= r * r;
    }
    case 1:
      return true;
    default: {
      const double half_width = 0.5 * n * (fy / n);
      return std::abs(fx - n / 2.0) <= half_width;
    }
  }
}

inline Image render_scene(const Scene& scene, Rng& rng) {
  const std::size_t s = kSceneSize, n = s * s;
  Image img({3, s, s});
  const auto& bg = kBackgroundRgb[scene.background];
  for (std::size_t p = 0; p < n; ++p) {
    const int px = static_cast<int>(p % s), py = static_cast<int>(p / s);
    std::array<float, 3> rgb = bg;
    for (const auto& sh : scene.shapes)
      if (shape_covers(sh, px, py)) rgb = kColorRgb[sh.color];
    for (std::size_t c = 0; c < 3; ++c) {
      const float noise = static_cast<float>(rng.uniform(-0.03, 0.03));
      img[c * n + p] = std::clamp(rgb[c] + noise, 0.0f, 1.0f);
    }
  }
  return img;
}

struct CorpusOptions {
  std::size_t n = 64;
  std::uint64_t seed = 0;
  bool long_captions = false;
};

/// Writes images/NNNNNN.ppm plus manifest.jsonl under out_dir; fully seed-determined.
inline Manifest gen_synthetic_corpus(const CorpusOptions& opt, const std::string& out_dir) {
  if (opt.n < 1) throw UsageError("gen_synthetic_corpus: n must be >= 1");
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw FormatError("cannot create " + (root / "images").string() + ": " + ec.message());
  Rng rng(opt.seed);
  Manifest m;
  m.root = root;
  for (std::size_t i = 0; i < opt.n; ++i) {
    const Scene scene = sample_scene(rng);
    const Image img = render_scene(scene, rng);
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".ppm";
    write_image((root / name.str()).string(), img);
    SampleRecord rec;
    rec.image = name.str();
    rec.caption = opt.long_captions ? scene.long_caption() : scene.caption();
    for (const auto& s : scene.shapes) rec.regions.push_back({s.box(), s.phrase()});
    m.records.push_back(std::move(rec));
  }
  detail::write_all((root / "manifest.jsonl").string(), serialize_manifest(m.records));
  return m;
}

/// A manifest together with its decoded images, in manifest order.
struct Corpus {
  Manifest manifest;
  std::vector<Image> images;

  std::size_t size() const { return images.size(); }
  const SampleRecord& record(std::size_t i) const { return manifest.records.at(i); }
};

inline Corpus load_corpus(const std::string& path, std::size_t image_size = kSceneSize) {
  Corpus c;
  c.manifest = load_manifest(path);
  c.images.reserve(c.manifest.records.size());
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i)
    c.images.push_back(read_image(c.manifest.image_path(i), image_size));
  return c;
}

}  // namespace mmgem
