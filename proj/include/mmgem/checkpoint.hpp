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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgem/model.hpp"

// Binary layout (all integers little-endian):
//   "MMGEM1\0\0" | u32 version | u32 tensor count
//   per tensor:  u32 name length | name bytes | u32 rank | u64 dims[rank] | f32 payload
//   u64 FNV-1a of every preceding byte
// A JSON sidecar "<path>.json" carries stage, seed, config hash and model config,
// and names the vocabulary file written next to the checkpoint.

namespace mmgem {

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'G', 'E', 'M', '1', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

/// A checkpoint as named f32 tensors, in file order.
struct TensorFile {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (n > b_.size() - pos_)
      throw FormatError(path_ + ": truncated at offset " + std::to_string(pos_) + " while reading " + what +
                        " (" + std::to_string(n) + " bytes needed, " + std::to_string(b_.size() - pos_) +
                        " available)");
  }

 private:
  const std::string& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const TensorFile& f) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.tensors.size()));
  for (const auto& [name, t] : f.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    for (float v : t.data()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_le<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

inline TensorFile decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::Reader r(bytes, path);
  if (r.bytes(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw FormatError(path + ": bad magic (not an mmgem checkpoint)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  const auto count = r.get<std::uint32_t>("tensor count");
  TensorFile f;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(len, "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>("dimension"));
    const std::size_t n = numel_of(shape);
    r.need(n * 4, "tensor payload");
    Tensor<float> t(shape);
    for (std::size_t k = 0; k < n; ++k) t[k] = std::bit_cast<float>(r.get<std::uint32_t>("tensor payload"));
    f.tensors.emplace_back(std::move(name), std::move(t));
  }
  const std::size_t body = r.pos();
  const auto stored = r.get<std::uint64_t>("checksum");
  if (stored != fnv1a(bytes.data(), body)) throw FormatError(path + ": checksum mismatch");
  if (r.remaining() != 0) throw FormatError(path + ": trailing bytes after checksum");
  return f;
}

/// Parameters of a model as an f32 tensor file, in registration order.
template <class T>
TensorFile tensors_of(const Model<T>& model) {
  TensorFile f;
  for (const auto& p : model.params().all()) f.tensors.emplace_back(p.name, p.value.template cast<float>());
  return f;
}

/// Human-readable differences between two tensor files: missing/extra names,
/// shape mismatches, and (when `values` is set) tensors whose contents differ.
inline std::vector<std::string> diff_tensors(const TensorFile& expected, const TensorFile& actual,
                                             bool values = false) {
  std::vector<std::string> out;
  for (const auto& [name, t] : expected.tensors) {
    const auto* o = actual.find(name);
    if (!o)
      out.push_back("missing " + name);
    else if (o->shape() != t.shape())
      out.push_back("shape " + name + ": " + shape_str(t.shape()) + " vs " + shape_str(o->shape()));
    else if (values && std::memcmp(o->data().data(), t.data().data(), t.numel() * sizeof(float)) != 0)
      out.push_back("values " + name);
  }
  for (const auto& [name, t] : actual.tensors)
    if (!expected.find(name)) out.push_back("extra " + name);
  return out;
}

/// Names of the tensors whose bytes differ between two same-architecture files.
inline std::vector<std::string> changed_tensors(const TensorFile& a, const TensorFile& b) {
  std::vector<std::string> out;
  for (const auto& d : diff_tensors(a, b, true)) {
    if (d.rfind("values ", 0) != 0) throw FormatError("checkpoints differ in architecture: " + d);
    out.push_back(d.substr(7));
  }
  return out;
}

template <class T>
void load_tensors(Model<T>& model, const TensorFile& f, const std::string& path = "<memory>") {
  const auto diff = diff_tensors(tensors_of(model), f);
  if (!diff.empty()) {
    std::string msg = path + ": architecture mismatch:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw FormatError(msg);
  }
  for (auto& p : model.params().all()) p.value = f.find(p.name)->template cast<T>();
}

struct CheckpointMeta {
  std::string stage = "one";
  std::uint64_t seed = 0;
  nlohmann::json train_config = nlohmann::json::object();
};

inline std::string vocab_path_for(const std::string& ckpt) { return ckpt + ".vocab.json"; }
inline std::string sidecar_path_for(const std::string& ckpt) { return ckpt + ".json"; }

/// Writes the binary checkpoint, its JSON sidecar and the vocabulary file.
template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path, const CheckpointMeta& meta) {
  const std::string bin = encode_checkpoint(tensors_of(model));
  detail::write_all(path, bin);
  const auto cfg = model.config().to_json();
  const std::string cfg_dump = cfg.dump() + meta.train_config.dump();
  nlohmann::json side = {{"format", "MMGEM1"},
                         {"version", kCheckpointVersion},
                         {"stage", meta.stage},
                         {"seed", meta.seed},
                         {"config_hash", hex64(fnv1a(cfg_dump.data(), cfg_dump.size()))},
                         {"model_config", cfg},
                         {"train_config", meta.train_config},
                         {"vocabulary", std::filesystem::path(vocab_path_for(path)).filename().string()},
                         {"tensors", tensors_of(model).tensors.size()}};
  detail::write_all(sidecar_path_for(path), side.dump(2) + "\n");
  model.vocab().save(vocab_path_for(path));
}

inline nlohmann::json read_sidecar(const std::string& path) {
  const std::string side = sidecar_path_for(path);
  try {
    return nlohmann::json::parse(detail::read_all(side));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side + ": " + e.what());
  }
}

inline TensorFile read_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_all(path), path);
}

/// Rebuilds a model from a checkpoint and its sidecar.
template <class T = float>
Model<T> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  const auto side = read_sidecar(path);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(side.at("model_config"));
    if (meta) {
      meta->stage = side.at("stage").get<std::string>();
      meta->seed = side.at("seed").get<std::uint64_t>();
      meta->train_config = side.value("train_config", nlohmann::json::object());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path_for(path) + ": " + e.what());
  }
  const std::filesystem::path vocab_file =
      std::filesystem::path(path).parent_path() / side.value("vocabulary", std::string());
  if (std::filesystem::exists(vocab_file) && !(Vocabulary::load(vocab_file.string()) == Vocabulary::standard()))
    throw FormatError(vocab_file.string() + ": vocabulary differs from the built-in vocabulary");
  Model<T> model(cfg, 0);
  load_tensors(model, read_checkpoint(path), path);
  return model;
}

}  // namespace mmgem
