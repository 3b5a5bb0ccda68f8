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

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "mmgem/ops.hpp"
#include "mmgem/rng.hpp"

namespace mmgem {

/// Owns every parameter of a model in registration order. Addresses are stable.
template <class T>
class ParamStore {
 public:
  Parameter<T>* add(const std::string& name, Tensor<T> value, bool decay,
                    const std::string& lr_group) {
    if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
    params_.emplace_back(name, std::move(value), decay, lr_group);
    index_.emplace(name, &params_.back());
    return &params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  std::vector<Parameter<T>*> pointers() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, Parameter<T>*> index_;
};

template <class T>
Tensor<T> truncated_normal(const Shape& shape, double std, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(rng.truncated_normal(std));
  return t;
}

/// y = x W + b with W stored [in, out].
template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         double init_std, Rng& rng, const std::string& lr_group) {
    weight = store.add(name + ".weight", truncated_normal<T>({in, out}, init_std, rng), true, lr_group);
    bias = store.add(name + ".bias", Tensor<T>({out}), false, lr_group);
  }

  /// Exact identity map with zero bias.
  static Linear identity(ParamStore<T>& store, const std::string& name, std::size_t dim,
                         const std::string& lr_group) {
    Linear l;
    Tensor<T> w({dim, dim});
    for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = T(1);
    l.weight = store.add(name + ".weight", std::move(w), true, lr_group);
    l.bias = store.add(name + ".bias", Tensor<T>({dim}), false, lr_group);
    return l;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return add_broadcast(matmul(x, tape.param(*weight)), tape.param(*bias));
  }
};

template <class T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim,
            const std::string& lr_group) {
    gain = store.add(name + ".gain", Tensor<T>({dim}, T(1)), false, lr_group);
    bias = store.add(name + ".bias", Tensor<T>({dim}), false, lr_group);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return layer_norm(x, tape.param(*gain), tape.param(*bias));
  }
};

/// Multi-head self-attention over x[B, L, D].
template <class T>
Var<T> self_attention(Tape<T>& tape, const Linear<T>& qkv, const Linear<T>& out, Var<T> x,
                      std::size_t heads, bool causal) {
  const std::size_t batch = x.dim(0), len = x.dim(1), width = x.dim(2);
  const std::size_t hd = width / heads;
  auto packed = reshape(qkv(tape, x), {batch, len, 3, heads, hd});
  auto split = permute(packed, {2, 0, 3, 1, 4});  // [3, B, h, L, hd]
  auto q = reshape(slice(split, 0, 0, 1), {batch * heads, len, hd});
  auto k = reshape(slice(split, 0, 1, 2), {batch * heads, len, hd});
  auto v = reshape(slice(split, 0, 2, 3), {batch * heads, len, hd});
  q = scale(q, T(1) / std::sqrt(static_cast<T>(hd)));
  auto scores = bmm(q, permute(k, {0, 2, 1}));
  auto attn = softmax(scores, causal);
  auto ctx = reshape(bmm(attn, v), {batch, heads, len, hd});
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {batch, len, width});
  return out(tape, ctx);
}

/// Pre-norm transformer block: x + attn(ln(x)), then + mlp(ln(.)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> qkv, proj, fc1, fc2;
  std::size_t heads = 1;
  bool causal = false;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& store, const std::string& name, std::size_t width,
                   std::size_t n_heads, bool is_causal, double init_std, Rng& rng,
                   const std::string& lr_group)
      : ln1(store, name + ".ln1", width, lr_group),
        ln2(store, name + ".ln2", width, lr_group),
        qkv(store, name + ".attn.qkv", width, 3 * width, init_std, rng, lr_group),
        proj(store, name + ".attn.out", width, width, init_std, rng, lr_group),
        fc1(store, name + ".mlp.fc1", width, 4 * width, init_std, rng, lr_group),
        fc2(store, name + ".mlp.fc2", 4 * width, width, init_std, rng, lr_group),
        heads(n_heads),
        causal(is_causal) {
    if (width % n_heads != 0) throw UsageError(name + ": width not divisible by heads");
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    auto h = add(x, self_attention(tape, qkv, proj, ln1(tape, x), heads, causal));
    return add(h, fc2(tape, gelu(fc1(tape, ln2(tape, h)))));
  }
};

}  // namespace mmgem
