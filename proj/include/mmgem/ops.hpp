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
#include <numbers>
#include <span>
#include <vector>

#include "mmgem/autodiff.hpp"
#include "mmgem/gemm.hpp"

// Differentiable kernels. Broadcasting is limited to leading batch dimensions:
// the smaller operand's shape must equal a suffix of the larger one.

namespace mmgem {

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (auto v : vs)
    if (v.requires_grad()) return true;
  return false;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  return a.tape->push("add", std::move(out), detail::any_grad({a, b}),
                      [a, b](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        if (a.requires_grad()) detail::add_into(t.grad_acc(a), g);
                        if (b.requires_grad()) detail::add_into(t.grad_acc(b), g);
                      });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return a.tape->push("sub", std::move(out), detail::any_grad({a, b}),
                      [a, b](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        if (a.requires_grad()) detail::add_into(t.grad_acc(a), g);
                        if (b.requires_grad()) {
                          auto& gb = t.grad_acc(b);
                          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
                        }
                      });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape->push("mul", std::move(out), detail::any_grad({a, b}),
                      [a, b](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        if (a.requires_grad()) {
                          auto& ga = t.grad_acc(a);
                          const auto& bv = b.value();
                          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * bv[i];
                        }
                        if (b.requires_grad()) {
                          auto& gb = t.grad_acc(b);
                          const auto& av = a.value();
                          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * av[i];
                        }
                      });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= c;
  return a.tape->push("scale", std::move(out), a.requires_grad(),
                      [a, c](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        auto& ga = t.grad_acc(a);
                        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * c;
                      });
}

/// a / s for a single-element s.
template <class T>
Var<T> div_scalar(Var<T> a, Var<T> s) {
  detail::require(s.numel() == 1, "div_scalar: divisor must have one element");
  const T sv = s.value()[0];
  if (sv == T(0)) throw NumericError("div_scalar: division by zero");
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v /= sv;
  return a.tape->push("div_scalar", std::move(out), detail::any_grad({a, s}),
                      [a, s, sv](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        if (a.requires_grad()) {
                          auto& ga = t.grad_acc(a);
                          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] / sv;
                        }
                        if (s.requires_grad()) {
                          const auto& y = t.value(Var<T>{&t, self});
                          T acc = 0;
                          for (std::size_t i = 0; i < y.numel(); ++i) acc += g[i] * y[i];
                          t.grad_acc(s)[0] -= acc / sv;
                        }
                      });
}

/// x + y where y's shape is a suffix of x's shape (leading-batch broadcast).
template <class T>
Var<T> add_broadcast(Var<T> x, Var<T> y) {
  detail::require(detail::is_suffix(y.shape(), x.shape()),
                  "add_broadcast: " + shape_str(y.shape()) + " is not a suffix of " +
                      shape_str(x.shape()));
  const std::size_t inner = y.numel();
  Tensor<T> out = x.value();
  const auto& yv = y.value();
  for (std::size_t i = 0; i < out.numel(); i += inner)
    for (std::size_t j = 0; j < inner; ++j) out[i + j] += yv[j];
  return x.tape->push("add_broadcast", std::move(out), detail::any_grad({x, y}),
                      [x, y, inner](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        if (x.requires_grad()) detail::add_into(t.grad_acc(x), g);
                        if (y.requires_grad()) {
                          auto& gy = t.grad_acc(y);
                          for (std::size_t i = 0; i < g.numel(); i += inner)
                            for (std::size_t j = 0; j < inner; ++j) gy[j] += g[i + j];
                        }
                      });
}

template <class T>
Var<T> gelu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
  return a.tape->push("gelu", std::move(out), a.requires_grad(),
                      [a](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        const auto& x = a.value();
                        auto& ga = t.grad_acc(a);
                        const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
                        for (std::size_t i = 0; i < ga.numel(); ++i) {
                          const T xi = x[i];
                          const T cdf = T(0.5) * (T(1) + std::erf(xi / std::numbers::sqrt2_v<T>));
                          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xi * xi);
                          ga[i] += g[i] * (cdf + xi * pdf);
                        }
                      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T v : a.value().storage()) acc += v;
  return a.tape->push("sum", Tensor<T>::scalar(acc), a.requires_grad(),
                      [a](Tape<T>& t, std::uint32_t self) {
                        const T g = t.grad(self)[0];
                        for (auto& v : t.grad_acc(a).storage()) v += g;
                      });
}

/// Mean over every axis.
template <class T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.numel());
  T acc = 0;
  for (T v : a.value().storage()) acc += v;
  return a.tape->push("mean", Tensor<T>::scalar(acc / n), a.requires_grad(),
                      [a, n](Tape<T>& t, std::uint32_t self) {
                        const T g = t.grad(self)[0] / n;
                        for (auto& v : t.grad_acc(a).storage()) v += g;
                      });
}

/// Mean over one axis; the axis is removed from the shape.
template <class T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
  const Shape& s = a.shape();
  detail::require(axis < s.size(), "mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] += x[(o * n + k) * inner + j];
  const T inv = T(1) / static_cast<T>(n);
  for (auto& v : out.storage()) v *= inv;
  return a.tape->push("mean_axis", std::move(out), a.requires_grad(),
                      [a, outer, inner, n, inv](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        auto& ga = t.grad_acc(a);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t k = 0; k < n; ++k)
                            for (std::size_t j = 0; j < inner; ++j)
                              ga[(o * n + k) * inner + j] += g[o * inner + j] * inv;
                      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// x[..., k] * w[k, n] -> [..., n]
template <class T>
Var<T> matmul(Var<T> x, Var<T> w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::require(ws.size() == 2 && !xs.empty() && xs.back() == ws[0],
                  "matmul: " + shape_str(xs) + " x " + shape_str(ws));
  const std::size_t k = ws[0], n = ws[1], m = x.numel() / k;
  Shape os = xs;
  os.back() = n;
  Tensor<T> out(os);
  gemm::nn(m, k, n, x.value().data().data(), w.value().data().data(), out.data().data());
  return x.tape->push("matmul", std::move(out), detail::any_grad({x, w}),
                      [x, w, m, k, n](Tape<T>& t, std::uint32_t self) {
                        const T* g = t.grad(self).data().data();
                        if (x.requires_grad()) {
                          std::vector<T> scratch;
                          gemm::nt(m, k, n, g, w.value().data().data(),
                                   t.grad_acc(x).data().data(), scratch);
                        }
                        if (w.requires_grad()) {
                          std::vector<T> scratch;
                          gemm::tn(m, k, n, x.value().data().data(), g,
                                   t.grad_acc(w).data().data(), scratch);
                        }
                      });
}

/// Batched product a[B, m, k] * b[B, k, n] -> [B, m, n].
template <class T>
Var<T> bmm(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1],
                  "bmm: " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t batch = as[0], m = as[1], k = as[2], n = bs[2];
  Tensor<T> out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i)
    gemm::nn(m, k, n, a.value().data().data() + i * m * k, b.value().data().data() + i * k * n,
             out.data().data() + i * m * n);
  return a.tape->push(
      "bmm", std::move(out), detail::any_grad({a, b}),
      [a, b, batch, m, k, n](Tape<T>& t, std::uint32_t self) {
        const T* g = t.grad(self).data().data();
        std::vector<T> scratch;
        if (a.requires_grad()) {
          T* ga = t.grad_acc(a).data().data();
          for (std::size_t i = 0; i < batch; ++i)
            gemm::nt(m, k, n, g + i * m * n, b.value().data().data() + i * k * n, ga + i * m * k,
                     scratch);
        }
        if (b.requires_grad()) {
          T* gb = t.grad_acc(b).data().data();
          for (std::size_t i = 0; i < batch; ++i)
            gemm::tn(m, k, n, a.value().data().data() + i * m * k, g + i * m * n, gb + i * k * n,
                     scratch);
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->push("reshape", std::move(out), a.requires_grad(),
                      [a](Tape<T>& t, std::uint32_t self) {
                        detail::add_into(t.grad_acc(a), t.grad(self));
                      });
}

namespace detail {

// Visits (source offset, destination offset) pairs of a permutation.
template <class F>
void for_each_permuted(const Shape& in, const std::vector<std::size_t>& perm, F&& f) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[perm[i]];
    step[i] = in_stride[perm[i]];
  }
  const std::size_t total = numel_of(in);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const std::size_t last = r - 1;
  for (std::size_t dst = 0; dst < total;) {
    // innermost axis as a tight loop
    for (std::size_t j = 0; j < out[last]; ++j, ++dst) f(src + j * step[last], dst);
    std::size_t ax = last;
    while (ax-- > 0) {
      if (++idx[ax] < out[ax]) {
        src += step[ax];
        break;
      }
      src -= step[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

/// Axis permutation: output axis i is input axis perm[i].
template <class T>
Var<T> permute(Var<T> a, std::vector<std::size_t> perm) {
  const Shape in = a.shape();
  detail::require(perm.size() == in.size(), "permute: rank mismatch");
  Shape os(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) os[i] = in.at(perm[i]);
  Tensor<T> out(os);
  const auto& x = a.value();
  detail::for_each_permuted(in, perm, [&](std::size_t s, std::size_t d) { out[d] = x[s]; });
  return a.tape->push("permute", std::move(out), a.requires_grad(),
                      [a, in, perm](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        auto& ga = t.grad_acc(a);
                        detail::for_each_permuted(
                            in, perm, [&](std::size_t s, std::size_t d) { ga[s] += g[d]; });
                      });
}

/// Matrix transpose of a 2-D value.
template <class T>
Var<T> transpose(Var<T> a) {
  detail::require(a.shape().size() == 2, "transpose: expects rank 2");
  return permute(a, {1, 0});
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape base = parts[0].shape();
  detail::require(axis < base.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= base[i];
  for (std::size_t i = axis + 1; i < base.size(); ++i) inner *= base[i];
  std::vector<std::size_t> extents;
  bool needs_grad = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    detail::require(s.size() == base.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis) detail::require(s[i] == base[i], "concat: extent mismatch on axis " + std::to_string(i));
    extents.push_back(s[axis]);
    total += s[axis];
    needs_grad = needs_grad || p.requires_grad();
  }
  Shape os = base;
  os[axis] = total;
  Tensor<T> out(os);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& x = parts[p].value();
    const std::size_t chunk = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data().data() + o * chunk, chunk,
                  out.data().data() + o * total * inner + offset * inner);
    offset += extents[p];
  }
  return parts[0].tape->push(
      "concat", std::move(out), needs_grad,
      [parts, extents, outer, inner, total](Tape<T>& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
          const std::size_t chunk = extents[p] * inner;
          if (parts[p].requires_grad()) {
            auto& gp = t.grad_acc(parts[p]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < chunk; ++j)
                gp[o * chunk + j] += g[o * total * inner + offset * inner + j];
          }
          offset += extents[p];
        }
      });
}

/// Elements [begin, end) along `axis`.
template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  detail::require(axis < s.size() && begin < end && end <= s[axis],
                  "slice: bad range on " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis], len = end - begin;
  Shape os = s;
  os[axis] = len;
  Tensor<T> out(os);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * n + begin) * inner, len * inner,
                out.data().data() + o * len * inner);
  return a.tape->push("slice", std::move(out), a.requires_grad(),
                      [a, outer, inner, n, len, begin](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        auto& ga = t.grad_acc(a);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t j = 0; j < len * inner; ++j)
                            ga[(o * n + begin) * inner + j] += g[o * len * inner + j];
                      });
}

/// Row gather from a 2-D table: out[i] = table[ids[i]]. Serves as embedding lookup.
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> ids) {
  const Shape& s = table.shape();
  detail::require(s.size() == 2, "gather_rows: table must be rank 2");
  const std::size_t width = s[1];
  Tensor<T> out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= s[0])
      throw ShapeError("gather_rows: index " + std::to_string(ids[i]) + " out of range " +
                       std::to_string(s[0]));
    std::copy_n(table.value().data().data() + ids[i] * width, width,
                out.data().data() + i * width);
  }
  return table.tape->push("gather_rows", std::move(out), table.requires_grad(),
                          [table, ids = std::move(ids), width](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gt = t.grad_acc(table);
                            for (std::size_t i = 0; i < ids.size(); ++i)
                              for (std::size_t j = 0; j < width; ++j)
                                gt[ids[i] * width + j] += g[i * width + j];
                          });
}

template <class T>
Var<T> embedding(Var<T> table, std::vector<std::size_t> ids) {
  return gather_rows(table, std::move(ids));
}

// ---------------------------------------------------------------------------
// Normalisation and probabilities (all over the last axis)
// ---------------------------------------------------------------------------

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
  const std::size_t n = x.shape().back();
  detail::require(gain.numel() == n && bias.numel() == n, "layer_norm: parameter width");
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(rows);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data().data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return x.tape->push(
      "layer_norm", std::move(out), detail::any_grad({x, gain, bias}),
      [x, gain, bias, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape<T>& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        const auto& gv = gain.value();
        if (gain.requires_grad()) {
          auto& gg = t.grad_acc(gain);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
        }
        if (bias.requires_grad()) {
          auto& gb = t.grad_acc(bias);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
        if (x.requires_grad()) {
          auto& gx = t.grad_acc(x);
          std::vector<T> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = g[r * n + j] * gv[j];
              s1 += dh[j];
              s2 += dh[j] * xhat[r * n + j];
            }
            const T inv_n = T(1) / static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j)
              gx[r * n + j] += rstd[r] * (dh[j] - inv_n * s1 - xhat[r * n + j] * inv_n * s2);
          }
        }
      });
}

/// Softmax over the last axis. With `causal`, the value must be [..., L, L]
/// and entries above the diagonal are excluded (exact zeros).
template <class T>
Var<T> softmax(Var<T> x, bool causal = false) {
  const Shape& s = x.shape();
  const std::size_t n = s.back();
  if (causal)
    detail::require(s.size() >= 2 && s[s.size() - 2] == n, "softmax: causal mask needs square tail");
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(s);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t valid = causal ? (r % n) + 1 : n;
    const T* xr = xv.data().data() + r * n;
    T* yr = out.data().data() + r * n;
    T mx = xr[0];
    for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, xr[j]);
    T z = 0;
    for (std::size_t j = 0; j < valid; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < valid; ++j) yr[j] /= z;
  }
  return x.tape->push("softmax", std::move(out), x.requires_grad(),
                      [x, n, rows](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        const auto& y = t.value(Var<T>{&t, self});
                        auto& gx = t.grad_acc(x);
                        for (std::size_t r = 0; r < rows; ++r) {
                          T dot = 0;
                          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                          for (std::size_t j = 0; j < n; ++j)
                            gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                        }
                      });
}

template <class T>
Var<T> log_softmax(Var<T> x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data().data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lse;
  }
  return x.tape->push("log_softmax", std::move(out), x.requires_grad(),
                      [x, n, rows](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        const auto& y = t.value(Var<T>{&t, self});
                        auto& gx = t.grad_acc(x);
                        for (std::size_t r = 0; r < rows; ++r) {
                          T gs = 0;
                          for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
                          for (std::size_t j = 0; j < n; ++j)
                            gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gs;
                        }
                      });
}

/// Per-row cross-entropy: logsumexp(logits[r]) - logits[r][targets[r]], shape [rows].
template <class T>
Var<T> cross_entropy_rows(Var<T> logits, std::vector<std::size_t> targets) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.numel() / n;
  detail::require(targets.size() == rows, "cross_entropy_rows: one target per row required");
  Tensor<T> out({rows});
  Tensor<T> probs(logits.shape());
  const auto& xv = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= n)
      throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for " + std::to_string(n) + " classes");
    const T* xr = xv.data().data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[r * n + j] = std::exp(xr[j] - mx);
      z += probs[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= z;
    out[r] = (mx + std::log(z)) - xr[targets[r]];
  }
  return logits.tape->push(
      "cross_entropy", std::move(out), logits.requires_grad(),
      [logits, n, rows, targets = std::move(targets), probs = std::move(probs)](
          Tape<T>& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_acc(logits);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r] * probs[r * n + j];
          gx[r * n + targets[r]] -= g[r];
        }
      });
}

/// Scalar cross-entropy of one logit vector.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::size_t target) {
  const std::size_t n = logits.numel();
  return reshape(cross_entropy_rows(reshape(logits, {1, n}), {target}), {1});
}

/// Rows scaled to unit L2 norm over the last axis. Zero rows are an error.
template <class T>
Var<T> l2_normalize(Var<T> x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += xv[r * n + j] * xv[r * n + j];
    const T nrm = std::sqrt(ss);
    if (!(nrm > T(0))) throw NumericError("l2_normalize: zero-norm vector");
    norms[r] = nrm;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] / nrm;
  }
  return x.tape->push("l2_normalize", std::move(out), x.requires_grad(),
                      [x, n, rows, norms = std::move(norms)](Tape<T>& t, std::uint32_t self) {
                        const auto& g = t.grad(self);
                        const auto& y = t.value(Var<T>{&t, self});
                        auto& gx = t.grad_acc(x);
                        for (std::size_t r = 0; r < rows; ++r) {
                          T dot = 0;
                          for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * g[r * n + j];
                          for (std::size_t j = 0; j < n; ++j)
                            gx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / norms[r];
                        }
                      });
}

}  // namespace mmgem
