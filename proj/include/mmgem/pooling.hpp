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
#include <vector>

#include "mmgem/ops.hpp"
#include "mmgem/region.hpp"

namespace mmgem {

/// Spatial feature map, stored [C, H, W].
template <class T>
struct FeatureMap {
  std::size_t channels = 0, height = 0, width = 0;
  Tensor<T> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), data({c, h, w}) {}
  explicit FeatureMap(Tensor<T> chw)
      : channels(chw.dim(0)), height(chw.dim(1)), width(chw.dim(2)), data(std::move(chw)) {}

  T& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  T at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  /// From the cell-major [H*W, C] layout the encoder produces.
  static FeatureMap from_cells(const T* cells, std::size_t c, std::size_t h, std::size_t w) {
    FeatureMap m(c, h, w);
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < c; ++k) m.data[k * h * w + p] = cells[p * c + k];
    return m;
  }
};

/// Per-channel mean over all H*W positions.
template <class T>
std::vector<T> mean_pool(const FeatureMap<T>& v) {
  const std::size_t n = v.height * v.width;
  std::vector<T> out(v.channels, T(0));
  for (std::size_t c = 0; c < v.channels; ++c) {
    T acc = 0;
    for (std::size_t p = 0; p < n; ++p) acc += v.data[c * n + p];
    out[c] = acc / static_cast<T>(n);
  }
  return out;
}

/// Averaging weights of one bin [lo, hi] along an axis of `n` cells.
///
/// Grid coordinates put cell i on [i, i+1] with its sample at i + 0.5. The
/// interpolant is linear between neighbouring centres and constant beyond the
/// outermost ones. Returns w with out = sum_i w[i] * v[i] equal to the exact
/// mean of that interpolant over [lo, hi]. The weights sum to 1.
inline std::vector<double> roi_axis_weights(double lo, double hi, std::size_t n) {
  if (!(hi > lo)) throw UsageError("roi_align: degenerate (zero-length) bin");
  std::vector<double> w(n, 0.0);
  std::vector<double> cuts = {lo, hi};
  for (std::size_t i = 0; i < n; ++i) {
    const double c = static_cast<double>(i) + 0.5;
    if (c > lo && c < hi) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double len = cuts[s + 1] - cuts[s];
    if (len <= 0) continue;
    // the interpolant is linear on each piece, so its midpoint value is exact
    const double u = 0.5 * (cuts[s] + cuts[s + 1]) - 0.5;
    if (u <= 0) {
      w[0] += len;
    } else if (u >= static_cast<double>(n - 1)) {
      w[n - 1] += len;
    } else {
      const auto i0 = static_cast<std::size_t>(std::floor(u));
      const double a = u - static_cast<double>(i0);
      w[i0] += len * (1 - a);
      w[i0 + 1] += len * a;
    }
  }
  for (auto& x : w) x /= (hi - lo);
  return w;
}

/// Weights for every bin: result[bin][cell].
inline std::vector<std::vector<double>> roi_bin_weights(double lo_norm, double hi_norm,
                                                        std::size_t cells, std::size_t bins) {
  const double lo = lo_norm * static_cast<double>(cells), hi = hi_norm * static_cast<double>(cells);
  if (!(hi > lo)) throw UsageError("roi_align: degenerate region (zero area after mapping)");
  const double step = (hi - lo) / static_cast<double>(bins);
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < bins; ++b)
    out.push_back(roi_axis_weights(lo + step * static_cast<double>(b),
                                   b + 1 == bins ? hi : lo + step * static_cast<double>(b + 1), cells));
  return out;
}

/// Region pooling of a feature map onto an out_h x out_w grid of bins; each bin
/// is the area-average of the bilinear interpolant of V over the bin.
template <class T>
FeatureMap<T> roi_align(const FeatureMap<T>& v, const Region& r, std::size_t out_h, std::size_t out_w) {
  r.validate();
  if (out_h < 1 || out_w < 1) throw UsageError("roi_align: output grid must be at least 1x1");
  const auto wy = roi_bin_weights(r.y0, r.y1, v.height, out_h);
  const auto wx = roi_bin_weights(r.x0, r.x1, v.width, out_w);
  FeatureMap<T> out(v.channels, out_h, out_w);
  for (std::size_t by = 0; by < out_h; ++by)
    for (std::size_t bx = 0; bx < out_w; ++bx)
      for (std::size_t i = 0; i < v.height; ++i) {
        if (wy[by][i] == 0) continue;
        for (std::size_t j = 0; j < v.width; ++j) {
          const double w = wy[by][i] * wx[bx][j];
          if (w == 0) continue;
          for (std::size_t c = 0; c < v.channels; ++c)
            out.at(c, by, bx) += static_cast<T>(w) * v.at(c, i, j);
        }
      }
  return out;
}

/// Differentiable RoI pooling on cell-major maps: v[B, H*W, C] with one region
/// per batch item -> [B, out_h*out_w, C].
template <class T>
Var<T> roi_align(Var<T> v, std::size_t height, std::size_t width, const std::vector<Region>& regions,
                 std::size_t out_h, std::size_t out_w) {
  const Shape& s = v.shape();
  detail::require(s.size() == 3 && s[1] == height * width, "roi_align: expects [B, H*W, C]");
  detail::require(regions.size() == s[0], "roi_align: one region per batch item");
  if (out_h < 1 || out_w < 1) throw UsageError("roi_align: output grid must be at least 1x1");
  const std::size_t batch = s[0], channels = s[2], bins = out_h * out_w;

  // sparse (bin, cell, weight) triples per batch item
  struct Tap {
    std::size_t bin, cell;
    T w;
  };
  std::vector<std::vector<Tap>> taps(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    regions[b].validate();
    const auto wy = roi_bin_weights(regions[b].y0, regions[b].y1, height, out_h);
    const auto wx = roi_bin_weights(regions[b].x0, regions[b].x1, width, out_w);
    for (std::size_t by = 0; by < out_h; ++by)
      for (std::size_t bx = 0; bx < out_w; ++bx)
        for (std::size_t i = 0; i < height; ++i) {
          if (wy[by][i] == 0) continue;
          for (std::size_t j = 0; j < width; ++j) {
            const double w = wy[by][i] * wx[bx][j];
            if (w != 0) taps[b].push_back({by * out_w + bx, i * width + j, static_cast<T>(w)});
          }
        }
  }

  Tensor<T> out({batch, bins, channels});
  const auto& x = v.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (const auto& tap : taps[b]) {
      T* dst = out.data().data() + (b * bins + tap.bin) * channels;
      const T* src = x.data().data() + (b * height * width + tap.cell) * channels;
      for (std::size_t c = 0; c < channels; ++c) dst[c] += tap.w * src[c];
    }
  return v.tape->push(
      "roi_align", std::move(out), v.requires_grad(),
      [v, taps = std::move(taps), bins, channels, cells = height * width](Tape<T>& t,
                                                                        std::uint32_t self) {
        const auto& g = t.grad(self);
        auto& gv = t.grad_acc(v);
        for (std::size_t b = 0; b < taps.size(); ++b)
          for (const auto& tap : taps[b]) {
            const T* src = g.data().data() + (b * bins + tap.bin) * channels;
            T* dst = gv.data().data() + (b * cells + tap.cell) * channels;
            for (std::size_t c = 0; c < channels; ++c) dst[c] += tap.w * src[c];
          }
      });
}

}  // namespace mmgem
