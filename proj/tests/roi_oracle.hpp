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

// Dense-sampling reference for RoIAlign: the mean of a dense grid of
// bilinear reads inside each bin.
#pragma once

#include <algorithm>
#include <cmath>

#include "mmgem/pooling.hpp"

namespace oracle {

using mmgem::FeatureMap;
using mmgem::Region;

// Reference bilinear read of a [C,H,W] map at continuous position (x, y), in
// cell units with cell centres at i + 0.5 and clamping at the borders.
inline double bilinear(const FeatureMap<double>& v, std::size_t c, double x, double y) {
  auto axis = [](double p, std::size_t n, std::size_t& i0, std::size_t& i1, double& a) {
    double u = std::clamp(p - 0.5, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(u));
    i1 = std::min(i0 + 1, n - 1);
    a = u - static_cast<double>(i0);
  };
  std::size_t x0, x1, y0, y1;
  double ax, ay;
  axis(x, v.width, x0, x1, ax);
  axis(y, v.height, y0, y1, ay);
  return (1 - ay) * ((1 - ax) * v.at(c, y0, x0) + ax * v.at(c, y0, x1)) +
         ay * ((1 - ax) * v.at(c, y1, x0) + ax * v.at(c, y1, x1));
}

// Brute force: mean of `dense` x `dense` midpoint samples per bin.
inline FeatureMap<double> dense_roi(const FeatureMap<double>& v, const Region& r, std::size_t oh, std::size_t ow,
                             std::size_t dense = 64) {
  FeatureMap<double> out(v.channels, oh, ow);
  const double X0 = r.x0 * v.width, X1 = r.x1 * v.width, Y0 = r.y0 * v.height, Y1 = r.y1 * v.height;
  const double bw = (X1 - X0) / ow, bh = (Y1 - Y0) / oh;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t by = 0; by < oh; ++by)
      for (std::size_t bx = 0; bx < ow; ++bx) {
        double acc = 0;
        for (std::size_t sy = 0; sy < dense; ++sy)
          for (std::size_t sx = 0; sx < dense; ++sx)
            acc += bilinear(v, c, X0 + bw * (bx + (sx + 0.5) / dense), Y0 + bh * (by + (sy + 0.5) / dense));
        out.at(c, by, bx) = acc / static_cast<double>(dense * dense);
      }
  return out;
}

}  // namespace oracle
