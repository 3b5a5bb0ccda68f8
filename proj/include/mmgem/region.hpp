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

#include <array>
#include <sstream>
#include <string>

#include "mmgem/error.hpp"

namespace mmgem {

/// Axis-aligned box in normalized image coordinates, (0,0) top-left.
struct Region {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;

  static constexpr Region whole() { return {0, 0, 1, 1}; }

  bool valid() const {
    return 0 <= x0 && x0 < x1 && x1 <= 1 && 0 <= y0 && y0 < y1 && y1 <= 1;
  }

  void validate() const {
    if (!valid()) throw UsageError("invalid region " + str());
  }

  /// Index of the quadrant containing the box centre: 0 TL, 1 TR, 2 BL, 3 BR.
  int quadrant() const {
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    return (cy >= 0.5 ? 2 : 0) + (cx >= 0.5 ? 1 : 0);
  }

  std::string str() const {
    std::ostringstream os;
    os << '(' << x0 << ',' << y0 << ',' << x1 << ',' << y1 << ')';
    return os.str();
  }

  std::array<double, 4> box() const { return {x0, y0, x1, y1}; }

  /// "x0,y0,x1,y1" as accepted on the command line.
  static Region parse(const std::string& s) {
    Region r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream is(s);
    if (!(is >> r.x0 >> c1 >> r.y0 >> c2 >> r.x1 >> c3 >> r.y1) || c1 != ',' || c2 != ',' ||
        c3 != ',')
      throw UsageError("region must be x0,y0,x1,y1: '" + s + "'");
    std::string rest;
    if (is >> rest) throw UsageError("trailing characters in region '" + s + "'");
    r.validate();
    return r;
  }

  friend bool operator==(const Region&, const Region&) = default;
};

}  // namespace mmgem
