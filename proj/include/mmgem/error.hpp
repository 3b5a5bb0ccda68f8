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

#include <stdexcept>
#include <string>

namespace mmgem {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents or an invalid argument shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed gradient checks, invalid numeric arguments.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed files: images, manifests, checkpoints, configs.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid request from a caller (bad flag, bad region, precondition).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmgem
