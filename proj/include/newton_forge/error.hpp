/*
 * Copyright 2026 The newton-forge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nforge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Raised when a NaN or infinity shows up. `where` is a node index on a tape,
/// a CG iteration, or a worker index depending on the raising component.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::size_t where)
      : Error(what), where_(where) {}
  std::size_t where() const noexcept { return where_; }

 private:
  std::size_t where_;
};

}  // namespace nforge
