/*
 * Copyright 2026 The SpeedyFeed Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
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

namespace speedyfeed {

// Root of every exception thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or axes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed, or a degenerate numeric input (e.g. a fully
// masked softmax row).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data. Carries the 1-based line and the 0-based field index
// when they are known (0 / npos otherwise).
class ParseError : public Error {
 public:
  static constexpr std::size_t kNoField = static_cast<std::size_t>(-1);

  ParseError(const std::string& message, std::size_t line = 0,
             std::size_t field = kNoField)
      : Error(Format(message, line, field)), line_(line), field_(field) {}

  std::size_t line() const { return line_; }
  std::size_t field() const { return field_; }

 private:
  static std::string Format(const std::string& message, std::size_t line,
                            std::size_t field) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (field != kNoField) out += "field " + std::to_string(field) + ": ";
    return out + message;
  }

  std::size_t line_;
  std::size_t field_;
};

// I/O failures and other data-level problems that are not syntax errors.
class DataError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant (a bug, not bad input).
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace speedyfeed
