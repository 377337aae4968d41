// Copyright 2026 The emamba-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace emamba {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise malformed numeric input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Inconsistent shapes, bit-widths or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A piecewise fit could not meet its error bound within the segment cap.
class FitFailure : public Error {
 public:
  FitFailure(const std::string& what, double achieved_error)
      : Error(what), achieved_error_(achieved_error) {}
  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

/// A value left the representable range of a fixed-width integer register.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// Malformed container, JSON artifact or metrics file.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace emamba
