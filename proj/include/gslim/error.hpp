// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gslim {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration, architecture or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered in inputs or during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File system and format failures, including checksum mismatches.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gslim
