// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

#include <stdexcept>
#include <string>

namespace asyncscale {

// Domain errors raised by library operations (bad input, violated precondition).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent experiment configuration. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File missing, unreadable, unwritable or malformed on disk. CLI exit code 3.
class IoError : public Error {
 public:
  using Error::Error;
};

// An internal invariant failed at runtime. CLI exit code 4; should never fire.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace asyncscale
