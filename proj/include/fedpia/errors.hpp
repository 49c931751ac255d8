// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fedpia {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map it to a diagnostic and a nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix / parameter shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid data: empty batches, out-of-range labels, empty partitions.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, infeasible marginals, division by a zero mass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. activation alignment requested without probe caches.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Carries the 1-based line number of the bad row.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace fedpia
