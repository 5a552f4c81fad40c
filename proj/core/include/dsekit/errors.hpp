#pragma once

#include <stdexcept>
#include <string>

namespace dsekit {

/// A value fell outside its documented domain (names the offending field).
class RangeError : public std::invalid_argument {
 public:
  explicit RangeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A text artifact (CSV dataset, layer list, config file) failed to parse.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long line)
      : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// A binary or sidecar artifact is structurally wrong (bad magic, version,
/// truncation) or inconsistent with its own metadata.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// The area budget excludes every configuration in the design space.
class NoFeasibleConfigError : public std::runtime_error {
 public:
  explicit NoFeasibleConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// An API was used against its contract (non-scalar backward root, stale
/// tape, head-mode mismatch, dataset smaller than one batch, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace dsekit
