#pragma once

#include <stdexcept>
#include <string>

namespace nowdiff {

/// Invalid configuration values (bad step counts, odd embedding widths, ...).
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A caller broke an operation contract (shape mismatch, out-of-range step).
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

/// Malformed on-disk data. The kind distinguishes the failure classes so
/// callers and tests can tell a bad header from a short read.
struct ParseError : std::runtime_error {
  enum class Kind { BadMagic, Truncated, OutOfRange, Malformed };
  Kind kind;
  ParseError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

}  // namespace nowdiff
