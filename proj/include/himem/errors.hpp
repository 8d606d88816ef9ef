#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace himem {

// Error taxonomy. The CLI maps these onto process exit codes:
// usage -> 1, data/format/validation -> 2, numeric -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Mismatched or invalid tensor dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf detected at an operation boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed values (bad label range, non-normalized target rows, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Streaming-buffer misuse (agent count mismatch, empty stream, ...).
class StreamError : public Error {
 public:
  using Error::Error;
};

// On-disk format violations; carries the byte offset of the defect.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  explicit FormatError(const std::string& what) : Error(what), byte_offset_(0) {}
  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

// Config-file parse or constraint failures.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Out-of-range access (positional table overflow, row slices, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Empty or unusable evaluation set.
class EvalError : public Error {
 public:
  using Error::Error;
};

// API misuse (non-scalar loss to backward, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace himem
