#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gcl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes; the message names the op and both shapes.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const Shape& lhs, const Shape& rhs)
      : Error(op + ": shape mismatch " + to_string(lhs) + " vs " + to_string(rhs)) {}
  explicit ShapeError(const std::string& what) : Error(what) {}
};

/// Input outside the mathematical domain of an operation (log of 0, zero vector cosine, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong argument kind, non-scalar root, invalid step size.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Operation not allowed in the object's current state (e.g. second backward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Checksum mismatch or truncated binary data.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Unsupported file format version.
class VersionError : public Error {
 public:
  VersionError(std::uint32_t found, std::uint32_t expected)
      : Error("unsupported checkpoint version " + std::to_string(found) + " (expected " +
              std::to_string(expected) + ")"),
        found_(found),
        expected_(expected) {}
  std::uint32_t found() const { return found_; }
  std::uint32_t expected() const { return expected_; }

 private:
  std::uint32_t found_;
  std::uint32_t expected_;
};

/// Numerical failure during training (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace gcl
