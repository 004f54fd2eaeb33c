#pragma once

#include <stdexcept>
#include <string>

namespace epg {

/// Error categories; the CLI maps each one to its own exit code.
enum class ErrorKind { Usage = 2, Data = 3, Numeric = 4, Io = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Tensor shapes disagree.
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::Usage, "dimension error: " + w) {}
};

/// API misuse: missing gradients, bad plan lengths, bad flags.
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::Usage, "usage error: " + w) {}
};

/// Malformed input row.
struct ParseError : Error {
  ParseError(const std::string& path, std::size_t line, const std::string& w)
      : Error(ErrorKind::Data, "parse error: " + path + ":" + std::to_string(line) + ": " + w),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input with inconsistent content (duplicates, non-monotone frames).
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::Data, "data error: " + w) {}
};

/// Versioned file (canonical samples, checkpoints) does not match expectations.
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::Data, "format error: " + w) {}
};

/// Agent category has no decoder in the current model configuration.
struct RoutingError : Error {
  explicit RoutingError(const std::string& w) : Error(ErrorKind::Usage, "routing error: " + w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, "numeric error: " + w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::Io, "i/o error: " + w) {}
};

}  // namespace epg
