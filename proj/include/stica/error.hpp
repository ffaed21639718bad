#pragma once

#include <stdexcept>
#include <string>

namespace stica {

enum class ErrorKind { Config, Data, Numeric, Io };

// Process exit status for each error category (see the CLI).
constexpr int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numeric: return 4;
    case ErrorKind::Io: return 5;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

// Operand shapes that do not conform to an operation's contract. A shape bug
// is almost always a configuration mismatch, so it reports as one.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace stica
