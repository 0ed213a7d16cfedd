#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace p2t {

/// Coarse error categories. The CLI maps each one to its own exit code.
enum class ErrorCategory {
  config = 2,
  parse = 3,
  validation = 4,
  dimension = 5,
  numeric = 6,
  contract = 7,
  state = 8,
  io = 9,
  metric = 10,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "configuration error";
    case ErrorCategory::parse: return "parse error";
    case ErrorCategory::validation: return "validation error";
    case ErrorCategory::dimension: return "dimension error";
    case ErrorCategory::numeric: return "numeric error";
    case ErrorCategory::contract: return "contract error";
    case ErrorCategory::state: return "state error";
    case ErrorCategory::io: return "I/O error";
    case ErrorCategory::metric: return "undefined-metric error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define P2T_DEFINE_ERROR(Name, cat)                                     \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorCategory::cat, what) {} \
  };

P2T_DEFINE_ERROR(ConfigError, config)
P2T_DEFINE_ERROR(ValidationError, validation)
P2T_DEFINE_ERROR(DimensionError, dimension)
P2T_DEFINE_ERROR(NumericError, numeric)
P2T_DEFINE_ERROR(ContractError, contract)
P2T_DEFINE_ERROR(StateError, state)
P2T_DEFINE_ERROR(IoError, io)
P2T_DEFINE_ERROR(MetricError, metric)

#undef P2T_DEFINE_ERROR

/// Malformed input; carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorCategory::parse,
              line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace p2t
