#ifndef DGSML_ERRORS_HPP_
#define DGSML_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dgsml {

// Operand shapes do not conform for the requested operation.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// An API precondition was violated (non-scalar grad output, label out of
// range, tensors from different graphs, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid dataset / experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file; carries a 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what), line_(0) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Requested a centroid for a class with no contributing samples.
class AbsentClassError : public std::runtime_error {
 public:
  explicit AbsentClassError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite gradient or parameter value.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace dgsml

#endif  // DGSML_ERRORS_HPP_
