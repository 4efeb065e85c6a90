#pragma once

#include <stdexcept>
#include <string>

namespace tbss {

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long row, long col)
      : std::runtime_error(what), row_(row), col_(col) {}
  long row() const { return row_; }
  long col() const { return col_; }

 private:
  long row_;
  long col_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the detection pipeline; `step()` names the failing stage.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string step, const std::string& what)
      : std::runtime_error(step + ": " + what), step_(std::move(step)) {}
  const std::string& step() const { return step_; }

 private:
  std::string step_;
};

}  // namespace tbss
