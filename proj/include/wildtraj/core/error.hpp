#pragma once

#include <stdexcept>
#include <string>

namespace wildtraj {

// Process exit codes used by the command-line front-end.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  schema = 2,
  leakage = 3,
  divergence = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::failure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Input does not match the expected layout (missing columns, empty or corrupt
// files, unknown configuration keys).
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(what, ExitCode::schema) {}
};

class LeakageError : public Error {
 public:
  explicit LeakageError(const std::string& what) : Error(what, ExitCode::leakage) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(what, ExitCode::divergence) {}
};

// Misuse of an API (shape mismatch, bad argument). Indicates a bug in the
// caller rather than bad data.
class ProgrammingError : public std::logic_error {
 public:
  explicit ProgrammingError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace wildtraj
