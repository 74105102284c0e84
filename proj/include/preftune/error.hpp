#pragma once

#include <stdexcept>
#include <string>

namespace preftune {

// Process exit codes used by the CLI; library errors carry the code they
// should map to so main() can translate uniformly.
enum class ExitCode : int {
  ok = 0,
  usage = 1,
  schema = 2,
  duplicate_id = 3,
  numeric_abort = 4,
  invalid_weights = 5,
  misalignment = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ExitCode::usage, m) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& m) : Error(ExitCode::schema, m) {}
};
struct DuplicateIdError : Error {
  explicit DuplicateIdError(const std::string& m)
      : Error(ExitCode::duplicate_id, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m)
      : Error(ExitCode::numeric_abort, m) {}
};
struct InvalidWeightsError : Error {
  explicit InvalidWeightsError(const std::string& m)
      : Error(ExitCode::invalid_weights, m) {}
};
struct MisalignmentError : Error {
  explicit MisalignmentError(const std::string& m)
      : Error(ExitCode::misalignment, m) {}
};

}  // namespace preftune
