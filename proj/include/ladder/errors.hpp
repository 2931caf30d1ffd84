// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by all modules. The CLI maps kinds to exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace ladder {

enum class ErrorKind {
  Config,    // invalid configuration or usage of an API
  Data,      // malformed input files, bad token ids, IO failures
  Numeric,   // domain violations, non-finite values
  Training,  // divergence during optimization
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error(ErrorKind::Training, what) {}
};

}  // namespace ladder
