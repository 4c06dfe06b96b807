#pragma once

#include <stdexcept>
#include <string>

namespace ph {

// Error categories shared by the C API and the CLI exit codes.
enum class ErrorCode : int {
  ok = 0,
  internal = 1,
  config = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline Error config_error(std::string msg) { return Error(ErrorCode::config, std::move(msg)); }
inline Error data_error(std::string msg) { return Error(ErrorCode::data, std::move(msg)); }
inline Error numeric_error(std::string msg) { return Error(ErrorCode::numeric, std::move(msg)); }
inline Error internal_error(std::string msg) { return Error(ErrorCode::internal, std::move(msg)); }

}  // namespace ph
