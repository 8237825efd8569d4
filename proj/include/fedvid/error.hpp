#pragma once

#include <stdexcept>
#include <string>

namespace fedvid {

// Error categories; the CLI maps these onto process exit codes.
enum class ErrorKind {
  config,                // bad configuration / bad argument
  shape_mismatch,        // incompatible tensor or weight-set signatures
  malformed_checkpoint,  // unreadable or inconsistent checkpoint file
  infeasible_partition,  // sharding constraints cannot be satisfied
  io,                    // filesystem failures
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

}  // namespace fedvid
