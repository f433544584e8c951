#pragma once

#include <stdexcept>
#include <string>

namespace authlock {

/// Raised when a caller violates an operation's preconditions.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for missing, truncated or malformed files. The message names the file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(int epoch, const std::string& what)
      : std::runtime_error("training failed at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Trigger optimization produced a non-finite objective.
class AttackFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace authlock
