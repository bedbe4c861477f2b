#ifndef CONTEXT_TRACKER_ERRORS_HPP
#define CONTEXT_TRACKER_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace context_tracker {

/// Violated precondition on shapes, ranges or arguments.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while reading a CWB weight bundle.
class LoadError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, BadHeader, ShapeMismatch, NonFinite };

  LoadError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Candidate quotas could not be met within the attempt budget.
class SamplingExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed sequence data, ground truth, or run files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or unknown configuration key/value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unrecoverable condition during tracking (e.g. no candidates).
class TrackingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace context_tracker

#endif  // CONTEXT_TRACKER_ERRORS_HPP
