#pragma once

#include <stdexcept>
#include <string>

namespace labelembed {

/// Malformed or out-of-range arguments (bad ids, shape mismatches).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value or configuration that violates a documented invariant.
class ValidationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The pre-normalization embedding vanished, so it has no direction.
class DegenerateEmbedding : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or gradient became non-finite. `payload` is a JSON document
/// describing the offending batch so it can be replayed.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::string payload)
      : std::runtime_error(what), payload_(std::move(payload)) {}

  const std::string& payload() const noexcept { return payload_; }

 private:
  std::string payload_;
};

}  // namespace labelembed
