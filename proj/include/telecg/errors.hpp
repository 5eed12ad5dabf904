#pragma once

#include <stdexcept>
#include <string>

namespace telecg {

/// Input rejected by a precondition check (bad rate, bad ADC config, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Disk I/O or on-disk format failure. Ingest must not ack after one of these.
class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The operation conflicts with current state, e.g. writing to a closed session.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace telecg
