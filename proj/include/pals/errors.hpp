#pragma once

#include <stdexcept>
#include <string>

namespace pals {

/// Precondition violated by a numeric argument (non-finite value, empty geometry, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Missing, unknown or ill-typed configuration entries.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A histogram or report file that does not follow its text format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pals
