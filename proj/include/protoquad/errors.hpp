#pragma once

#include <stdexcept>
#include <string>

namespace protoquad {

// Violated pre/postcondition. These indicate caller bugs, not recoverable
// runtime states, so they derive from logic_error.
class contract_error : public std::logic_error {
 public:
  explicit contract_error(const std::string& what) : std::logic_error(what) {}
};

// Bad user configuration (schema violations, impossible episode settings).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// File and stream failures.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss during training. Carries enough context to locate the
// offending episode in the logs.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw contract_error(msg);
}

}  // namespace protoquad
