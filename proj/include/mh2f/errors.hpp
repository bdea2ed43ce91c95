#pragma once

#include <stdexcept>
#include <string>

namespace mh2f {

// Invalid configuration values or parameter/channel mismatches.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated runtime preconditions (shapes, divisibility, value ranges).
class precondition_error : public std::runtime_error {
 public:
  explicit precondition_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File system and codec failures; message carries the offending path.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mh2f
