#pragma once

#include <stdexcept>
#include <string>

namespace icoe {

/// Raised for malformed input, violated preconditions and failed I/O.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace icoe
