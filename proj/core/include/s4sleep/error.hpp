#pragma once

#include <stdexcept>
#include <string>

namespace s4sleep {

// Exception carrying a module-specific error code. Each module instantiates
// it with its own enum so callers can match on `code()` without string parsing.
template <class Code>
class CodedError : public std::runtime_error {
 public:
  CodedError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

}  // namespace s4sleep
