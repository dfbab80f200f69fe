#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cosetpsd {

// Invalid user input: malformed patterns, scenario or manifest values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The sampling pattern (or pattern family) does not make the least-squares
// system full column rank. `missing()` lists the modular differences (or
// flattened ordered coset pairs) that no observation realizes.
class IdentifiabilityError : public std::runtime_error {
 public:
  IdentifiabilityError(const std::string& what, std::vector<int> missing)
      : std::runtime_error(what), missing_(std::move(missing)) {}

  const std::vector<int>& missing() const noexcept { return missing_; }

 private:
  std::vector<int> missing_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cosetpsd
