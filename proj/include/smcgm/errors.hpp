#pragma once

#include <stdexcept>
#include <string>

namespace smcgm {

// Invalid sizes, bad option values, malformed config files. CLI exit 2.
class config_error : public std::runtime_error {
  public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Solver breakdown, non-finite intermediates. CLI exit 3.
class numerical_error : public std::runtime_error {
  public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace smcgm
