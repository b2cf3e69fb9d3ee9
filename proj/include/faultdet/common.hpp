#pragma once

#include <stdexcept>
#include <string>

namespace faultdet {

// Error taxonomy used across the project. Callers that surface errors to the
// CLI map these onto exit codes (usage/input -> 2, divergence -> 3).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AnnotationError : std::runtime_error {
  explicit AnnotationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace faultdet
