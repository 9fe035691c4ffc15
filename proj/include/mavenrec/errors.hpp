#pragma once

#include <stdexcept>

namespace mavenrec {

/// Invalid configuration values (model, training, generator or run config).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mavenrec
