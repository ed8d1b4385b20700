#pragma once

#include <stdexcept>
#include <string>

namespace rnnet {

// Exit-code mapping used by the CLI: config=2, io=3, numeric=4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files (CSV/binary event data, frames, checkpoints).
struct FormatError : IoError {
    explicit FormatError(const std::string& msg) : IoError(msg) {}
};

// Tensor/layer dimension mismatches and invalid layer stacks.
struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

// Spike or read timestamps moving backwards.
struct OrderingError : NumericError {
    explicit OrderingError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace rnnet
