#pragma once

#include <stdexcept>
#include <string>

namespace jatp {

// Validation of user-supplied configuration (bad spec, incompatible models).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed arguments to an operation (shape mismatch, negative epsilon).
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or inconsistent external data (dataset files, checkpoints).
struct IngestionError : std::runtime_error {
    explicit IngestionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime failure mid-computation (non-finite loss or gradient).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Report assembly problems (missing baseline row, empty denominator).
struct ReportError : std::runtime_error {
    explicit ReportError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace jatp
