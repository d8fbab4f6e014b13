#pragma once

#include <stdexcept>
#include <string>

namespace xfuse {

// Shape disagreement between operands (names both shapes in the message).
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken caller contract (misaligned lists, missing gradients, bad indices).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid numeric content (non-stochastic rows, bad histograms).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-range configuration values.
struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk artifacts (bad magic, truncation, version skew).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Manifest inconsistencies (missing scenes, unknown splits).
struct ManifestError : std::runtime_error {
    explicit ManifestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scene synthesis could not satisfy its budget.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures, always carrying the offending path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace xfuse
