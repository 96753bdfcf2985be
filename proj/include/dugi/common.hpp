#pragma once

#include <stdexcept>
#include <string>

namespace dugi {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PreconditionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FilterSymmetryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NondeterminismError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config-file parse failure; line is 1-based, 0 means "not tied to a line".
struct ConfigError : std::runtime_error {
    int line;
    explicit ConfigError(const std::string& msg, int line_no = 0)
        : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
          line(line_no) {}
};

} // namespace dugi
