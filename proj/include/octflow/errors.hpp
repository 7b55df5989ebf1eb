#pragma once

#include <stdexcept>
#include <string>

namespace octflow {

// Error classes map 1:1 onto the CLI's machine-parsable failure classes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation invoked outside its legal lifecycle (e.g. backward before forward).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

inline const char* error_class(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const StateError*>(&e)) return "state";
    if (dynamic_cast<const DomainError*>(&e)) return "domain";
    return "internal";
}

} // namespace octflow
