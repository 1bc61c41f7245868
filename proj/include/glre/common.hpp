#pragma once

#include <stdexcept>
#include <string>

namespace glre {

// Error hierarchy shared across the library. Exit-code mapping lives in the CLI.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (bad JSON, dangling ids, bad spans).
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Incompatible shapes, dimensions or settings.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Missing or unreadable external data (files, precomputed embeddings).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite values or numeric contract violations during training.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace glre
