#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepdgl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor or configuration shapes that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input file; carries the 1-based line number of the offending line.
class ParseError : public Error {
public:
    enum class Kind { header, ragged_row, non_numeric, duplicate_id, covariate_rows, malformed_line, unknown_key, out_of_range };

    ParseError(Kind kind, std::string what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), kind_(kind), line_(line) {}

    Kind kind() const { return kind_; }
    std::size_t line() const { return line_; }

private:
    Kind kind_;
    std::size_t line_;
};

class DataError : public Error {
public:
    using Error::Error;
};

class SplitError : public DataError {
public:
    using DataError::DataError;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

class MaintenanceError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

// Non-finite loss during training.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace deepdgl
