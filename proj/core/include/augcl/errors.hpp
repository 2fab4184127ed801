#pragma once

#include <stdexcept>
#include <string>

namespace augcl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes that do not compose (matmul inner dims, conv kernel vs input, ...).
class DimensionError : public Error {
public:
    using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Batch statistics need at least two rows.
class BatchSizeError : public Error {
public:
    using Error::Error;
};

// NaN or Inf produced by an operation.
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed dataset or checkpoint file.
class FormatError : public Error {
public:
    using Error::Error;
};

// File shorter than its header promises.
class LengthError : public Error {
public:
    using Error::Error;
};

// Dataset directory or file missing.
class DataMissingError : public Error {
public:
    using Error::Error;
};

// Run-directory log missing or unreadable.
class LogError : public Error {
public:
    LogError(std::string file, const std::string& message) : Error(file + ": " + message), file_(std::move(file)) {}

    const std::string& file() const noexcept { return file_; }

private:
    std::string file_;
};

class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace augcl
