#pragma once

#include <stdexcept>
#include <string>

namespace pyramid_isp {

/// Base of every error the library throws. `exit_code()` follows the CLI
/// convention: 2 config/validation, 3 data, 4 runtime abort.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual int exit_code() const noexcept { return 1; }
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("dimension error: " + what) {}
    int exit_code() const noexcept override { return 2; }
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation error: " + what) {}
    int exit_code() const noexcept override { return 2; }
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
    int exit_code() const noexcept override { return 2; }
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract error: " + what) {}
    int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what) {}
    int exit_code() const noexcept override { return 3; }
};

class IoError : public DataError {
public:
    explicit IoError(const std::string& what) : DataError("i/o error: " + what) {}
};

class ManifestError : public DataError {
public:
    explicit ManifestError(const std::string& what) : DataError("manifest error: " + what) {}
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, int line)
        : DataError("parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Training hit a NaN/Inf. Carries the diagnostic snapshot in its message.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& what) : Error("non-finite value: " + what) {}
    int exit_code() const noexcept override { return 4; }
};

}  // namespace pyramid_isp
