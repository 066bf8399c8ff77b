/**
 * @file errors.hpp
 * @brief Exception hierarchy shared by all agripinn modules.
 *
 * Every error derives from agripinn::Error so callers (notably the CLI) can
 * map failures to exit codes with a single catch site.
 */
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace agripinn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value outside the physical domain of a quantity (negative LAI, fw > 1, ...).
class DomainError : public Error {
public:
    DomainError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values in a loss or gradient.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration; `path()` is the dotted field path, e.g. "train.lambda".
class ConfigError : public Error {
public:
    ConfigError(std::string path, const std::string& what)
        : Error(path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// CSV content that does not match the documented schema.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, std::string column, const std::string& what)
        : Error("line " + std::to_string(line) + ", column '" + column + "': " + what),
          line_(line), column_(std::move(column)) {}
    std::size_t line() const noexcept { return line_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::string column_;
};

class MissingArtifactError : public Error {
public:
    explicit MissingArtifactError(std::string path)
        : Error("missing artifact: " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

}  // namespace agripinn
