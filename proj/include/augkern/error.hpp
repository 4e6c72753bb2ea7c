#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace augkern {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad parameters or malformed inputs supplied by the caller.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical precondition failed (detailed balance, divergent series, ...).
/// `report` optionally carries a JSON document describing the failure.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what, std::string report = {})
        : Error(what), report_(std::move(report)) {}

    const std::string& report() const noexcept { return report_; }

private:
    std::string report_;
};

/// Configuration file problem; `field` names the offending JSON path.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace augkern
