#pragma once

#include <stdexcept>
#include <string>

namespace gacm {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the documented domain (e.g. x outside [0,1], alpha outside (0,1)).
class DomainError : public Error {
public:
    using Error::Error;
};

// Invalid argument value (e.g. negative lambda).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Shape or dimension mismatch between inputs.
class StructuralError : public Error {
public:
    using Error::Error;
};

// A covariate column cannot support the requested construction.
class DegenerateCovariate : public Error {
public:
    DegenerateCovariate(std::string column, const std::string& what)
        : Error(what), column_(std::move(column)) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

// Estimation was requested on an empty selected set.
class NothingSelected : public Error {
public:
    NothingSelected() : Error("no groups selected") {}
    using Error::Error;
};

// Linear algebra or objective failure that survived the jitter policy.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Operation not available for the requested configuration.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

// Input file does not match the expected schema. `field` names the offender.
class SchemaError : public Error {
public:
    SchemaError(std::string field, const std::string& what)
        : Error(what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace gacm
