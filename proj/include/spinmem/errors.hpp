#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace spinmem {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad user-facing input. `field` names the offending parameter.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& what)
        : Error(what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class QuadratureError : public Error {
public:
    QuadratureError(const std::string& what, std::complex<double> best, double err)
        : Error(what), best_(best), err_(err) {}
    std::complex<double> best_estimate() const noexcept { return best_; }
    double error_bound() const noexcept { return err_; }

private:
    std::complex<double> best_;
    double err_;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class IntegrationError : public Error {
public:
    using Error::Error;
};

}  // namespace spinmem
