#pragma once

#include <stdexcept>
#include <string>

namespace chiplet {

// Bad input data: negative densities, non-PD covariance, NaN fields.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Point or argument outside the domain where an operation is defined.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Invalid solver or run configuration (unstable dt, nx < 3, unknown key...).
// `field` names the offending setting when there is one.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual, long iterations)
        : std::runtime_error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    long iterations() const noexcept { return iterations_; }

private:
    double residual_;
    long iterations_;
};

class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

// A particle position became non-finite during time stepping.
class NumericalBlowup : public std::runtime_error {
public:
    NumericalBlowup(std::size_t particle, const std::string& what)
        : std::runtime_error(what), particle_(particle) {}

    std::size_t particle() const noexcept { return particle_; }

private:
    std::size_t particle_;
};

}  // namespace chiplet
