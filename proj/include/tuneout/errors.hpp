#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tuneout {

// Exit-code classes used by the command line front end:
// ValidationError -> 1, ComputationError -> 2, NonConvergenceError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ComputationError : public Error {
public:
    using Error::Error;
};

class NonConvergenceError : public ComputationError {
public:
    using ComputationError::ComputationError;
};

// Raised when a wavelength falls inside the guard band of a hyperfine line.
class ResonanceError : public ComputationError {
public:
    ResonanceError(const std::string& what, double wavelength_nm)
        : ComputationError(what), wavelength_nm_(wavelength_nm) {}
    double wavelength_nm() const noexcept { return wavelength_nm_; }

private:
    double wavelength_nm_;
};

// More than one sign change inside a bracket that should hold a single root.
class MultipleRootsError : public ComputationError {
public:
    MultipleRootsError(const std::string& what, std::vector<std::pair<double, double>> intervals)
        : ComputationError(what), intervals_(std::move(intervals)) {}
    const std::vector<std::pair<double, double>>& intervals() const noexcept { return intervals_; }

private:
    std::vector<std::pair<double, double>> intervals_;
};

}  // namespace tuneout
