#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qbp {

/// Base of every exception thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failures of the numerical pipeline (non-Hermitian input, eigensolver
/// trouble, ill-conditioned normalizations). The CLI maps these to exit 3.
class numeric_error : public error {
public:
    using error::error;
};

/// Invalid arguments: mismatched dimensions, malformed tables, bad parameters.
class invalid_input : public error {
public:
    using error::error;
};

class NotHermitian : public numeric_error {
public:
    explicit NotHermitian(double residual)
        : numeric_error("matrix is not Hermitian (||m - m^H||_F = " + std::to_string(residual) + ")"),
          residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class EigFailure : public numeric_error {
public:
    using numeric_error::numeric_error;
};

class NotProjection : public numeric_error {
public:
    using numeric_error::numeric_error;
};

class SpectralFailure : public numeric_error {
public:
    using numeric_error::numeric_error;
};

class NonConvergence : public numeric_error {
public:
    using numeric_error::numeric_error;
};

class DegenerateNormalization : public numeric_error {
public:
    using numeric_error::numeric_error;
};

class DimensionMismatch : public invalid_input {
public:
    using invalid_input::invalid_input;
};

class NotRectangular : public invalid_input {
public:
    using invalid_input::invalid_input;
};

class NonCompact : public invalid_input {
public:
    using invalid_input::invalid_input;
};

class EmptyFamily : public invalid_input {
public:
    using invalid_input::invalid_input;
};

class NotProductDiagonalizable : public numeric_error {
public:
    using numeric_error::numeric_error;
};

class EnumerationTooLarge : public invalid_input {
public:
    explicit EnumerationTooLarge(std::uint64_t count, std::uint64_t cap)
        : invalid_input("alignment enumeration has " + std::to_string(count) +
                        " candidates, above the cap of " + std::to_string(cap)),
          count_(count) {}
    std::uint64_t count() const noexcept { return count_; }

private:
    std::uint64_t count_;
};

/// Raised by verify_decomposition when a generator is not reproduced in
/// Wedderburn form by the computed basis. The CLI maps this to exit 4.
class VerificationFailed : public error {
public:
    VerificationFailed(std::string generator, double residual)
        : error("verification failed for generator '" + generator +
                "' (residual " + std::to_string(residual) + ")"),
          generator_(std::move(generator)), residual_(residual) {}
    const std::string& generator() const noexcept { return generator_; }
    double residual() const noexcept { return residual_; }

private:
    std::string generator_;
    double residual_;
};

} // namespace qbp
