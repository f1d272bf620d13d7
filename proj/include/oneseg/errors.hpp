#pragma once

#include <stdexcept>
#include <string>

namespace oneseg {

// Bad arguments or bad input data. The CLI maps this family to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed OSEG or manifest content.
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A gradient reached a recorded operation that has no backward rule.
class UnsupportedPrimitive : public std::logic_error {
public:
    explicit UnsupportedPrimitive(const std::string& primitive)
        : std::logic_error("no backward rule for primitive '" + primitive + "'"), primitive_(primitive) {}

    const std::string& primitive() const { return primitive_; }

private:
    std::string primitive_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace oneseg
