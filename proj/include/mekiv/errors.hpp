#pragma once

#include <stdexcept>
#include <string>

namespace mekiv {

/// Input arrays disagree on dimension or length.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition on an operation's arguments was violated.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Factorization failed or produced non-finite values.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mekiv
