#pragma once

#include <stdexcept>
#include <string>

namespace hfmca {

// Argument shapes or dimensions do not fit together.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf, a factorization failed, or statistics are
// otherwise ill-conditioned.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hfmca
