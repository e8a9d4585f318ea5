#pragma once

#include <stdexcept>
#include <string>

namespace spinlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct NegativeCoefficient : Error {
    using Error::Error;
};

struct AllZero : Error {
    using Error::Error;
};

struct ResourceLimit : Error {
    using Error::Error;
};

struct UnsupportedDimension : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace spinlab
