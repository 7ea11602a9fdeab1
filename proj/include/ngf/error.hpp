#pragma once

#include <stdexcept>
#include <string>

namespace ngf {

// Raised by the numerical kernels when a filter cannot proceed (degenerate
// covariances, divergence, likelihood underflow). Argument and shape errors
// use std::invalid_argument instead.
class FilterError : public std::runtime_error {
public:
    explicit FilterError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace ngf
