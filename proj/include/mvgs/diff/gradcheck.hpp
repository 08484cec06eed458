#pragma once

#include <functional>

#include "mvgs/diff/tape.hpp"

namespace mvgs::diff {

// A scalar function of one array input, rebuilt on a fresh tape per call.
using ScalarFn = std::function<Value(Tape&, const Value&)>;

// Compares the analytic gradient of f at x against central differences.
// Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
// Runs regardless of the global precision mode; call under f64 for meaningful
// tolerances. Throws NumericError when a probe evaluates non-finite.
double check_gradient(const ScalarFn& f, const NDArray& x, double step);

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mvgs::diff
