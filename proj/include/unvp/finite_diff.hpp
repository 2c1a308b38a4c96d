#pragma once

// Central-difference gradient oracle. Deliberately knows nothing about the
// tape: it only re-evaluates a scalar function, so it stays an independent
// check on the reverse-mode path.

#include <cmath>
#include <functional>

#include "unvp/array.hpp"
#include "unvp/error.hpp"

namespace unvp {

// d f / d x, one central difference per coordinate. `f` must be deterministic
// for the probe to mean anything.
inline Array finite_diff_grad(const std::function<double(const Array&)>& f, const Array& x, double h = 1e-5) {
    if (!(h > 0.0)) throw ShapeError("finite_diff_grad: step must be positive");
    Array g(x.shape);
    Array probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = probe.data[i];
        probe.data[i] = saved + h;
        const double fp = f(probe);
        probe.data[i] = saved - h;
        const double fm = f(probe);
        probe.data[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// |a-b| <= abs_tol + rel_tol * max(|a|,|b|)
inline bool close(double a, double b, double rel_tol, double abs_tol = 0.0) {
    return std::abs(a - b) <= abs_tol + rel_tol * std::max(std::abs(a), std::abs(b));
}

} // namespace unvp
