#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "stvfm/error.hpp"
#include "stvfm/tensor.hpp"

// Central-difference gradient verification, always in double precision.
// The callable is evaluated twice per coordinate at x +- h and once under a
// tape for the analytic gradient; it must be a pure function of its input.

namespace stvfm {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double ad_at_worst = 0.0;
    double fd_at_worst = 0.0;
};

inline double grad_rel_err(double ad, double fd) {
    return std::fabs(ad - fd) / std::max(1e-8, std::fabs(ad) + std::fabs(fd));
}

inline GradCheckReport finite_diff_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f, const Shape& shape,
    const std::vector<double>& x, double h = 1e-4) {
    if (x.size() != numel(shape)) fail(ErrorCode::ShapeMismatch, "finite_diff_check: data does not match shape");

    Tape<double> tape;
    Tensor<double> xt = tape.leaf(shape, x, true);
    Tensor<double> y = f(xt);
    if (y.numel() != 1) fail(ErrorCode::ShapeMismatch, "finite_diff_check: callable must return a scalar");
    tape.backward(y);
    std::vector<double> g_ad = tape.grad(xt);

    GradCheckReport rep;
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double yp = f(Tensor<double>(shape, xp)).item();
        const double ym = f(Tensor<double>(shape, xm)).item();
        if (!std::isfinite(yp) || !std::isfinite(ym))
            fail(ErrorCode::Numeric, "finite_diff_check: non-finite value at perturbed point");
        const double fd = (yp - ym) / (2.0 * h);
        const double err = grad_rel_err(g_ad[i], fd);
        if (err > rep.max_rel_err) {
            rep.max_rel_err = err;
            rep.worst_index = i;
            rep.ad_at_worst = g_ad[i];
            rep.fd_at_worst = fd;
        }
    }
    return rep;
}

} // namespace stvfm
