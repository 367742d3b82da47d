#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>

#include "spinmem/errors.hpp"

namespace spinmem {

struct OdeOptions {
    double atol = 1e-10;
    double rtol = 0.0;
    double h0 = 0.0;  // first trial step; 0 picks 1e-3 of the span
    std::size_t max_steps = 100'000'000;
};

// Dense output of one accepted step, evaluated on demand from the stage
// derivatives. In theta = (t - t0)/h the interpolant is the quartic
//   y0 + th (r2 + (1 - th)(r3 + th (r4 + (1 - th) r5))).
struct DenseStep {
    double t0;
    double h;
    const Eigen::VectorXcd *y0, *y1, *k1, *k3, *k4, *k5, *k6, *k7;

    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

    // Monomial coefficients p[0..4] of component i.
    std::array<std::complex<double>, 5> coeffs(Eigen::Index i) const {
        const auto a = (*y0)(i);
        const auto ydiff = (*y1)(i) - a;
        const auto bspl = h * (*k1)(i) - ydiff;
        const auto r4 = ydiff - h * (*k7)(i) - bspl;
        const auto r5 = h * (d1 * (*k1)(i) + d3 * (*k3)(i) + d4 * (*k4)(i) + d5 * (*k5)(i) +
                             d6 * (*k6)(i) + d7 * (*k7)(i));
        return {a, ydiff + bspl, -bspl + r4 + r5, -r4 - 2.0 * r5, r5};
    }

    Eigen::VectorXcd at(double t) const {
        const double th = (t - t0) / h, u = 1.0 - th;
        const Eigen::VectorXcd ydiff = *y1 - *y0;
        const Eigen::VectorXcd bspl = h * *k1 - ydiff;
        const Eigen::VectorXcd r4 = ydiff - h * *k7 - bspl;
        const Eigen::VectorXcd r5 =
            h * (d1 * *k1 + d3 * *k3 + d4 * *k4 + d5 * *k5 + d6 * *k6 + d7 * *k7);
        return *y0 + th * (ydiff + u * (bspl + th * (r4 + u * r5)));
    }
};

struct OdeStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evals = 0;
};

// Dormand-Prince 5(4) with Hairer's continuous extension. `rhs(t, y, dy)`
// writes dy; `observer(const DenseStep&)` sees every accepted step. The error
// norm is max_i |e_i| / (atol + rtol max(|y_i|, |y_new_i|)).
template <class Rhs, class Observer>
Eigen::VectorXcd dopri5(Rhs&& rhs, double t0, double t1, Eigen::VectorXcd y,
                        const OdeOptions& opt, Observer&& observer, OdeStats* stats = nullptr) {
    using V = Eigen::VectorXcd;
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                     a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                     a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                     a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                     e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

    if (!(t1 > t0)) return y;
    const Eigen::Index n = y.size();
    V k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), yt(n), yn(n), err(n);
    OdeStats local;
    OdeStats& st = stats ? *stats : local;
    double t = t0;
    double h = opt.h0 > 0.0 ? opt.h0 : 1e-3 * (t1 - t0);
    rhs(t, y, k1);
    ++st.rhs_evals;
    std::size_t steps = 0;
    while (t < t1) {
        if (++steps > opt.max_steps) throw IntegrationError("step budget exhausted");
        bool last = false;
        if (t + h >= t1) {
            h = t1 - t;
            last = true;
        }
        if (h <= 1e-14 * std::max(std::abs(t), std::abs(t1)))
            throw IntegrationError("step size underflow at t = " + std::to_string(t));
        yt = y + h * (a21 * k1);
        rhs(t + c2 * h, yt, k2);
        yt = y + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, yt, k3);
        yt = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, yt, k4);
        yt = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, yt, k5);
        yt = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, yt, k6);
        yn = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        const double t_new = last ? t1 : t + h;
        rhs(t_new, yn, k7);
        st.rhs_evals += 6;
        err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double en = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc = opt.atol + opt.rtol * std::max(std::abs(y(i)), std::abs(yn(i)));
            en = std::max(en, std::abs(err(i)) / sc);
        }
        if (!std::isfinite(en)) throw IntegrationError("non-finite state");
        if (en <= 1.0) {
            const DenseStep ds{t, h, &y, &yn, &k1, &k3, &k4, &k5, &k6, &k7};
            observer(ds);
            y = yn;
            k1 = k7;
            t = t_new;
            ++st.accepted;
            const double fac = en == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(en, -0.2));
            if (!last) h *= fac;
        } else {
            ++st.rejected;
            h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
        }
    }
    return y;
}

}  // namespace spinmem
