#pragma once

#include <cmath>
#include <complex>

namespace spinmem {

using cplx = std::complex<double>;

// e^z - 1 without cancellation near z = 0.
inline cplx cexpm1(cplx z) {
    const double x = z.real(), y = z.imag();
    const double s = std::sin(0.5 * y);
    return {std::expm1(x) * std::cos(y) - 2.0 * s * s, std::exp(x) * std::sin(y)};
}

// (e^z - 1) / z, equal to 1 at z = 0.
inline cplx expm1c(cplx z) {
    if (z == cplx{0.0, 0.0}) return 1.0;
    if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z;
    return cexpm1(z) / z;
}

// sinh(z) / z, equal to 1 at z = 0.
inline cplx sinhc(cplx z) {
    if (std::abs(z) < 0.1) {
        const cplx z2 = z * z;
        cplx term = 1.0, sum = 1.0;
        for (int n = 1; n <= 8; ++n) {
            term *= z2 / double((2 * n) * (2 * n + 1));
            sum += term;
        }
        return sum;
    }
    return std::sinh(z) / z;
}

// Integral of e^{z s} over s in [0, T].
inline cplx exp_primitive(cplx z, double T) { return T * expm1c(z * T); }

// Evaluates an even function of p near p = 0, where its direct formula
// divides by p. Fits f0 + f2 p^2 through samples at h and 2h.
template <class Fn>
auto even_limit(Fn&& f, cplx p, double h) {
    const auto f1 = f(cplx{h, 0.0});
    const auto f2 = f(cplx{2.0 * h, 0.0});
    const auto f0 = (4.0 * f1 - f2) / 3.0;
    return f0 + (f1 - f0) * ((p * p) / (h * h));
}

}  // namespace spinmem
