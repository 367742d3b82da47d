#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>

#include "spinmem/core_model.hpp"
#include "spinmem/errors.hpp"
#include "spinmem/quadrature.hpp"
#include "spinmem/special.hpp"

namespace spinmem {

// varpi = sqrt((2i D_cs + kappa - w)^2 - 16 g^2), principal branch.
inline cplx varpi(double delta_cs, double kappa, double w, double g) {
    const cplx x{kappa - w, 2.0 * delta_cs};
    return std::sqrt(x * x - 16.0 * g * g);
}

inline cplx varpi_prime(double kappa, double w, double g) { return varpi(0.0, kappa, w, g); }

// Spectral response of a resonant cavity (no cavity detuning) coupled to a
// Lorentzian ensemble. For s = T - t' the spin kernel is
//   h(s) = A e^{gs}cosh(v's/4) + B e^{gs}sinh(v's/4) - A e^{-iDs},  g = -(kappa+w)/4.
struct SpectralCoefficients {
    double kappa, w, g;
    cplx varpi;        // first step, with cavity detuning
    cplx varpi_prime;  // resonant

    cplx denominator(double d) const {
        return cplx(2.0 * d, w) * cplx(2.0 * d, kappa) - 4.0 * g * g;
    }
    cplx A(double d) const { return cplx(-4.0 * d, -2.0 * w) / denominator(d); }
    // B * varpi', finite at varpi' = 0
    cplx B_times_varpi(double d) const {
        return (cplx(-4.0 * d, -2.0 * w) * (w - kappa) + cplx(0.0, 16.0 * g * g)) /
               denominator(d);
    }
    cplx B(double d) const { return B_times_varpi(d) / varpi_prime; }
};

inline SpectralCoefficients spectral_coefficients(double delta_cs, double kappa, double w,
                                                  double g) {
    return {kappa, w, g, varpi(delta_cs, kappa, w, g), varpi_prime(kappa, w, g)};
}

inline double cooperativity(double g, double kappa, double w) {
    return 4.0 * g * g / (kappa * w);
}

inline double two_step_ps(double g, double kappa_min, double w) {
    const double g2 = 4.0 * g * g;
    const double den = (kappa_min + w) * (g2 + kappa_min * w);
    if (den == 0.0) return 0.0;
    return g2 * w / den;
}

struct TwoStepDuration {
    double first_step;
    double second_step;
    double total;
};

// Time to load the cavity (2 thr / kappa_max) plus the slowest second-step
// mode decaying to e^-thr.
inline TwoStepDuration two_step_duration(double g, double kappa_min, double w, double kappa_max,
                                         double threshold = default_decay_threshold) {
    detail::require_positive("kappa_max", kappa_max);
    const double rate = (kappa_min + w - varpi_prime(kappa_min, w, g)).real();
    if (!(rate > 0.0)) throw ConvergenceError("protocol does not converge");
    const double first = 2.0 * threshold / kappa_max;
    const double second = 4.0 * threshold / rate;
    return {first, second, first + second};
}

inline double two_step_decoupling_check(double delta_cs, double kappa, double w, double g) {
    const cplx den{kappa - w, 2.0 * delta_cs};
    if (den == cplx{0.0, 0.0}) throw ValidationError("delta_cs", "decoupling ratio undefined");
    return std::abs(4.0 * g / den);
}

// Cavity response to a unit impulse during the first step.
inline cplx first_step_kernel(double tau, double delta_cs, double kappa, double w, double g) {
    const cplx m = -cplx(kappa + w, 2.0 * delta_cs) / 4.0;
    const cplx v = varpi(delta_cs, kappa, w, g);
    const cplx x = v * tau / 4.0;
    const cplx c = cplx(kappa - w, 2.0 * delta_cs) * (tau / 4.0);
    if (std::abs(x) < 1.0) return std::exp(m * tau) * (std::cosh(x) - c * sinhc(x));
    // split into the two modes so cosh(x) cannot overflow
    const cplx ep = std::exp(m * tau + x), em = std::exp(m * tau - x);
    return 0.5 * (ep + em) - c * (ep - em) / (2.0 * x);
}

inline cplx cavity_amplitude_first_step(const PulseShape& f, double t, double delta_cs,
                                        double kappa, double w, double g,
                                        const QuadratureConfig& cfg = {}) {
    const double end = std::min(t, pulse_support_end(f));
    if (!(end > 0.0)) return 0.0;
    auto integrand = [&](double tp) {
        return pulse_value(f, tp) * first_step_kernel(t - tp, delta_cs, kappa, w, g);
    };
    return integrate(integrand, 0.0, end, cfg).value;
}

// Free second-step evolution from Psi_c(t0) = 1 at resonance.
inline cplx cavity_amplitude_second_step(double t, double t0, double kappa_min, double w,
                                         double g) {
    const double tau = t - t0;
    if (tau < 0.0) throw ValidationError("t", "second step needs t >= t0");
    return first_step_kernel(tau, 0.0, kappa_min, w, g);
}

inline double one_step_exp_cavity_at_t0(double g, double kappa, double w) {
    const double kw = kappa * (kappa + w);
    const double d = 2.0 * g * g + kw;
    return kw * kw / (d * d);
}

inline double one_step_exp_spins_at_t0(double g, double kappa, double w) {
    const double kw = kappa * (kappa + w);
    const double d = 2.0 * g * g + kw;
    return 4.0 * g * g * kw / (d * d);
}

// Excitation left in the spins long after a rising-exponential drive.
inline double one_step_exp_ps_final(double g, double kappa, double w,
                                    const QuadratureConfig& cfg = {}) {
    if (g == 0.0) return 0.0;
    const double g2 = g * g;
    auto integrand = [&](double d) {
        const double d2 = 4.0 * d * d;
        const double q = 4.0 * g2 + kappa * w - d2;
        const double den = (d2 + kappa * kappa) * (d2 * (kappa + w) * (kappa + w) + q * q);
        return lorentzian_density(w, d) * 16.0 * g2 * kappa * kappa * (d2 + w * w) / den;
    };
    return integrate_detuning(integrand, cfg, {kappa, w, g}).real();
}

// Profile fixed by equality in Cauchy-Schwarz at D = 0; lambda from the energy.
inline AnalyticOptimalPulse analytic_optimal_pulse(double T, double kappa, double w, double g,
                                                   const QuadratureConfig& cfg = {}) {
    detail::require_positive("T", T);
    detail::require_positive("kappa", kappa);
    detail::require_positive("w", w);
    detail::require_nonneg("g_ens", g);
    AnalyticOptimalPulse p{T, kappa, w, g, 1.0};
    const double e = pulse_energy(p, T, cfg);
    if (!(e > 0.0)) throw Error("analytic-optimal pulse has zero energy");
    p.lambda = std::sqrt(kappa / e);
    return p;
}

inline double gaussian_pulse_ps(double g, double kappa, double kappa_g, double w,
                                const QuadratureConfig& cfg = {}) {
    if (g == 0.0) return 0.0;
    detail::require_positive("kappa_g", kappa_g);
    const double g2 = g * g;
    auto integrand = [&](double d) {
        const double d2 = 4.0 * d * d;
        const double q = 4.0 * g2 + kappa * w - d2;
        const double spec = 2.0 * kappa * std::sqrt(pi) / kappa_g * std::exp(-d * d / (kappa_g * kappa_g));
        return lorentzian_density(w, d) * spec * 4.0 * g2 * (d2 + w * w) /
               (d2 * (kappa + w) * (kappa + w) + q * q);
    };
    return integrate_detuning(integrand, cfg, {kappa, w, g, kappa_g}).real();
}

struct DurationCheck {
    bool satisfied;
    double min_T;
};

// Validity window for the Gaussian-pulse probability: every cavity mode
// s = kappa + w +- v' must satisfy Re[s (T - t0)/4 - s^2/(32 kappa_g^2)] >= thr,
// together with t0 >= 3/kappa_g and T >= 6/kappa_g.
inline DurationCheck gaussian_duration_check(double kappa, double w, double g, double kappa_g,
                                             double T, std::optional<double> t0 = std::nullopt,
                                             double threshold = default_decay_threshold) {
    detail::require_positive("kappa_g", kappa_g);
    const double t0v = t0.value_or(3.0 / kappa_g);
    const cplx vp = varpi_prime(kappa, w, g);
    double min_T = 6.0 / kappa_g;
    for (double sign : {1.0, -1.0}) {
        const cplx s = kappa + w + sign * vp;
        const double re = s.real();
        if (!(re > 0.0)) return {false, INFINITY};
        const double need = 4.0 * (threshold + (s * s).real() / (32.0 * kappa_g * kappa_g)) / re;
        min_T = std::max(min_T, t0v + need);
    }
    const bool ok = T >= min_T && t0v >= 3.0 / kappa_g * (1.0 - 1e-12);
    return {ok, min_T};
}

}  // namespace spinmem
