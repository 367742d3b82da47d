#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "spinmem/basis.hpp"
#include "spinmem/errors.hpp"
#include "spinmem/quadrature.hpp"
#include "spinmem/special.hpp"

namespace spinmem {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// Stored rates are angular (rad/s); files and flags carry nu = omega / 2pi.
constexpr double angular(double per_2pi) { return per_2pi * two_pi; }
constexpr double per_two_pi(double omega) { return omega / two_pi; }

// Default "long enough" cutoff: e^-5 counts as zero.
inline constexpr double default_decay_threshold = 5.0;

namespace detail {
inline void require_finite(const char* field, double v) {
    if (!std::isfinite(v)) throw ValidationError(field, std::string(field) + " must be finite");
}
inline void require_nonneg(const char* field, double v) {
    require_finite(field, v);
    if (v < 0.0) throw ValidationError(field, std::string(field) + " must be non-negative");
}
inline void require_positive(const char* field, double v) {
    require_finite(field, v);
    if (!(v > 0.0)) throw ValidationError(field, std::string(field) + " must be positive");
}
}  // namespace detail

// ---------------------------------------------------------------- broadening

struct Lorentzian {
    double w;  // FWHM, rad/s
};

struct Gaussian {
    double w;  // standard deviation, rad/s
};

// p(D) = 1/(sqrt(2 pi) w) * sum_i a_i / (b_i + (D/w)^2). a and b are stored
// in units where D is measured in w, so b_i = b_phys / w^2, a_i = a_phys / w^2.
struct LorentzianSum {
    std::vector<double> a;
    std::vector<double> b;
    double w;
};

using BroadeningModel = std::variant<Lorentzian, Gaussian, LorentzianSum>;

inline double width(const BroadeningModel& m) {
    return std::visit([](const auto& x) { return x.w; }, m);
}

inline void validate(const BroadeningModel& m) {
    detail::require_positive("w", width(m));
    if (auto* s = std::get_if<LorentzianSum>(&m)) {
        if (s->a.empty() || s->a.size() != s->b.size())
            throw ValidationError("broadening", "LorentzianSum needs equal-length, non-empty a and b");
        for (double bi : s->b) detail::require_nonneg("b", bi);
        for (double ai : s->a) detail::require_finite("a", ai);
    }
}

inline double density(const BroadeningModel& m, double delta) {
    struct V {
        double d;
        double operator()(const Lorentzian& l) const {
            const double h = 0.5 * l.w;
            return h / (pi * (d * d + h * h));
        }
        double operator()(const Gaussian& g) const {
            const double x = d / g.w;
            return std::exp(-0.5 * x * x) / (std::sqrt(two_pi) * g.w);
        }
        double operator()(const LorentzianSum& s) const {
            const double x = d / s.w;
            double acc = 0.0;
            for (std::size_t i = 0; i < s.a.size(); ++i) acc += s.a[i] / (s.b[i] + x * x);
            return acc / (std::sqrt(two_pi) * s.w);
        }
    };
    return std::visit(V{delta}, m);
}

inline double lorentzian_density(double w, double delta) { return density(Lorentzian{w}, delta); }

struct EnsembleParams {
    double g_ens = 0.0;
    BroadeningModel broadening = Lorentzian{1.0};

    double w() const { return width(broadening); }
    void validate() const {
        detail::require_nonneg("g_ens", g_ens);
        spinmem::validate(broadening);
    }
};

// ----------------------------------------------------------------- schedule

struct CavitySchedule {
    double delta_cs_first = 0.0;
    double kappa_max = 0.0;
    double kappa_min = 0.0;
    double t0 = 0.0;

    double detuning(double t) const { return t <= t0 ? delta_cs_first : 0.0; }
    double kappa(double t) const { return t <= t0 ? kappa_max : kappa_min; }

    void validate() const {
        detail::require_finite("delta_cs", delta_cs_first);
        detail::require_positive("kappa_max", kappa_max);
        detail::require_positive("kappa_min", kappa_min);
        detail::require_positive("t0", t0);
        if (kappa_max < kappa_min)
            throw ValidationError("kappa_max", "kappa_max must be >= kappa_min");
    }
};

// -------------------------------------------------------------------- pulses

// f(t) = kappa e^{(kappa/2 - i detuning)(t - t0)} for t <= t0, zero after.
struct ExponentialPulse {
    double kappa;
    double t0;
    double detuning = 0.0;
};

// f(t) = sqrt(kappa kappa_g) / pi^(1/4) e^{-kappa_g^2 (t - t0)^2 / 2}.
struct GaussianPulse {
    double kappa;
    double kappa_g;
    double t0;
};

struct AnalyticOptimalPulse {
    double T;
    double kappa;
    double w;
    double g_ens;
    double lambda;  // real, positive; fixes the energy to kappa
};

struct BasisExpansionPulse {
    double T;
    int n_b;
    std::vector<double> c;

    BasisSet basis() const { return {T, n_b}; }
};

using PulseShape =
    std::variant<ExponentialPulse, GaussianPulse, AnalyticOptimalPulse, BasisExpansionPulse>;

// Unnormalised analytic-optimal profile at s = T - t:
//   a - a e^{gs} cosh(v s/4) - b e^{gs} sinh(v s/4),  g = -(kappa + w)/4,
// with the sinh term written through sinhc so v' = 0 needs no special case.
inline cplx analytic_profile(double kappa, double w, double g, double s) {
    const double den = w * kappa + 4.0 * g * g;
    const double a = 2.0 * w / den;
    const double bt = (2.0 * w * (w - kappa) - 16.0 * g * g) / den;  // b * v'
    const cplx vp = std::sqrt(cplx((kappa - w) * (kappa - w) - 16.0 * g * g));
    const double m = -(kappa + w) * s / 4.0;
    const cplx x = vp * s / 4.0;
    if (std::abs(x) < 1.0) return a - std::exp(m) * (a * std::cosh(x) + bt * (s / 4.0) * sinhc(x));
    const cplx ep = std::exp(m + x), em = std::exp(m - x);
    return a - a * 0.5 * (ep + em) - bt * (s / 4.0) * (ep - em) / (2.0 * x);
}

inline cplx pulse_value(const PulseShape& p, double t) {
    struct V {
        double t;
        cplx operator()(const ExponentialPulse& e) const {
            if (t > e.t0) return 0.0;
            return e.kappa * std::exp(cplx(0.5 * e.kappa, -e.detuning) * (t - e.t0));
        }
        cplx operator()(const GaussianPulse& g) const {
            const double x = g.kappa_g * (t - g.t0);
            return std::sqrt(g.kappa * g.kappa_g) / std::pow(pi, 0.25) * std::exp(-0.5 * x * x);
        }
        cplx operator()(const AnalyticOptimalPulse& a) const {
            if (t > a.T) return 0.0;
            return a.lambda * analytic_profile(a.kappa, a.w, a.g_ens, a.T - t);
        }
        cplx operator()(const BasisExpansionPulse& b) const {
            if (t > b.T) return 0.0;
            const BasisSet bs = b.basis();
            double acc = 0.0;
            for (int j = 0; j < bs.dim() && j < int(b.c.size()); ++j)
                acc += b.c[j] * basis_value(bs, j, t);
            return acc;
        }
    };
    return std::visit(V{t}, p);
}

// Right end of the pulse's support (infinity for the Gaussian).
inline double pulse_support_end(const PulseShape& p) {
    struct V {
        double operator()(const ExponentialPulse& e) const { return e.t0; }
        double operator()(const GaussianPulse&) const { return INFINITY; }
        double operator()(const AnalyticOptimalPulse& a) const { return a.T; }
        double operator()(const BasisExpansionPulse& b) const { return b.T; }
    };
    return std::visit(V{}, p);
}

inline double pulse_kappa(const PulseShape& p) {
    return std::visit(
        [](const auto& x) -> double {
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, BasisExpansionPulse>)
                return NAN;
            else
                return x.kappa;
        },
        p);
}

// integral_0^T |f|^2 dt.
inline double pulse_energy(const PulseShape& p, double T, const QuadratureConfig& cfg = {}) {
    if (!(T > 0.0)) return 0.0;
    struct V {
        double T;
        const QuadratureConfig& cfg;
        double operator()(const ExponentialPulse& e) const {
            const double end = std::min(T, e.t0);
            return e.kappa * (std::exp(e.kappa * (end - e.t0)) - std::exp(-e.kappa * e.t0));
        }
        double operator()(const GaussianPulse& g) const {
            return 0.5 * g.kappa * (std::erf(g.kappa_g * (T - g.t0)) + std::erf(g.kappa_g * g.t0));
        }
        double operator()(const AnalyticOptimalPulse& a) const {
            const double end = std::min(T, a.T);
            auto f = [&](double t) {
                return std::norm(analytic_profile(a.kappa, a.w, a.g_ens, a.T - t));
            };
            return a.lambda * a.lambda * integrate(f, 0.0, end, cfg).value.real();
        }
        double operator()(const BasisExpansionPulse& b) const {
            const BasisSet bs = b.basis();
            if (T >= b.T) {
                const Eigen::MatrixXd F = build_F(bs);
                Eigen::VectorXd c = Eigen::VectorXd::Zero(bs.dim());
                for (int j = 0; j < bs.dim() && j < int(b.c.size()); ++j) c(j) = b.c[j];
                return c.dot(F * c);
            }
            const PulseShape self = b;
            auto f = [&](double t) { return std::norm(pulse_value(self, t)); };
            return integrate(f, 0.0, T, cfg).value.real();
        }
    };
    return std::visit(V{T, cfg}, p);
}

// Exponential drive with e^{-kappa t0 / 2} = e^{-threshold}.
inline ExponentialPulse make_exponential_pulse(double kappa, double detuning = 0.0,
                                               double threshold = default_decay_threshold) {
    detail::require_positive("kappa", kappa);
    return {kappa, 2.0 * threshold / kappa, detuning};
}

inline GaussianPulse make_gaussian_pulse(double kappa, double kappa_g, double t0) {
    detail::require_positive("kappa", kappa);
    detail::require_positive("kappa_g", kappa_g);
    detail::require_nonneg("t0", t0);
    return {kappa, kappa_g, t0};
}

// -------------------------------------------------------------- parameters

// Angular-frequency bundle built from /2pi inputs (Hz).
struct ParamBundle {
    double g_ens;
    double w;
    double kappa;
};

inline ParamBundle make_params(double g_ens_over_2pi, double w_over_2pi, double kappa_over_2pi) {
    detail::require_nonneg("g_ens", g_ens_over_2pi);
    detail::require_finite("w", w_over_2pi);
    if (!(w_over_2pi > 0.0)) throw ValidationError("w", "w must be positive");
    detail::require_finite("kappa", kappa_over_2pi);
    if (!(kappa_over_2pi > 0.0)) throw ValidationError("kappa", "kappa must be positive");
    return {angular(g_ens_over_2pi), angular(w_over_2pi), angular(kappa_over_2pi)};
}

}  // namespace spinmem
