#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/toms748_solve.hpp>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spinmem/bfgs.hpp"
#include "spinmem/kernel_cache.hpp"

namespace spinmem {

struct SineFit {
    double A = 0.0;       // amplitude of sin(pi t/T + phi), >= 0
    double phi = 0.0;     // rad
    double offset = 0.0;  // constant added to the sine
    double residual = 0.0;            // relative L2 misfit over [0, T]
    double residual_no_offset = 0.0;  // same, for the offset-free form
};

struct OptimizationResult {
    Eigen::VectorXd c_opt;
    double ps = 0.0;
    double kappa = 0.0;  // kappa used (optimised or given), rad/s
    bool kappa_optimized = false;
    bool kappa_at_bound = false;
    SineFit sine;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
    double eigen_ps = NAN;  // generalized-eigenvalue cross-check
    int outer_evaluations = 0;
};

// Fixes the sign ambiguity c ~ -c: the pulse has non-negative area.
inline void canonical_sign(const BasisSet& basis, Eigen::VectorXd& c) {
    const Eigen::MatrixXd F = build_F(basis);
    const double area = F.row(0).dot(c);  // int_0^T f dt
    if (area < 0.0 || (area == 0.0 && c.size() && c(c.size() - 1) < 0.0)) c = -c;
}

// Least-squares fit of offset + A sin(pi t/T + phi) to sum_j c_j f_j in L2[0,T].
// The three fitting functions are basis members, so the projection is a 3x3
// Gram solve and the residual is computed in coefficient space.
inline SineFit fit_sine_form(const Eigen::VectorXd& c, const BasisSet& basis) {
    const Eigen::MatrixXd F = build_F(basis);
    const double norm2 = c.dot(F * c);
    SineFit fit;
    if (!(norm2 > 0.0)) return fit;
    auto project = [&](const std::vector<int>& S, Eigen::VectorXd& coef) {
        const Eigen::Index m = Eigen::Index(S.size());
        Eigen::MatrixXd G(m, m);
        Eigen::VectorXd rhs(m);
        for (Eigen::Index a = 0; a < m; ++a) {
            rhs(a) = F.row(S[a]).dot(c);
            for (Eigen::Index b = 0; b < m; ++b) G(a, b) = F(S[a], S[b]);
        }
        coef = G.ldlt().solve(rhs);
        Eigen::VectorXd r = c;
        for (Eigen::Index a = 0; a < m; ++a) r(S[a]) -= coef(a);
        return std::sqrt(std::max(0.0, r.dot(F * r)) / norm2);
    };
    if (basis.n_b == 0) {
        Eigen::VectorXd x;
        fit.residual = project({0}, x);
        fit.offset = x(0);
        fit.residual_no_offset = 1.0;
        return fit;
    }
    const int jc = 1, js = basis.n_b + 1;
    Eigen::VectorXd x;
    fit.residual = project({0, jc, js}, x);
    fit.offset = x(0);
    // A cos(phi) multiplies sin, A sin(phi) multiplies cos
    fit.A = std::hypot(x(1), x(2));
    fit.phi = std::atan2(x(1), x(2));
    Eigen::VectorXd y;
    fit.residual_no_offset = project({jc, js}, y);
    return fit;
}

namespace detail {

// Rayleigh quotient kappa c'Rc / c'Fc in units where F ~ 1.
struct QuotientObjective {
    Eigen::MatrixXd R, F;
    double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
        const Eigen::VectorXd Rx = R * x, Fx = F * x;
        const double num = x.dot(Rx), den = x.dot(Fx);
        if (!(den > 0.0)) {
            grad.setZero(x.size());
            return INFINITY;
        }
        grad = -2.0 * (Rx * den - num * Fx) / (den * den);
        return -num / den;
    }
};

inline QuotientObjective make_objective(const KernelCache& kc) {
    const double T = kc.basis.T;
    return {kc.kappa * kc.P.real() / T, kc.F / T};
}

}  // namespace detail

// Gradient of c -> ps_quadratic_form(c) (quotient rule), exposed for checks.
inline Eigen::VectorXd ps_gradient(const KernelCache& kc, const Eigen::VectorXd& c) {
    const Eigen::MatrixXd R = kc.P.real();
    const double num = c.dot(R * c), den = c.dot(kc.F * c);
    return 2.0 * kc.kappa * (R * c * den - num * (kc.F * c)) / (den * den);
}

inline Eigen::VectorXd normalize_to_energy(const KernelCache& kc, Eigen::VectorXd c) {
    const double e = energy(kc, c);
    if (!(e > 0.0)) throw ValidationError("c", "zero-energy pulse");
    c *= std::sqrt(kc.kappa / e);
    canonical_sign(kc.basis, c);
    return c;
}

inline OptimizationResult optimize_pulse(const KernelCache& kc,
                                         std::optional<Eigen::VectorXd> c0 = std::nullopt,
                                         const BfgsOptions& opt = {}) {
    Eigen::VectorXd x;
    if (c0 && c0->size() == kc.dim() && energy(kc, *c0) > 0.0) {
        x = *c0 / std::sqrt(energy(kc, *c0) / kc.basis.T);
    } else {
        x = Eigen::VectorXd::Zero(kc.dim());
        x(0) = 1.0;
    }
    const auto obj = detail::make_objective(kc);
    BfgsResult br = bfgs_minimize(obj, x, opt);
    OptimizationResult r;
    r.c_opt = normalize_to_energy(kc, br.x);
    r.ps = ps_quadratic_form(kc, r.c_opt);
    r.kappa = kc.kappa;
    r.sine = fit_sine_form(r.c_opt, kc.basis);
    r.iterations = br.iterations;
    r.gradient_norm = br.grad_norm;
    r.converged = br.converged;
    return r;
}

struct EigenOptimum {
    double ps_max;
    Eigen::VectorXd c;
};

// Re(P) c = lambda F c; the constrained maximum is kappa * lambda_max.
inline EigenOptimum eigen_optimal(const KernelCache& kc) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(kc.P.real(), kc.F);
    if (es.info() != Eigen::Success) throw ConvergenceError("generalized eigen-solve failed");
    const Eigen::Index top = kc.dim() - 1;  // eigenvalues ascend
    Eigen::VectorXd c = es.eigenvectors().col(top);
    return {kc.kappa * es.eigenvalues()(top), normalize_to_energy(kc, c)};
}

struct LineMax {
    double x = NAN;
    double f = -INFINITY;
    bool at_bound = false;
    int evaluations = 0;
};

// Maximises fn over [lo, hi] on a log scale: a log-spaced scan locates the
// best cell, Brent's method polishes inside the neighbouring cells.
inline LineMax maximize_log(const std::function<double(double)>& fn, double lo, double hi,
                            int n_grid = 25, int bits = 40) {
    if (!(lo > 0.0) || !(hi > lo)) throw ValidationError("bounds", "need 0 < lo < hi");
    LineMax r;
    const double ul = std::log(lo), uh = std::log(hi);
    std::vector<double> us(n_grid), fs(n_grid);
    int best = 0;
    for (int i = 0; i < n_grid; ++i) {
        us[i] = ul + (uh - ul) * i / (n_grid - 1);
        fs[i] = fn(std::exp(us[i]));
        ++r.evaluations;
        if (fs[i] > fs[best]) best = i;
    }
    const double a = us[std::max(best - 1, 0)], b = us[std::min(best + 1, n_grid - 1)];
    std::uintmax_t iters = 200;
    auto neg = [&](double u) {
        ++r.evaluations;
        return -fn(std::exp(u));
    };
    const auto [u, fneg] = boost::math::tools::brent_find_minima(neg, a, b, bits, iters);
    r.x = std::exp(u);
    r.f = -fneg;
    if (fs[best] > r.f) {
        r.x = std::exp(us[best]);
        r.f = fs[best];
    }
    const double span = (uh - ul) / (n_grid - 1);
    r.at_bound = (std::log(r.x) - ul) < 1e-3 * span || (uh - std::log(r.x)) < 1e-3 * span;
    return r;
}

struct KappaSearch {
    double kappa_lo = two_pi * 1e3;  // rad/s
    double kappa_hi = two_pi * 5e6;
    int n_grid = 25;
};

// Outer maximisation over kappa of the inner BFGS optimum. The inner run is
// warm-started from the previous optimum.
inline OptimizationResult optimize_kappa(double g, double w, const BasisSet& basis,
                                         const KappaSearch& ks = {},
                                         const QuadratureConfig& cfg = {},
                                         Readout readout = Readout::after_ringdown,
                                         const BfgsOptions& opt = {},
                                         KernelCacheStore* store = nullptr) {
    KernelCacheStore local;
    KernelCacheStore& st = store ? *store : local;
    std::optional<Eigen::VectorXd> warm;
    auto inner = [&](double kappa) {
        auto kc = st.get(basis, g, w, kappa, cfg, readout);
        OptimizationResult r = optimize_pulse(*kc, warm, opt);
        warm = r.c_opt;
        return r.ps;
    };
    const LineMax lm = maximize_log(inner, ks.kappa_lo, ks.kappa_hi, ks.n_grid);
    auto kc = st.get(basis, g, w, lm.x, cfg, readout);
    OptimizationResult r = optimize_pulse(*kc, warm, opt);
    r.kappa_optimized = true;
    r.kappa_at_bound = lm.at_bound;
    r.eigen_ps = eigen_optimal(*kc).ps_max;
    r.outer_evaluations = lm.evaluations;
    return r;
}

enum class PulseFamily { optimized, gaussian };

inline const char* to_string(PulseFamily p) {
    return p == PulseFamily::optimized ? "optimized" : "gaussian";
}

// Best P_s reachable at duration T with kappa free: the optimised basis pulse
// (n_b from `basis`) or the figure-convention Gaussian expanded in n_b = 5.
inline LineMax best_ps_at(PulseFamily fam, double g, double w, double T, int n_b,
                          const KappaSearch& ks, const QuadratureConfig& cfg, Readout readout) {
    if (fam == PulseFamily::optimized) {
        const BasisSet basis{T, n_b};
        const auto r = optimize_kappa(g, w, basis, ks, cfg, readout);
        LineMax lm;
        lm.x = r.kappa;
        lm.f = r.ps;
        lm.at_bound = r.kappa_at_bound;
        lm.evaluations = r.outer_evaluations;
        return lm;
    }
    const BasisSet basis{T, 5};
    const Eigen::VectorXd c = figure_gaussian_expansion(basis, 1.0, cfg);
    auto fn = [&](double kappa) { return ps_for_coefficients(basis, c, g, w, kappa, cfg, readout); };
    return maximize_log(fn, ks.kappa_lo, ks.kappa_hi, ks.n_grid);
}

struct MinDurationResult {
    double T_min = NAN;
    double residual = NAN;  // ps(T_min) - target
    double ps_lo = NAN, ps_hi = NAN;
    int iterations = 0;
};

// Smallest T with best_ps(T) = target, by bracketed root finding (TOMS 748)
// on [T_lo, T_hi].
inline MinDurationResult min_duration(double g, double w, double ps_target, PulseFamily fam,
                                      double T_lo, double T_hi, int n_b = 1,
                                      const KappaSearch& ks = {}, const QuadratureConfig& cfg = {},
                                      Readout readout = Readout::after_ringdown,
                                      double rel_tol_T = 1e-7) {
    if (!(T_lo > 0.0) || !(T_hi > T_lo)) throw ValidationError("T_bounds", "need 0 < T_lo < T_hi");
    if (!(ps_target < 1.0)) throw ValidationError("ps_target", "ps_target must be below 1");
    MinDurationResult res;
    if (ps_target <= 0.0) {
        res.T_min = T_lo;
        res.residual = 0.0;
        return res;
    }
    auto dp = [&](double T) { return best_ps_at(fam, g, w, T, n_b, ks, cfg, readout).f - ps_target; };
    const double f_lo = dp(T_lo), f_hi = dp(T_hi);
    res.ps_lo = f_lo + ps_target;
    res.ps_hi = f_hi + ps_target;
    if (f_hi < 0.0) throw ConvergenceError("target unreachable in bounds");
    if (f_lo >= 0.0) {
        res.T_min = T_lo;
        res.residual = f_lo;
        return res;
    }
    if (!(f_hi > f_lo)) throw ConvergenceError("non-monotone bracket");
    std::uintmax_t iters = 100;
    auto tol = [&](double a, double b) { return std::abs(b - a) <= rel_tol_T * std::min(a, b); };
    const auto [a, b] = boost::math::tools::toms748_solve(dp, T_lo, T_hi, f_lo, f_hi, tol, iters);
    res.T_min = 0.5 * (a + b);
    res.residual = dp(res.T_min);
    res.iterations = int(iters);
    return res;
}

}  // namespace spinmem
