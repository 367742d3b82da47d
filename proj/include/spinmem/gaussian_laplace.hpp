#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "spinmem/core_model.hpp"
#include "spinmem/errors.hpp"
#include "spinmem/quadrature.hpp"

namespace spinmem {

enum class FitTarget { gaussian, lorentzian };

struct LorentzianFitOptions {
    double x_max = 4.0;          // fit window [-x_max, x_max] in units of w
    double mass_weight = 100.0;  // weight of the normalisation term
    double b_min = 1e-8;
    int patience = 60;           // consecutive rejected steps before giving up
    FitTarget target = FitTarget::gaussian;
};

// Fit in normalised units: x = D/w, target density scaled to unit peak,
// model sum_i a_i/(b_i + x^2). `cost` is the fitted objective: squared
// residual over the M2 points plus mass_weight * (mass - 1)^2 (mass measured
// in units of the target's).
struct LorentzianSumFit {
    std::vector<double> a, b;
    double w = 0.0;
    double cost = 0.0;
    double density_sse = 0.0;
    double mass = 0.0;  // integral of the fitted density
    double max_density_error = 0.0;  // on the fit window, relative to the peak
    int iterations = 0;
    double gamma = 0.0;  // final learning rate

    LorentzianSum model() const { return {a, b, w}; }
};

namespace detail {

inline double fit_target(FitTarget t, double x) {
    if (t == FitTarget::gaussian) return std::exp(-0.5 * x * x);
    return 1.0 / (std::sqrt(two_pi) * (x * x + 0.25));  // Lorentzian of FWHM w, same scaling
}

struct FitState {
    const std::vector<double>& x;
    const std::vector<double>& y;
    double mu;
    double mass_target = std::sqrt(two_pi);

    double mass(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        double m = 0.0;
        for (Eigen::Index i = 0; i < a.size(); ++i) m += a(i) * pi / std::sqrt(b(i));
        return m;
    }
    double sse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            double m = 0.0;
            for (Eigen::Index i = 0; i < a.size(); ++i) m += a(i) / (b(i) + x[j] * x[j]);
            s += (m - y[j]) * (m - y[j]);
        }
        return s;
    }
    double cost(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        const double dm = mass(a, b) / mass_target - 1.0;
        return sse(a, b) + mu * dm * dm;
    }
    void grad(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& ga,
              Eigen::VectorXd& gb) const {
        const Eigen::Index n = a.size();
        ga.setZero(n);
        gb.setZero(n);
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double x2 = x[j] * x[j];
            double m = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) m += a(i) / (b(i) + x2);
            const double r = 2.0 * (m - y[j]);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double q = 1.0 / (b(i) + x2);
                ga(i) += r * q;
                gb(i) -= r * a(i) * q * q;
            }
        }
        const double dm = mass(a, b) / mass_target - 1.0;
        const double k = 2.0 * mu * dm / mass_target;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sb = std::sqrt(b(i));
            ga(i) += k * pi / sb;
            gb(i) -= k * 0.5 * a(i) * pi / (sb * b(i));
        }
    }
};

}  // namespace detail

// Gradient descent on (a, b) from a least-squares warm start with b fixed on
// a log grid over [1/16, 16]. Step: gamma * 1.05 after an accepted step,
// halved and retried after a rejected one.
inline LorentzianSumFit fit_lorentzian_sum(double w, int m1, int m2, double gamma = 1e-3,
                                           int max_iter = 5000,
                                           const LorentzianFitOptions& opt = {}) {
    detail::require_positive("w", w);
    if (m1 < 1) throw ValidationError("m1", "m1 must be at least 1");
    if (m2 < 2 * m1) throw ValidationError("m2", "m2 must be well above m1");
    if (!(gamma >= 0.0)) throw ValidationError("gamma", "gamma must be non-negative");

    std::vector<double> x(m2), y(m2);
    for (int j = 0; j < m2; ++j) {
        x[j] = -opt.x_max + 2.0 * opt.x_max * j / (m2 - 1);
        y[j] = detail::fit_target(opt.target, x[j]);
    }
    detail::FitState st{x, y, opt.mass_weight};

    Eigen::VectorXd b(m1), a(m1);
    for (int i = 0; i < m1; ++i)
        b(i) = m1 == 1 ? 1.0 : std::pow(16.0, -1.0 + 2.0 * i / double(m1 - 1));
    {
        const double lam = std::sqrt(opt.mass_weight) / st.mass_target;
        Eigen::MatrixXd M(m2 + 1, m1);
        Eigen::VectorXd rhs(m2 + 1);
        for (int j = 0; j < m2; ++j) {
            for (int i = 0; i < m1; ++i) M(j, i) = 1.0 / (b(i) + x[j] * x[j]);
            rhs(j) = y[j];
        }
        for (int i = 0; i < m1; ++i) M(m2, i) = lam * pi / std::sqrt(b(i));
        rhs(m2) = lam * st.mass_target;
        a = M.colPivHouseholderQr().solve(rhs);
    }

    double cost = st.cost(a, b);
    Eigen::VectorXd ga, gb;
    int it = 0, rejected = 0;
    for (; it < max_iter; ++it) {
        st.grad(a, b, ga, gb);
        const Eigen::VectorXd a_new = a - gamma * ga;
        Eigen::VectorXd b_new = b - gamma * gb;
        b_new = b_new.cwiseMax(opt.b_min);
        const double c_new = st.cost(a_new, b_new);
        if (std::isfinite(c_new) && c_new <= cost) {
            a = a_new;
            b = b_new;
            cost = c_new;
            gamma *= 1.05;
            rejected = 0;
        } else {
            gamma *= 0.5;
            if (++rejected > opt.patience)
                throw ConvergenceError("Lorentzian-sum fit diverged; try a smaller gamma");
        }
    }

    LorentzianSumFit fit;
    fit.a.assign(a.data(), a.data() + m1);
    fit.b.assign(b.data(), b.data() + m1);
    fit.w = w;
    fit.cost = cost;
    fit.density_sse = st.sse(a, b);
    fit.mass = st.mass(a, b) / st.mass_target;
    fit.iterations = it;
    fit.gamma = gamma;
    double err = 0.0;
    for (int j = 0; j <= 6000; ++j) {
        const double xx = -opt.x_max + 2.0 * opt.x_max * j / 6000.0;
        double m = 0.0;
        for (int i = 0; i < m1; ++i) m += a(i) / (b(i) + xx * xx);
        err = std::max(err, std::abs(m - detail::fit_target(opt.target, xx)));
    }
    fit.max_density_error = err / detail::fit_target(opt.target, 0.0);
    return fit;
}

// Largest |fit - exact Gaussian| on [-x_max w, x_max w], relative to the peak.
inline double gaussian_fit_error(const LorentzianSumFit& fit, double x_max, int n = 6001) {
    const BroadeningModel m = fit.model();
    const BroadeningModel gexact = Gaussian{fit.w};
    const double peak = density(gexact, 0.0);
    double err = 0.0;
    for (int j = 0; j < n; ++j) {
        const double d = fit.w * (-x_max + 2.0 * x_max * j / (n - 1));
        err = std::max(err, std::abs(density(m, d) - density(gexact, d)));
    }
    return err / peak;
}

struct PoleDecomposition {
    std::vector<cplx> poles;     // rad/s
    std::vector<cplx> residues;  // of 1/P(z), dimensionless
    std::vector<double> coefficients;  // monic polynomial in z/w, ascending powers
    double w = 0.0;

    // Psi_c(tau) = sum_k r_k e^{z_k tau}, tau after the switch.
    cplx psi_c(double tau) const {
        cplx s = 0.0;
        for (std::size_t k = 0; k < poles.size(); ++k) s += residues[k] * std::exp(poles[k] * tau);
        return s;
    }
    // 1/P(z) from the partial fractions.
    cplx inverse_P(cplx z) const {
        cplx s = 0.0;
        for (std::size_t k = 0; k < poles.size(); ++k) s += residues[k] / (z - poles[k]);
        return s;
    }
};

namespace detail {

inline std::vector<double> poly_mul_linear(const std::vector<double>& p, double root_shift) {
    // p(z) * (z + root_shift)
    std::vector<double> q(p.size() + 1, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        q[i] += root_shift * p[i];
        q[i + 1] += p[i];
    }
    return q;
}

inline void poly_eval(const std::vector<double>& c, cplx z, cplx& v, cplx& dv) {
    v = 0.0;
    dv = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) {
        dv = dv * z + v;
        v = v * z + c[i];
    }
}

}  // namespace detail

// Poles of 1/P(z), P(z) = z + kappa/2 + g^2 sum_i c_i/(z + r_i), from the
// monic polynomial Q = P * prod(z + r_i), worked in units of w.
inline PoleDecomposition laplace_poles(const LorentzianSumFit& fit, double g, double kappa,
                                       double w) {
    detail::require_positive("w", w);
    detail::require_nonneg("g_ens", g);
    detail::require_nonneg("kappa", kappa);
    const std::size_t m = fit.a.size();
    std::vector<double> r(m), c(m);
    for (std::size_t i = 0; i < m; ++i) {
        r[i] = std::sqrt(fit.b[i]);
        c[i] = fit.a[i] * std::sqrt(pi / (2.0 * fit.b[i]));
    }
    const double gt2 = (g / w) * (g / w), kt = kappa / w;

    std::vector<double> spect{1.0};  // prod (z + r_i)
    for (double ri : r) spect = detail::poly_mul_linear(spect, ri);
    std::vector<double> Q = detail::poly_mul_linear(spect, 0.5 * kt);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> t{gt2 * c[i]};
        for (std::size_t k = 0; k < m; ++k)
            if (k != i) t = detail::poly_mul_linear(t, r[k]);
        for (std::size_t k = 0; k < t.size(); ++k) Q[k] += t[k];
    }
    const int n = int(Q.size()) - 1;  // degree m + 1, monic

    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < n; ++i) comp(i, n - 1) = -Q[i];
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    if (es.info() != Eigen::Success) throw ConvergenceError("companion eigen-solve failed");

    PoleDecomposition pd;
    pd.coefficients = Q;
    pd.w = w;
    std::vector<cplx> roots(n);
    for (int k = 0; k < n; ++k) {
        cplx z = es.eigenvalues()(k);
        for (int it = 0; it < 3; ++it) {  // Newton polish
            cplx v, dv;
            detail::poly_eval(Q, z, v, dv);
            if (dv == 0.0) break;
            z -= v / dv;
        }
        roots[k] = z;
    }
    std::sort(roots.begin(), roots.end(), [](cplx x, cplx y) {
        return x.real() != y.real() ? x.real() > y.real() : x.imag() > y.imag();
    });
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(roots[i] - roots[j]) < 1e-9 * std::max(1.0, std::abs(roots[i])))
                throw ConvergenceError("degenerate pole");
    for (cplx z : roots) {
        cplx v, dv, num, dnum;
        detail::poly_eval(Q, z, v, dv);
        detail::poly_eval(spect, z, num, dnum);
        pd.poles.push_back(z * w);
        pd.residues.push_back(num / dv);
    }
    return pd;
}

// P(z) for the exact Gaussian kernel, int_0^inf e^{-w^2 t^2/2 - z t} dt by
// quadrature; evaluated at fitted poles it measures how far they are from the
// roots of the erfc form.
inline cplx gaussian_P_exact(cplx z, double g, double kappa, double w,
                             const QuadratureConfig& cfg = {}) {
    const double rz = std::max(0.0, -z.real());
    const double t_max = (rz + std::sqrt(rz * rz + 100.0 * w * w)) / (w * w);
    auto f = [&](double t) { return std::exp(-0.5 * w * w * t * t - z * t); };
    QuadratureConfig c = cfg;
    c.abs_tol = 0.0;
    const cplx K = integrate(f, 0.0, t_max, c).value;
    return z + 0.5 * kappa + g * g * K;
}

// Relative residual of the exact Gaussian P at a pole.
inline double erfc_residual(cplx pole, double g, double kappa, double w,
                            const QuadratureConfig& cfg = {}) {
    const cplx v = gaussian_P_exact(pole, g, kappa, w, cfg);
    return std::abs(v) / (std::abs(pole) + 0.5 * kappa + g * g / w);
}

// Two-step P_s for a Gaussian ensemble: the cavity evolves by the residue sum
// from Psi_c = 1; spins read out long after, weighted with the exact density.
inline double gaussian_two_step_ps(const LorentzianSumFit& fit, double g, double kappa_min,
                                   double w, const QuadratureConfig& cfg = {}) {
    if (g == 0.0) return 0.0;
    const PoleDecomposition pd = laplace_poles(fit, g, kappa_min, w);
    const BroadeningModel gd = Gaussian{w};
    auto integrand = [&](double d) {
        return density(gd, d) * std::norm(pd.inverse_P(cplx(0.0, -d)));
    };
    return g * g * integrate_detuning(integrand, cfg, {kappa_min, w, g}).real();
}

}  // namespace spinmem
