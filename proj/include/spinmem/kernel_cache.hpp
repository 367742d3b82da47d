#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "spinmem/basis.hpp"
#include "spinmem/closed_form.hpp"
#include "spinmem/core_model.hpp"
#include "spinmem/quadrature.hpp"
#include "spinmem/special.hpp"

namespace spinmem {

// When the spin amplitudes are read out.
//   after_ringdown: long after the drive on [0, T] has ended and the cavity
//                   has emptied (the decaying kernel terms have died out).
//   at_pulse_end:   at t = T, directly after the drive.
enum class Readout { after_ringdown, at_pulse_end };

inline const char* to_string(Readout r) {
    return r == Readout::after_ringdown ? "after_ringdown" : "at_pulse_end";
}

// Detuning-independent time integrals of a pulse sum_k a_k e^{b_k s} against
// the decaying cavity modes:
//   M = int_0^T f e^{gs} cosh(v's/4) ds,   N = int_0^T f e^{gs} sinh(v's/4) ds.
// N/v' is kept separately; it stays finite as v' -> 0.
struct PulseMoments {
    cplx M;
    cplx N;
    cplx N_over_vp;
};

namespace detail {

inline PulseMoments moments_at(const ExpSum& f, double T, double kappa, double w, cplx vp) {
    const double gam = -(kappa + w) / 4.0;
    PulseMoments m{0.0, 0.0, 0.0};
    for (const auto& term : f) {
        const cplx pp = exp_primitive(term.rate + gam + vp / 4.0, T);
        const cplx pm = exp_primitive(term.rate + gam - vp / 4.0, T);
        m.M += term.coeff * 0.5 * (pp + pm);
        m.N += term.coeff * 0.5 * (pp - pm);
    }
    m.N_over_vp = m.N / vp;
    return m;
}

inline double small_vp_scale(double kappa, double w) { return 1e-3 * (kappa + w); }

}  // namespace detail

inline PulseMoments pulse_moments(const ExpSum& f, double T, double kappa, double w, double g) {
    const cplx vp = varpi_prime(kappa, w, g);
    const double h = detail::small_vp_scale(kappa, w);
    if (std::abs(vp) >= h) return detail::moments_at(f, T, kappa, w, vp);
    PulseMoments m = detail::moments_at(f, T, kappa, w, vp == 0.0 ? cplx(h) : vp);
    m.N_over_vp = even_limit(
        [&](cplx p) { return detail::moments_at(f, T, kappa, w, p).N_over_vp; }, vp, h);
    m.M = even_limit([&](cplx p) { return detail::moments_at(f, T, kappa, w, p).M; }, vp, h);
    m.N = m.N_over_vp * vp;
    return m;
}

// D = int_0^T f(t') e^{-iD(T - t')} dt'.
inline cplx pulse_D(const ExpSum& f, double T, double delta) {
    cplx d = 0.0;
    for (const auto& term : f) d += term.coeff * exp_primitive(term.rate - cplx(0.0, delta), T);
    return d;
}

// Spin amplitude (up to a unit-modulus phase, per unit g) left by the drive.
inline cplx response(const PulseMoments& m, cplx D, const SpectralCoefficients& sc, double delta,
                     Readout r) {
    const cplx A = sc.A(delta);
    if (r == Readout::after_ringdown) return -A * D;
    return A * m.M + sc.B_times_varpi(delta) * m.N_over_vp - A * D;
}

struct InnerIntegrals {
    cplx M, N, D;
    cplx I;  // A M + B N - A D
};

inline InnerIntegrals inner_time_integrals(const BasisSet& basis, int j, double kappa, double w,
                                           double g, double delta) {
    const ExpSum f = basis_exp_terms(basis, j);
    const PulseMoments m = pulse_moments(f, basis.T, kappa, w, g);
    const cplx D = pulse_D(f, basis.T, delta);
    const auto sc = spectral_coefficients(0.0, kappa, w, g);
    return {m.M, m.N, D, response(m, D, sc, delta, Readout::at_pulse_end)};
}

// Case formulas for D_j, with the removable points D = +-pi j/T replaced by
// their limits. Kept as an independent cross-check of pulse_D.
inline cplx D_closed_form(const BasisSet& basis, int j, double delta) {
    basis.check_index(j);
    const double T = basis.T;
    const cplx e = std::exp(cplx(0.0, -delta * T));
    if (j == 0) {
        if (delta == 0.0) return T;
        return (1.0 - e) / cplx(0.0, delta);
    }
    const int m = basis.harmonic(j);
    const double sgn = (m % 2 == 0) ? 1.0 : -1.0;
    const double u = pi * m / T;
    const double den = pi * pi * m * m - T * T * delta * delta;
    const bool at_pole = std::abs(std::abs(delta) - u) <= 1e-14 * u;
    if (basis.is_cos(j)) {
        if (at_pole) return sgn * T / 2.0;
        return cplx(0.0, delta * T * T) * (sgn - e) / den;
    }
    if (at_pole) return cplx(0.0, (delta > 0 ? 1.0 : -1.0) * sgn * T / 2.0);
    return pi * m * T * (sgn - e) / (-den);
}

struct QuadDiagnostics {
    std::size_t evaluations = 0;
    std::size_t panels = 0;
    double error = 0.0;
};

struct KernelCache {
    BasisSet basis;
    double g_ens = 0.0, w = 0.0, kappa = 0.0;
    Readout readout = Readout::after_ringdown;
    Eigen::MatrixXcd P;
    Eigen::MatrixXd F;
    QuadDiagnostics diagnostics;

    int dim() const { return basis.dim(); }
};

// P_ij = g^2 int p(D) I_i(D) conj(I_j(D)) dD over +-delta_max, Lorentzian p.
// The upper triangle is integrated as one vector on a shared adaptive mesh;
// the lower triangle is mirrored.
inline KernelCache build_kernel_cache(const BasisSet& basis, double g, double w, double kappa,
                                      const QuadratureConfig& cfg = {},
                                      Readout readout = Readout::after_ringdown) {
    basis.validate();
    cfg.validate();
    detail::require_nonneg("g_ens", g);
    detail::require_positive("w", w);
    detail::require_positive("kappa", kappa);
    KernelCache kc;
    kc.basis = basis;
    kc.g_ens = g;
    kc.w = w;
    kc.kappa = kappa;
    kc.readout = readout;
    kc.F = build_F(basis);
    const int n = basis.dim();
    kc.P = Eigen::MatrixXcd::Zero(n, n);
    if (g == 0.0) return kc;

    std::vector<ExpSum> terms(n);
    std::vector<PulseMoments> mom(n);
    for (int j = 0; j < n; ++j) {
        terms[j] = basis_exp_terms(basis, j);
        mom[j] = pulse_moments(terms[j], basis.T, kappa, w, g);
    }
    const auto sc = spectral_coefficients(0.0, kappa, w, g);
    std::vector<std::pair<int, int>> idx;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) idx.emplace_back(i, j);

    std::vector<cplx> I(n);
    auto integrand = [&](double d) {
        for (int j = 0; j < n; ++j)
            I[j] = response(mom[j], pulse_D(terms[j], basis.T, d), sc, d, readout);
        const double p = lorentzian_density(w, d);
        Eigen::VectorXcd v(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k)
            v(k) = p * I[idx[k].first] * std::conj(I[idx[k].second]);
        return v;
    };
    QuadResult<Eigen::VectorXcd> res;
    try {
        res = integrate_panels<Eigen::VectorXcd>(
            integrand, detuning_breakpoints(cfg.delta_max, {kappa, w, g, pi / basis.T}), cfg);
    } catch (const QuadratureError& e) {
        std::string msg = e.what();
        const auto pos = msg.rfind("worst component ");
        if (pos != std::string::npos) {
            const std::size_t k = std::stoul(msg.substr(pos + 16));
            if (k < idx.size())
                msg += " = P(" + std::to_string(idx[k].first) + "," +
                       std::to_string(idx[k].second) + ")";
        }
        throw QuadratureError("build_P: " + msg, e.best_estimate(), e.error_bound());
    }
    const double g2 = g * g;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto [i, j] = idx[k];
        kc.P(i, j) = g2 * res.value(k);
        kc.P(j, i) = std::conj(kc.P(i, j));
    }
    for (int i = 0; i < n; ++i) kc.P(i, i) = kc.P(i, i).real();
    kc.diagnostics = {res.evaluations, res.panels, g2 * res.error};
    return kc;
}

inline double energy(const KernelCache& kc, const Eigen::VectorXd& c) { return c.dot(kc.F * c); }

// c^T Re(P) c after rescaling c onto the energy constraint c^T F c = kappa.
inline double ps_quadratic_form(const KernelCache& kc, const Eigen::VectorXd& c) {
    if (c.size() != kc.dim()) throw ValidationError("c", "coefficient length does not match basis");
    const double e = energy(kc, c);
    if (!(e > 0.0)) throw ValidationError("c", "zero-energy pulse");
    return kc.kappa * c.dot(kc.P.real() * c) / e;
}

// P_s of a basis pulse by a single detuning integral of |sum_j c_j I_j|^2,
// without assembling P.
inline double ps_for_coefficients(const BasisSet& basis, const Eigen::VectorXd& c, double g,
                                  double w, double kappa, const QuadratureConfig& cfg = {},
                                  Readout readout = Readout::after_ringdown) {
    if (c.size() != basis.dim()) throw ValidationError("c", "coefficient length does not match basis");
    const double e = c.dot(build_F(basis) * c);
    if (!(e > 0.0)) throw ValidationError("c", "zero-energy pulse");
    if (g == 0.0) return 0.0;
    ExpSum f;
    for (int j = 0; j < basis.dim(); ++j)
        for (const auto& t : basis_exp_terms(basis, j)) f.push_back({c(j) * t.coeff, t.rate});
    const PulseMoments m = pulse_moments(f, basis.T, kappa, w, g);
    const auto sc = spectral_coefficients(0.0, kappa, w, g);
    auto integrand = [&](double d) {
        return lorentzian_density(w, d) * std::norm(response(m, pulse_D(f, basis.T, d), sc, d, readout));
    };
    const double v =
        integrate_detuning(integrand, cfg, {kappa, w, g, pi / basis.T}).real();
    return g * g * v * kappa / e;
}

// Analytic-optimal pulse as an exponential sum in s = T - t, for a given v'.
inline ExpSum analytic_pulse_terms(const AnalyticOptimalPulse& p, cplx vp) {
    const double den = p.w * p.kappa + 4.0 * p.g_ens * p.g_ens;
    const double a = 2.0 * p.w / den;
    const cplx b = (2.0 * p.w * (p.w - p.kappa) - 16.0 * p.g_ens * p.g_ens) / den / vp;
    const double gam = -(p.kappa + p.w) / 4.0;
    const cplx rp = gam + vp / 4.0, rm = gam - vp / 4.0;
    return {{p.lambda * a, 0.0},
            {p.lambda * (-0.5 * a - 0.5 * b), rp},
            {p.lambda * (-0.5 * a + 0.5 * b), rm}};
}

inline double ps_analytic_pulse(const AnalyticOptimalPulse& p, const QuadratureConfig& cfg = {},
                                Readout readout = Readout::after_ringdown) {
    if (p.g_ens == 0.0) return 0.0;
    const cplx vp = varpi_prime(p.kappa, p.w, p.g_ens);
    const double h = detail::small_vp_scale(p.kappa, p.w);
    const auto sc = spectral_coefficients(0.0, p.kappa, p.w, p.g_ens);
    auto amp = [&](double d, cplx v) {
        const ExpSum f = analytic_pulse_terms(p, v);
        const PulseMoments m = detail::moments_at(f, p.T, p.kappa, p.w, v);
        return response(m, pulse_D(f, p.T, d), sc, d, readout);
    };
    auto integrand = [&](double d) {
        const cplx r = std::abs(vp) >= h ? amp(d, vp)
                                         : even_limit([&](cplx v) { return amp(d, v); }, vp, h);
        return lorentzian_density(p.w, d) * std::norm(r);
    };
    const double v =
        integrate_detuning(integrand, cfg, {p.kappa, p.w, p.g_ens, pi / p.T}).real();
    return p.g_ens * p.g_ens * v;
}

// Coefficients of the Gaussian drive (kappa, kappa_g, t0) projected onto the
// basis: c = F^-1 b with b_j = int_0^T f_j f_gauss dt.
inline Eigen::VectorXd gaussian_expansion(const BasisSet& basis, double kappa, double kappa_g,
                                          double t0, const QuadratureConfig& cfg = {}) {
    basis.validate();
    const PulseShape gp = make_gaussian_pulse(kappa, kappa_g, t0);
    Eigen::VectorXd b(basis.dim());
    for (int j = 0; j < basis.dim(); ++j) {
        auto f = [&](double t) { return basis_value(basis, j, t) * pulse_value(gp, t).real(); };
        b(j) = integrate(f, 0.0, basis.T, cfg).value.real();
    }
    return build_F(basis).ldlt().solve(b);
}

// Gaussian convention used by the pulse-comparison figures: kappa_g = 2pi/T,
// centred at T/2.
inline Eigen::VectorXd figure_gaussian_expansion(const BasisSet& basis, double kappa,
                                                 const QuadratureConfig& cfg = {}) {
    return gaussian_expansion(basis, kappa, two_pi / basis.T, basis.T / 2.0, cfg);
}

// Memo of caches keyed by the exact bytes of every input that affects P.
class KernelCacheStore {
public:
    std::shared_ptr<const KernelCache> get(const BasisSet& basis, double g, double w, double kappa,
                                           const QuadratureConfig& cfg, Readout r) {
        const std::string key = make_key(basis, g, w, kappa, cfg, r);
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = map_.find(key);
            if (it != map_.end()) return it->second;
        }
        auto kc = std::make_shared<const KernelCache>(build_kernel_cache(basis, g, w, kappa, cfg, r));
        std::lock_guard<std::mutex> lock(mu_);
        return map_.emplace(key, kc).first->second;
    }
    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return map_.size();
    }

private:
    static std::string make_key(const BasisSet& basis, double g, double w, double kappa,
                                const QuadratureConfig& cfg, Readout r) {
        const double vals[] = {basis.T, g, w, kappa, cfg.rel_tol, cfg.abs_tol, cfg.delta_max};
        std::string key(sizeof vals, '\0');
        std::memcpy(key.data(), vals, sizeof vals);
        key += std::to_string(basis.n_b) + ":" + std::to_string(int(r)) + ":" +
               std::to_string(cfg.max_subdivisions);
        return key;
    }
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const KernelCache>> map_;
};

}  // namespace spinmem
