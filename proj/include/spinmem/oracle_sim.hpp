#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "spinmem/core_model.hpp"
#include "spinmem/errors.hpp"
#include "spinmem/ode.hpp"
#include "spinmem/quadrature.hpp"
#include "spinmem/special.hpp"

namespace spinmem {

// Piecewise-constant cavity parameters; segment k holds up to t_end.
struct ScheduleSegment {
    double t_end;
    double delta_cs;
    double kappa;
};

struct Schedule {
    std::vector<ScheduleSegment> segments;

    static Schedule constant(double kappa, double delta_cs = 0.0) {
        return {{{INFINITY, delta_cs, kappa}}};
    }
    static Schedule from(const CavitySchedule& cs) {
        return {{{cs.t0, cs.delta_cs_first, cs.kappa_max}, {INFINITY, 0.0, cs.kappa_min}}};
    }

    const ScheduleSegment& at(double t) const {
        for (const auto& s : segments)
            if (t <= s.t_end) return s;
        return segments.back();
    }

    void validate() const {
        if (segments.empty()) throw ValidationError("schedule", "schedule has no segments");
        double prev = -INFINITY;
        for (const auto& s : segments) {
            if (!(s.t_end > prev)) throw ValidationError("schedule", "segment ends must increase");
            detail::require_finite("delta_cs", s.delta_cs);
            detail::require_nonneg("kappa", s.kappa);
            prev = s.t_end;
        }
    }
};

// One accepted step of Psi_c as a quartic in theta = (t - t0)/h.
struct PolySegment {
    double t0;
    double h;
    std::array<cplx, 5> p;

    cplx at(double t) const {
        const double th = std::clamp((t - t0) / h, 0.0, 1.0);
        return p[0] + th * (p[1] + th * (p[2] + th * (p[3] + th * p[4])));
    }
};

struct AmplitudeTrace {
    std::vector<double> times;
    std::vector<cplx> psi_c;
    std::vector<cplx> aux;               // kernel memory S(t); empty for discrete spins
    std::vector<double> spin_population; // sum_i |Psi_s^(i)|^2
    Eigen::MatrixXcd psi_s;              // [n_spins or n_delta] x n_times, when requested
    std::vector<double> detunings;       // rows of psi_s
    std::vector<PolySegment> cavity;     // dense Psi_c over the whole run
    bool norm_accounted = false;         // 1 - |Psi_c|^2 - spins is the external population
    OdeStats stats;

    cplx psi_c_at(double t) const {
        if (cavity.empty()) throw ValidationError("t", "trace has no dense output");
        auto it = std::upper_bound(cavity.begin(), cavity.end(), t,
                                   [](double x, const PolySegment& s) { return x < s.t0; });
        if (it != cavity.begin()) --it;
        return it->at(t);
    }
    std::vector<double> external_population() const {
        std::vector<double> e(times.size());
        if (spin_population.size() != times.size()) return e;
        for (std::size_t k = 0; k < times.size(); ++k)
            e[k] = 1.0 - std::norm(psi_c[k]) - spin_population[k];
        return e;
    }
};

struct SimOptions {
    OdeOptions ode;
    cplx psi_c0 = 0.0;
    double t_start = 0.0;
    std::vector<double> breakpoints;  // extra restart times
    bool store_spins = false;
    std::vector<double> spin_deltas;  // kernel ODE: detunings to reconstruct into psi_s
};

enum class SpinSampling { stratified, iid };

namespace detail {

inline void check_grid(const std::vector<double>& t_grid, double t_start) {
    if (t_grid.empty()) throw ValidationError("t_grid", "t_grid is empty");
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        require_finite("t_grid", t_grid[k]);
        if (t_grid[k] < t_start) throw ValidationError("t_grid", "t_grid starts before t_start");
        if (k && t_grid[k] < t_grid[k - 1]) throw ValidationError("t_grid", "t_grid must be sorted");
    }
}

// Restart points: schedule switches, pulse support end and user extras
// strictly inside (t_start, t_end), bracketed by the two ends.
inline std::vector<double> restart_points(const Schedule& s, const std::optional<PulseShape>& f,
                                          const SimOptions& o, double t_end) {
    std::vector<double> pts{o.t_start, t_end};
    auto add = [&](double t) {
        if (t > o.t_start && t < t_end) pts.push_back(t);
    };
    for (const auto& seg : s.segments) add(seg.t_end);
    if (f) add(pulse_support_end(*f));
    for (double t : o.breakpoints) add(t);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

// Drives dopri5 over the restart intervals; `emit(ds, t, k)` records grid
// point k lying in the step, `dense(ds)` sees every step.
template <class Rhs, class Emit, class Dense>
Eigen::VectorXcd run_piecewise(Rhs&& rhs, const std::vector<double>& pts, Eigen::VectorXcd y,
                               const std::vector<double>& grid, const OdeOptions& opt,
                               Emit&& emit, Dense&& dense, OdeStats& stats) {
    std::size_t idx = 0;
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double a = pts[k], b = pts[k + 1];
        const double mid = 0.5 * (a + b);
        auto r = [&](double t, const Eigen::VectorXcd& x, Eigen::VectorXcd& dx) { rhs(mid, t, x, dx); };
        auto obs = [&](const DenseStep& ds) {
            dense(ds);
            const double end = ds.t0 + ds.h;
            for (; idx < grid.size() && grid[idx] <= end; ++idx) emit(ds, grid[idx], idx);
        };
        y = dopri5(r, a, b, y, opt, obs, &stats);
    }
    return y;
}

// True when the run carries exactly one excitation: a drive of energy kappa
// from an empty start, or an undriven unit cavity amplitude.
inline bool one_excitation(const std::optional<PulseShape>& f, const SimOptions& o) {
    if (!f) return std::abs(std::abs(o.psi_c0) - 1.0) < 1e-12;
    const double k = pulse_kappa(*f);
    if (o.psi_c0 != cplx(0.0) || o.t_start != 0.0 || !(k > 0.0)) return false;
    return std::abs(pulse_energy(*f, pulse_support_end(*f)) / k - 1.0) < 1e-3;
}

}  // namespace detail

inline std::vector<cplx> spin_amplitudes_from_cavity(const AmplitudeTrace& tr, double delta,
                                                     double g);

// Lorentzian memory kernel as the ODE pair
//   dPsi_c = -i D_cs Psi_c - g^2 S + f - kappa Psi_c / 2,  dS = Psi_c - (w/2) S,
// plus dQ = 2 g^2 Re[conj(Psi_c) S], the spin population. f = nullopt means no drive.
inline AmplitudeTrace simulate_kernel_ode(const std::optional<PulseShape>& f,
                                          const Schedule& schedule, double g, double w,
                                          const std::vector<double>& t_grid,
                                          const SimOptions& o = {}) {
    schedule.validate();
    detail::require_nonneg("g_ens", g);
    detail::require_positive("w", w);
    detail::check_grid(t_grid, o.t_start);
    const auto pts = detail::restart_points(schedule, f, o, t_grid.back());
    const double f_end = f ? pulse_support_end(*f) : 0.0;
    const double g2 = g * g;
    const cplx I(0.0, 1.0);

    AmplitudeTrace tr;
    tr.times = t_grid;
    tr.psi_c.resize(t_grid.size());
    tr.aux.resize(t_grid.size());
    tr.spin_population.resize(t_grid.size());

    auto rhs = [&](double mid, double t, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) {
        const ScheduleSegment& s = schedule.at(mid);
        const cplx drive = f && mid < f_end ? pulse_value(*f, t) : cplx(0.0);
        dy(0) = -(I * s.delta_cs + 0.5 * s.kappa) * y(0) - g2 * y(1) + drive;
        dy(1) = y(0) - 0.5 * w * y(1);
        dy(2) = 2.0 * g2 * (std::conj(y(0)) * y(1)).real();
    };
    auto emit = [&](const DenseStep& ds, double t, std::size_t k) {
        const Eigen::VectorXcd v = ds.at(t);
        tr.psi_c[k] = v(0);
        tr.aux[k] = v(1);
        tr.spin_population[k] = v(2).real();
    };
    auto dense = [&](const DenseStep& ds) { tr.cavity.push_back({ds.t0, ds.h, ds.coeffs(0)}); };

    Eigen::VectorXcd y = Eigen::VectorXcd::Zero(3);
    y(0) = o.psi_c0;
    // Grid points at t_start are not inside any step.
    std::size_t k0 = 0;
    while (k0 < t_grid.size() && t_grid[k0] <= o.t_start) {
        tr.psi_c[k0] = o.psi_c0;
        tr.aux[k0] = 0.0;
        tr.spin_population[k0] = 0.0;
        ++k0;
    }
    const std::vector<double> rest(t_grid.begin() + k0, t_grid.end());
    auto emit_off = [&](const DenseStep& ds, double t, std::size_t k) { emit(ds, t, k + k0); };
    detail::run_piecewise(rhs, pts, y, rest, o.ode, emit_off, dense, tr.stats);

    tr.norm_accounted = detail::one_excitation(f, o);
    if (!o.spin_deltas.empty()) {
        tr.detunings = o.spin_deltas;
        tr.psi_s.resize(Eigen::Index(o.spin_deltas.size()), Eigen::Index(t_grid.size()));
        for (std::size_t i = 0; i < o.spin_deltas.size(); ++i) {
            const auto row = spin_amplitudes_from_cavity(tr, o.spin_deltas[i], g);
            for (std::size_t k = 0; k < row.size(); ++k)
                tr.psi_s(Eigen::Index(i), Eigen::Index(k)) = row[k];
        }
    }
    return tr;
}

namespace detail {

// mu_m(a) = int_0^1 e^{a th} th^m d th for m = 0..4.
inline std::array<cplx, 5> exp_moments(cplx a) {
    std::array<cplx, 5> mu{};
    if (std::abs(a) < 1.0) {
        for (int m = 0; m < 5; ++m) {
            cplx term = 1.0, acc = 0.0;
            for (int k = 0; k < 40; ++k) {
                const cplx add = term / double(m + k + 1);
                acc += add;
                if (std::abs(add) < 1e-18 * std::abs(acc)) break;
                term *= a / double(k + 1);
            }
            mu[m] = acc;
        }
        return mu;
    }
    const cplx ea = std::exp(a);
    mu[0] = cexpm1(a) / a;
    for (int m = 1; m < 5; ++m) mu[m] = (ea - double(m) * mu[m - 1]) / a;
    return mu;
}

// int over [s.t0, s.t0 + th_end h] of e^{i delta t'} Psi_c(t') dt'.
inline cplx segment_integral(const PolySegment& s, double delta, double th_end) {
    if (th_end <= 0.0) return 0.0;
    const cplx a(0.0, delta * s.h * th_end);
    const auto mu = exp_moments(a);
    cplx acc = 0.0;
    double thp = th_end;  // th_end^{m+1}
    for (int m = 0; m < 5; ++m) {
        acc += s.p[m] * mu[m] * thp;
        thp *= th_end;
    }
    return std::exp(cplx(0.0, delta * s.t0)) * s.h * acc;
}

}  // namespace detail

// Psi_s(t) = -i g int_0^t e^{-i delta (t - t')} Psi_c(t') dt', exact on the
// quartic dense output, at every trace time.
inline std::vector<cplx> spin_amplitudes_from_cavity(const AmplitudeTrace& tr, double delta,
                                                     double g) {
    std::vector<cplx> out(tr.times.size(), 0.0);
    cplx acc = 0.0;
    std::size_t seg = 0;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
        const double t = tr.times[k];
        while (seg < tr.cavity.size() && tr.cavity[seg].t0 + tr.cavity[seg].h <= t) {
            acc += detail::segment_integral(tr.cavity[seg], delta, 1.0);
            ++seg;
        }
        cplx part = 0.0;
        if (seg < tr.cavity.size() && t > tr.cavity[seg].t0)
            part = detail::segment_integral(tr.cavity[seg], delta,
                                            (t - tr.cavity[seg].t0) / tr.cavity[seg].h);
        out[k] = cplx(0.0, -g) * std::exp(cplx(0.0, -delta * t)) * (acc + part);
    }
    return out;
}

inline cplx spin_amplitude_at(const AmplitudeTrace& tr, double delta, double g, double t) {
    cplx acc = 0.0;
    for (const auto& s : tr.cavity) {
        if (s.t0 >= t) break;
        acc += detail::segment_integral(s, delta, std::min(1.0, (t - s.t0) / s.h));
    }
    return cplx(0.0, -g) * std::exp(cplx(0.0, -delta * t)) * acc;
}

// Ensemble spin population at time t rebuilt from the cavity trace:
// int p(D) |Psi_s(D, t)|^2 dD.
inline double spin_population_from_cavity(const AmplitudeTrace& tr, const BroadeningModel& m,
                                          double g, double t, const QuadratureConfig& cfg = {},
                                          double scale = 0.0) {
    if (g == 0.0) return 0.0;
    auto integrand = [&](double d) { return density(m, d) * std::norm(spin_amplitude_at(tr, d, g, t)); };
    return integrate_detuning(integrand, cfg, {width(m), scale}).real();
}

// --------------------------------------------------------------- sampling

inline double broadening_cdf(const BroadeningModel& m, double d) {
    struct V {
        double d;
        double operator()(const Lorentzian& l) const { return 0.5 + std::atan(2.0 * d / l.w) / pi; }
        double operator()(const Gaussian& g) const { return 0.5 * std::erfc(-d / (g.w * std::sqrt(2.0))); }
        double operator()(const LorentzianSum& s) const {
            const double x = d / s.w;
            double acc = 0.0, tot = 0.0;
            for (std::size_t i = 0; i < s.a.size(); ++i) {
                const double r = std::sqrt(s.b[i]);
                acc += s.a[i] / r * (std::atan(x / r) + 0.5 * pi);
                tot += s.a[i] / r * pi;
            }
            return acc / tot;
        }
    };
    return std::visit(V{d}, m);
}

inline double broadening_quantile(const BroadeningModel& m, double u) {
    if (!(u > 0.0 && u < 1.0)) throw ValidationError("u", "quantile level must lie in (0, 1)");
    if (auto* l = std::get_if<Lorentzian>(&m)) return 0.5 * l->w * std::tan(pi * (u - 0.5));
    if (auto* g = std::get_if<Gaussian>(&m))
        return boost::math::quantile(boost::math::normal(0.0, g->w), u);
    const double w = width(m);
    double lo = -w, hi = w;
    while (broadening_cdf(m, lo) > u) lo *= 2.0;
    while (broadening_cdf(m, hi) < u) hi *= 2.0;
    std::uintmax_t iters = 200;
    auto r = boost::math::tools::toms748_solve([&](double d) { return broadening_cdf(m, d) - u; },
                                               lo, hi, boost::math::tools::eps_tolerance<double>(50),
                                               iters);
    return 0.5 * (r.first + r.second);
}

// Stratified: inverse CDF at the midpoints (k + 1/2)/n. iid: uniform draws
// from a seeded mt19937_64, 53-bit mantissas, offset off the end points.
inline std::vector<double> sample_detunings(const BroadeningModel& m, int n, SpinSampling mode,
                                            std::uint64_t seed = 0) {
    if (n < 1) throw ValidationError("n_spins", "n_spins must be >= 1");
    validate(m);
    std::vector<double> d(static_cast<std::size_t>(n));
    if (mode == SpinSampling::stratified) {
        for (int k = 0; k < n; ++k) d[k] = broadening_quantile(m, (k + 0.5) / n);
        return d;
    }
    std::mt19937_64 rng(seed);
    for (auto& x : d) {
        const double u = double(rng() >> 11) * 0x1.0p-53 + 0x1.0p-54;
        x = broadening_quantile(m, u);
    }
    return d;
}

struct DiscreteSpinOptions {
    SpinSampling sampling = SpinSampling::stratified;
    std::uint64_t seed = 0;
    // Shift every energy, drive included, by the sampled sum_i D_i / 2 (a global phase).
    bool use_sampled_delta_n = false;
    std::vector<double> detunings;  // overrides sampling when non-empty
};

// Brute-force ensemble: dPsi_c = -i D_cs Psi_c - i sum g_i psi_i + f - kappa Psi_c/2,
// dpsi_i = -i D_i psi_i - i g_i Psi_c, with g_i = g / sqrt(n).
inline AmplitudeTrace simulate_discrete_spins(const std::optional<PulseShape>& f,
                                              const Schedule& schedule, double g,
                                              const BroadeningModel& broadening, int n_spins,
                                              const std::vector<double>& t_grid,
                                              const DiscreteSpinOptions& ds_opt = {},
                                              const SimOptions& o = {}) {
    schedule.validate();
    detail::require_nonneg("g_ens", g);
    detail::check_grid(t_grid, o.t_start);
    if (n_spins < 1) throw ValidationError("n_spins", "n_spins must be >= 1");
    std::vector<double> det = ds_opt.detunings;
    if (det.empty()) det = sample_detunings(broadening, n_spins, ds_opt.sampling, ds_opt.seed);
    if (int(det.size()) != n_spins)
        throw ValidationError("detunings", "need exactly n_spins detunings");
    const Eigen::Index n = n_spins;
    const Eigen::ArrayXd dv = Eigen::Map<const Eigen::ArrayXd>(det.data(), n);
    const double gi = g / std::sqrt(double(n_spins));
    double delta_n = 0.0;
    if (ds_opt.use_sampled_delta_n) delta_n = 0.5 * dv.sum();
    const auto pts = detail::restart_points(schedule, f, o, t_grid.back());
    const double f_end = f ? pulse_support_end(*f) : 0.0;
    const cplx I(0.0, 1.0);

    AmplitudeTrace tr;
    tr.times = t_grid;
    tr.detunings = det;
    tr.psi_c.resize(t_grid.size());
    tr.spin_population.resize(t_grid.size());
    if (o.store_spins) tr.psi_s.resize(n, Eigen::Index(t_grid.size()));

    auto rhs = [&](double mid, double t, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) {
        const ScheduleSegment& s = schedule.at(mid);
        // the drive turns with the rest so the shift stays a global phase
        cplx drive = f && mid < f_end ? pulse_value(*f, t) : cplx(0.0);
        if (delta_n != 0.0) drive *= std::exp(-I * delta_n * t);
        const auto psi = y.tail(n).array();
        dy(0) = -(I * (s.delta_cs + delta_n) + 0.5 * s.kappa) * y(0) - I * gi * psi.sum() + drive;
        dy.tail(n).array() = -I * ((dv + delta_n) * psi + gi * y(0));
    };
    auto record = [&](std::size_t k, const Eigen::VectorXcd& v) {
        tr.psi_c[k] = v(0);
        tr.spin_population[k] = v.tail(n).squaredNorm();
        if (o.store_spins) tr.psi_s.col(Eigen::Index(k)) = v.tail(n);
    };
    auto emit = [&](const DenseStep& ds, double t, std::size_t k) { record(k, ds.at(t)); };
    auto dense = [&](const DenseStep& ds) { tr.cavity.push_back({ds.t0, ds.h, ds.coeffs(0)}); };

    Eigen::VectorXcd y = Eigen::VectorXcd::Zero(n + 1);
    y(0) = o.psi_c0;
    std::size_t k0 = 0;
    while (k0 < t_grid.size() && t_grid[k0] <= o.t_start) record(k0++, y);
    const std::vector<double> rest(t_grid.begin() + k0, t_grid.end());
    auto emit_off = [&](const DenseStep& ds, double t, std::size_t k) { emit(ds, t, k + k0); };
    detail::run_piecewise(rhs, pts, y, rest, o.ode, emit_off, dense, tr.stats);
    tr.norm_accounted = detail::one_excitation(f, o);
    return tr;
}

// Free evolution from Psi_c(0) = 1 with the exact Gaussian kernel
// e^{-w^2 s^2 / 2}: dPsi_c = -kappa Psi_c / 2 - g^2 int_0^t K(t - s) Psi_c(s) ds.
// Product trapezoid on n and 2n steps, Richardson-combined on the n-grid.
inline AmplitudeTrace simulate_gaussian_kernel(double g, double kappa, double w, double t_end,
                                               int n_steps = 4000) {
    detail::require_nonneg("g_ens", g);
    detail::require_nonneg("kappa", kappa);
    detail::require_positive("w", w);
    detail::require_positive("t_end", t_end);
    if (n_steps < 2) throw ValidationError("n_steps", "n_steps must be >= 2");
    auto solve = [&](int n) {
        const double h = t_end / n;
        std::vector<double> K(std::size_t(n) + 1);
        for (int k = 0; k <= n; ++k) {
            const double s = w * h * k;
            K[k] = std::exp(-0.5 * s * s);
        }
        std::vector<cplx> y(std::size_t(n) + 1), F(std::size_t(n) + 1);
        const double g2 = g * g;
        y[0] = 1.0;
        F[0] = -0.5 * kappa;
        for (int m = 1; m <= n; ++m) {
            // memory at t_m without the y_m term
            cplx mem = 0.5 * K[m] * y[0];
            for (int j = 1; j < m; ++j) mem += K[m - j] * y[j];
            mem *= h;
            // y_m = y_{m-1} + h/2 (F_{m-1} + F_m), F_m = -kappa/2 y_m - g^2 (mem + h/2 y_m)
            const cplx rhs = y[m - 1] + 0.5 * h * (F[m - 1] - g2 * mem);
            const double diag = 1.0 + 0.5 * h * (0.5 * kappa + 0.5 * h * g2);
            y[m] = rhs / diag;
            F[m] = -0.5 * kappa * y[m] - g2 * (mem + 0.5 * h * y[m]);
        }
        return y;
    };
    const auto coarse = solve(n_steps);
    const auto fine = solve(2 * n_steps);
    AmplitudeTrace tr;
    tr.times.resize(std::size_t(n_steps) + 1);
    tr.psi_c.resize(tr.times.size());
    for (int k = 0; k <= n_steps; ++k) {
        tr.times[k] = t_end * k / n_steps;
        tr.psi_c[k] = (4.0 * fine[2 * k] - coarse[k]) / 3.0;
    }
    tr.norm_accounted = true;
    return tr;
}

}  // namespace spinmem
