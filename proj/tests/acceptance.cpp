// Acceptance run: one PASS/FAIL line per criterion, detail lines indented.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <set>
#include <string>

#include "oracles.hpp"
#include "spinmem/cli.hpp"
#include "spinmem/spinmem.hpp"

using namespace spinmem;

namespace {

const double W = angular(10e6);
double mhz(double x) { return angular(x * 1e6); }
double khz(double x) { return angular(x * 1e3); }

struct Report {
    std::ostringstream detail;
    bool ok = true;

    void check(bool cond, const std::string& what) {
        detail << "    " << (cond ? "ok   " : "FAIL ") << what << '\n';
        ok = ok && cond;
    }
};

std::string fmt(double v) { return format_number(v); }

int failures = 0;
std::set<int> only;  // criterion ids from argv; empty runs all

void criterion(int id, const std::string& title, const std::function<void(Report&)>& body) {
    if (!only.empty() && !only.count(id)) return;
    Report r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s (%.1f s)\n", r.ok ? "PASS" : "FAIL", id, title.c_str(), secs);
    std::cout << r.detail.str() << std::flush;
    if (!r.ok) ++failures;
}

std::string run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "spinmem");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(int(argv.size()), argv.data(), out, err);
    if (code != 0) throw std::runtime_error("cli exit " + std::to_string(code) + ": " + err.str());
    return out.str();
}

double rel_to(cplx got, cplx ref, double scale) { return std::abs(got - ref) / std::max(std::abs(ref), scale); }

}  // namespace

int main(int argc, char** argv) {
    for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
    criterion(1, "two-step closed form vs discrete-spin ensemble (N = 2000)", [](Report& r) {
        for (double gm : {0.3, 1.0, 3.0}) {
            for (double kk : {25.0, 250.0}) {
                const double g = mhz(gm), kmin = khz(kk), kmax = mhz(10), dcs = mhz(1000);
                const ExponentialPulse p = make_exponential_pulse(kmax, dcs);
                const double t_end = p.t0 + two_step_duration(g, kmin, W, kmax).second_step;
                const auto tr = simulate_discrete_spins(PulseShape(p), Schedule::from({dcs, kmax, kmin, p.t0}),
                                                        g, Lorentzian{W}, 2000, {t_end});
                const double ref = two_step_ps(g, kmin, W), got = tr.spin_population[0];
                r.check(std::abs(got - ref) < 0.01, "g=" + fmt(gm) + " MHz kappa_min=" + fmt(kk) +
                                                         " kHz: sim " + fmt(got) + " vs " + fmt(ref));
            }
        }
    });

    criterion(2, "kappa_min = 0 gives P_s = 1 exactly", [](Report& r) {
        for (double gm : {0.01, 0.3, 1.0, 10.0})
            for (double wm : {0.1, 10.0, 100.0}) {
                const double ps = two_step_ps(mhz(gm), 0.0, mhz(wm));
                r.check(ps == 1.0, "g=" + fmt(gm) + " w=" + fmt(wm) + ": " + fmt(ps));
            }
    });

    criterion(3, "optimized vs Gaussian at g=350 kHz, kappa=50 kHz, T=20 us", [](Report& r) {
        const double g = khz(350), k = khz(50);
        const double C = cooperativity(g, k, W);
        r.check(std::abs(C - 0.98) < 1e-6, "C = " + fmt(C));
        const BasisSet b{20e-6, 5};
        const auto kc = build_kernel_cache(b, g, W, k);
        const double ps_opt = optimize_pulse(kc).ps;
        const double ps_g = ps_quadratic_form(kc, figure_gaussian_expansion(b, k));
        const double gain = ps_opt - ps_g;
        r.check(std::abs(gain - 0.19) <= 0.03, "P_s(opt) - P_s(Gaussian) = " + fmt(ps_opt) + " - " + fmt(ps_g) +
                                                   " = " + fmt(gain) + " (want 0.19 +- 0.03)");
    });

    criterion(4, "optimal pulse at g=0.5 MHz, T=10 us", [](Report& r) {
        const double g = mhz(0.5);
        const BasisSet b{10e-6, 5};
        const auto res = optimize_kappa(g, W, b);
        const double kopt = per_two_pi(res.kappa) * 1e-6;
        r.check(std::abs(kopt / 0.121 - 1.0) <= 0.1, "kappa_opt/2pi = " + fmt(kopt) + " MHz");
        r.check(std::abs(res.ps - 0.88) <= 0.02, "P_s(opt) = " + fmt(res.ps));
        const auto kc = build_kernel_cache(b, g, W, res.kappa);
        const double ps_g = ps_quadratic_form(kc, figure_gaussian_expansion(b, res.kappa));
        r.check(std::abs(ps_g - 0.78) <= 0.02, "P_s(Gaussian) = " + fmt(ps_g));
        r.check(res.sine.residual < 1e-4, "sine-form residual = " + fmt(res.sine.residual) +
                                              " (offset-free form: " + fmt(res.sine.residual_no_offset) + ")");
    });

    criterion(5, "optimal cooperativity trend", [](Report& r) {
        const auto a = optimize_kappa(mhz(1.0), W, BasisSet{50e-6, 1});
        const double ca = cooperativity(mhz(1.0), a.kappa, W);
        r.check(std::abs(ca - 1.0) <= 0.05, "g=1 MHz, T=50 us: C_opt = " + fmt(ca));
        const auto b = optimize_kappa(khz(350), W, BasisSet{10e-6, 1});
        const double cb = cooperativity(khz(350), b.kappa, W);
        r.check(cb >= 0.55 && cb <= 0.75, "g=350 kHz, T=10 us: C_opt = " + fmt(cb));
    });

    criterion(6, "minimum-duration speedup at P_s = 0.8", [](Report& r) {
        double sum = 0.0;
        for (double gm : {0.2, 0.3, 0.4}) {
            const double g = mhz(gm);
            const double to = min_duration(g, W, 0.8, PulseFamily::optimized, 1e-6, 200e-6, 1).T_min;
            const double tg = min_duration(g, W, 0.8, PulseFamily::gaussian, 1e-6, 200e-6, 1).T_min;
            r.detail << "    g=" << fmt(gm) << " MHz: T_opt " << fmt(to * 1e6) << " us, T_gauss " << fmt(tg * 1e6)
                     << " us, ratio " << fmt(tg / to) << '\n';
            sum += tg / to;
        }
        const double mean = sum / 3.0;
        r.check(std::abs(mean - 1.7) <= 0.3, "mean speedup = " + fmt(mean));
    });

    criterion(7, "protocol durations", [](Report& r) {
        const auto dc = gaussian_duration_check(mhz(0.5), W, mhz(1), khz(50), 0.0);
        r.check(std::abs(dc.min_T * 1e6 - 161.8) <= 0.5, "Gaussian min T = " + fmt(dc.min_T * 1e6) + " us");
        const auto d2 = two_step_duration(mhz(1), mhz(0.5), W, mhz(1));
        r.check(std::abs(d2.total * 1e6 - 3.28) <= 0.05, "two-step T = " + fmt(d2.total * 1e6) + " us");
    });

    criterion(8, "one-step strong-coupling asymptote", [](Report& r) {
        const double g = mhz(10), k = khz(25);
        const double ps = one_step_exp_ps_final(g, k, W), a = k * W / (g * g);
        r.check(std::abs(ps - a) / a < 0.15, "P_s = " + fmt(ps) + ", kappa w/g^2 = " + fmt(a));
    });

    criterion(9, "analytic D/M/N/F vs adaptive quadrature (100 draws)", [](Report& r) {
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto logu = [&](double lo, double hi) { return lo * std::pow(hi / lo, u(rng)); };
        double worst_d = 0.0, worst_m = 0.0, worst_n = 0.0, worst_f = 0.0;
        int poles = 0;
        for (int draw = 0; draw < 100; ++draw) {
            const BasisSet b{logu(1e-6, 50e-6), 5};
            const int j = int(rng() % std::uint64_t(b.dim()));
            const double k = logu(khz(1), mhz(5)), w = logu(mhz(1), mhz(100)), g = logu(mhz(0.01), mhz(10));
            const double u0 = pi * std::max(1, b.harmonic(j)) / b.T;
            double d = (2.0 * u(rng) - 1.0) * 10.0 * u0;
            if (j > 0 && draw % 5 == 0) {
                d = (draw % 10 == 0 ? 1.0 : -1.0) * pi * b.harmonic(j) / b.T;
                ++poles;
            }
            const ExpSum terms = basis_exp_terms(b, j);
            auto fD = [&](double t) { return basis_value(b, j, t) * std::exp(cplx(0.0, -d * (b.T - t))); };
            const cplx D = oracle::gkc_panels(fD, 0.0, b.T, 40);
            const double sD = oracle::gkc_panels([&](double t) { return std::abs(fD(t)); }, 0.0, b.T, 40, 1e-8).real();
            worst_d = std::max({worst_d, rel_to(pulse_D(terms, b.T, d), D, sD), rel_to(D_closed_form(b, j, d), D, sD)});

            const cplx vp = varpi_prime(k, w, g);
            const double gam = -(k + w) / 4.0;
            // e^{gam s} cosh, sinh as two exponentials; the direct product overflows for large w T
            auto up = [&](double s) { return 0.5 * std::exp(gam * s + vp * s / 4.0); };
            auto dn = [&](double s) { return 0.5 * std::exp(gam * s - vp * s / 4.0); };
            auto fM = [&](double s) { return basis_value(b, j, b.T - s) * (up(s) + dn(s)); };
            auto fN = [&](double s) { return basis_value(b, j, b.T - s) * (up(s) - dn(s)); };
            const cplx M = oracle::gkc_panels(fM, 0.0, b.T, 400);
            const cplx N = oracle::gkc_panels(fN, 0.0, b.T, 400);
            const double sM = oracle::gkc_panels([&](double s) { return std::abs(fM(s)); }, 0.0, b.T, 400, 1e-8).real();
            const double sN = oracle::gkc_panels([&](double s) { return std::abs(fN(s)); }, 0.0, b.T, 400, 1e-8).real();
            const auto m = pulse_moments(terms, b.T, k, w, g);
            worst_m = std::max(worst_m, rel_to(m.M, M, sM));
            worst_n = std::max(worst_n, rel_to(m.N, N, sN));

            const int i = int(rng() % std::uint64_t(b.dim()));
            const double Fij = oracle::gk([&](double t) { return basis_value(b, i, t) * basis_value(b, j, t); }, 0.0, b.T);
            worst_f = std::max(worst_f, std::abs(build_F(b)(i, j) - Fij) / b.T);
        }
        r.detail << "    " << poles << " draws at removable points\n";
        r.check(worst_d < 1e-8, "D worst rel. error " + fmt(worst_d));
        r.check(worst_m < 1e-8, "M worst rel. error " + fmt(worst_m));
        r.check(worst_n < 1e-8, "N worst rel. error " + fmt(worst_n));
        r.check(worst_f < 1e-8, "F worst rel. error " + fmt(worst_f));
    });

    criterion(10, "matrix structure and BFGS vs generalized eigenproblem", [](Report& r) {
        double herm = 0.0, psd = INFINITY, gap = 0.0;
        bool f_spd = true;
        for (double gm : {0.1, 0.3, 0.5, 1.0, 3.0}) {
            for (double km : {0.01, 0.05, 0.121, 0.5, 2.0}) {
                const BasisSet b{10e-6, 5};
                const auto kc = build_kernel_cache(b, mhz(gm), W, mhz(km));
                herm = std::max(herm, (kc.P - kc.P.adjoint()).norm() / kc.P.norm());
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(kc.P);
                psd = std::min(psd, es.eigenvalues().minCoeff() / kc.P.norm());
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ef(kc.F);
                f_spd = f_spd && ef.eigenvalues().minCoeff() > 0.0 && (kc.F - kc.F.transpose()).norm() == 0.0;
                gap = std::max(gap, std::abs(optimize_pulse(kc).ps - eigen_optimal(kc).ps_max));
            }
        }
        r.check(herm < 1e-12, "P Hermitian, rel. asymmetry " + fmt(herm));
        r.check(psd >= -1e-10, "P PSD, min eigenvalue / |P| = " + fmt(psd));
        r.check(f_spd, "F symmetric positive definite");
        r.check(gap < 1e-6, "BFGS vs eigen max |dP_s| = " + fmt(gap));
    });

    criterion(11, "basis truncation n_b = 5 vs n_b = 1", [](Report& r) {
        const auto a = optimize_kappa(mhz(0.5), W, BasisSet{10e-6, 1});
        const auto b = optimize_kappa(mhz(0.5), W, BasisSet{10e-6, 5});
        const double d = std::abs(b.ps - a.ps);
        r.check(d < 1e-6, "P_s(5) - P_s(1) = " + fmt(b.ps) + " - " + fmt(a.ps) + " = " + fmt(b.ps - a.ps));
        const auto kc5 = build_kernel_cache(BasisSet{10e-6, 5}, mhz(0.5), W, a.kappa);
        const auto kc1 = build_kernel_cache(BasisSet{10e-6, 1}, mhz(0.5), W, a.kappa);
        r.detail << "    at fixed kappa " << fmt(per_two_pi(a.kappa) * 1e-6) << " MHz: difference "
                 << fmt(eigen_optimal(kc5).ps_max - eigen_optimal(kc1).ps_max) << '\n';
    });

    criterion(12, "Gaussian broadening", [](Report& r) {
        const auto fit = fit_lorentzian_sum(W, 8, 2000);
        const double e = gaussian_fit_error(fit, 3.0);
        r.check(e < 0.01, "M1 = 8 density error on [-3w, 3w] = " + fmt(e) + " of peak");
        double lo = INFINITY, hi = -INFINITY, g_hi = 0.0;
        for (int i = 0; i < 30; ++i) {
            const double gm = 0.1 * std::pow(30.0, i / 29.0);
            const double d = two_step_ps(mhz(gm), khz(25), W) - gaussian_two_step_ps(fit, mhz(gm), khz(25), W);
            lo = std::min(lo, d);
            if (d > hi) {
                hi = d;
                g_hi = gm;
            }
        }
        r.check(lo > 0.0, "min P_s(L) - P_s(G) = " + fmt(lo));
        r.check(hi < 0.1, "max P_s(L) - P_s(G) = " + fmt(hi) + " at g = " + fmt(g_hi) + " MHz");
    });

    criterion(13, "physics invariants", [](Report& r) {
        {
            SimOptions o;
            o.psi_c0 = 1.0;
            o.ode.atol = 1e-13;
            std::vector<double> t;
            for (int k = 0; k <= 50; ++k) t.push_back(2e-6 * k / 50);
            const auto tr = simulate_discrete_spins(std::nullopt, Schedule::constant(0.0), mhz(1), Lorentzian{W}, 200, t, {}, o);
            double e = 0.0;
            for (std::size_t k = 0; k < t.size(); ++k)
                e = std::max(e, std::abs(std::norm(tr.psi_c[k]) + tr.spin_population[k] - 1.0));
            r.check(e < 1e-10, "closed-system norm drift " + fmt(e));
        }
        {
            double e = 0.0;
            for (double gm : {0.3, 1.0, 3.0}) {
                const double g = mhz(gm), k = mhz(2);
                const ExponentialPulse p = make_exponential_pulse(k, mhz(30));
                std::vector<double> t;
                for (int i = 0; i <= 40; ++i) t.push_back(p.t0 * i / 40);
                const auto tr = simulate_kernel_ode(PulseShape(p), Schedule::constant(k, mhz(30)), g, W, t);
                for (std::size_t i = 0; i < t.size(); ++i)
                    e = std::max(e, std::abs(tr.psi_c[i] - cavity_amplitude_first_step(PulseShape(p), t[i], mhz(30), k, W, g)));
                const double kmin = khz(25), t0 = 1e-6;
                SimOptions o;
                o.t_start = t0;
                o.psi_c0 = 1.0;
                std::vector<double> t2;
                for (int i = 0; i <= 200; ++i) t2.push_back(t0 + 40.0 / (kmin + W) * i / 200);
                const auto tr2 = simulate_kernel_ode(std::nullopt, Schedule::constant(kmin), g, W, t2, o);
                for (std::size_t i = 0; i < t2.size(); ++i)
                    e = std::max(e, std::abs(tr2.psi_c[i] - cavity_amplitude_second_step(t2[i], t0, kmin, W, g)));
            }
            r.check(e < 1e-6, "closed-form Psi_c vs kernel ODE max error " + fmt(e));
        }
        {
            const double k = mhz(0.121);
            double e = 0.0;
            const ExponentialPulse ep = make_exponential_pulse(k);
            const double tail = k * std::exp(-k * ep.t0);  // energy delivered before t = 0
            const double e_exp = oracle::gk([&](double t) { return std::norm(pulse_value(PulseShape(ep), t)); }, 0.0, ep.t0);
            e = std::max(e, std::abs(e_exp + tail - k) / k);
            const GaussianPulse gp = make_gaussian_pulse(k, khz(50), 0.0);
            const double half = 12.0 / gp.kappa_g;  // e^-144 beyond
            const double e_g = oracle::gkc_panels([&](double t) { return std::norm(pulse_value(PulseShape(gp), t)); },
                                                  -half, half, 24).real();
            e = std::max(e, std::abs(e_g - k) / k);
            const AnalyticOptimalPulse ap = analytic_optimal_pulse(10e-6, k, W, mhz(0.5));
            const double e_a = oracle::gk([&](double t) { return std::norm(pulse_value(PulseShape(ap), t)); }, 0.0, ap.T);
            e = std::max(e, std::abs(e_a - k) / k);
            const auto opt = optimize_kappa(mhz(0.5), W, BasisSet{10e-6, 5});
            const BasisExpansionPulse bp{10e-6, 5, std::vector<double>(opt.c_opt.data(), opt.c_opt.data() + opt.c_opt.size())};
            const double e_b = oracle::gkc_panels([&](double t) { return std::norm(pulse_value(PulseShape(bp), t)); }, 0.0, bp.T, 10).real();
            e = std::max(e, std::abs(e_b - opt.kappa) / opt.kappa);
            r.detail << "    energies/kappa: exponential (with pre-0 tail) " << fmt((e_exp + tail) / k) << ", Gaussian "
                     << fmt(e_g / k) << ", analytic " << fmt(e_a / k) << ", optimized " << fmt(e_b / opt.kappa) << '\n';
            r.check(e < 1e-10, "pulse energy constraint worst rel. error " + fmt(e));
        }
    });

    criterion(14, "byte-identical reruns", [](Report& r) {
        const std::vector<std::vector<std::string>> cmds{
            {"two-step", "--g-ens-mhz", "1"},
            {"optimize", "--g-ens-mhz", "0.5", "--opt-kappa", "--format", "json"},
            {"simulate", "--mode", "discrete", "--sampling", "iid", "--seed", "11", "--n-spins", "50",
             "--protocol", "one-step", "--kappa-mhz", "1", "--n-times", "21"},
            {"sweep", "--sweep-command", "gaussian-pulse", "--axis", "kappa_mhz:log:0.01:1:5", "--format", "json"}};
        for (const auto& c : cmds) {
            const std::string a = run_cli(c), b = run_cli(c);
            r.check(!a.empty() && a == b, c[0] + ": " + std::to_string(a.size()) + " bytes");
        }
    });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
