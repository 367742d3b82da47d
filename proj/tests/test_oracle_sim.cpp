#include <gtest/gtest.h>

#include "spinmem/closed_form.hpp"
#include "spinmem/oracle_sim.hpp"

using namespace spinmem;

namespace {
const double W = angular(10e6);

std::vector<double> grid(double a, double b, int n) {
    std::vector<double> t;
    for (int k = 0; k <= n; ++k) t.push_back(a + (b - a) * k / n);
    return t;
}

double sup_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double e = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) e = std::max(e, std::abs(a[k] - b[k]));
    return e;
}
}  // namespace

TEST(DiscreteSpins, RabiOscillation) {
    const double g = angular(1e6);
    SimOptions o;
    o.psi_c0 = 1.0;
    o.store_spins = true;
    DiscreteSpinOptions d;
    d.detunings = {0.0};
    const auto t = grid(0.0, 2e-6, 80);
    const auto tr = simulate_discrete_spins(std::nullopt, Schedule::constant(0.0), g, Lorentzian{W}, 1, t, d, o);
    for (std::size_t k = 0; k < t.size(); ++k) {
        EXPECT_NEAR(std::norm(tr.psi_c[k]), std::pow(std::cos(g * t[k]), 2), 1e-9);
        EXPECT_NEAR(std::abs(tr.psi_s(0, Eigen::Index(k)) - cplx(0.0, -std::sin(g * t[k]))), 0.0, 1e-9);
    }
}

TEST(DiscreteSpins, ClosedSystemConservesNorm) {
    SimOptions o;
    o.psi_c0 = 1.0;
    o.ode.atol = 1e-13;
    const auto t = grid(0.0, 2e-6, 50);
    const auto tr = simulate_discrete_spins(std::nullopt, Schedule::constant(0.0), angular(1e6),
                                            Gaussian{W}, 50, t, {}, o);
    for (std::size_t k = 0; k < t.size(); ++k)
        EXPECT_NEAR(std::norm(tr.psi_c[k]) + tr.spin_population[k], 1.0, 1e-10);
}

TEST(DiscreteSpins, ZeroStateStaysZero) {
    const auto t = grid(0.0, 1e-6, 10);
    const auto tr = simulate_discrete_spins(std::nullopt, Schedule::constant(angular(1e6)), angular(1e6),
                                            Gaussian{W}, 20, t);
    for (std::size_t k = 0; k < t.size(); ++k) {
        EXPECT_EQ(tr.psi_c[k], cplx(0.0));
        EXPECT_EQ(tr.spin_population[k], 0.0);
    }
}

TEST(DiscreteSpins, LinearInDrive) {
    const BasisSet b{2e-6, 2};
    BasisExpansionPulse p1{b.T, b.n_b, {0.5, 0.1, -0.2, 0.3, 0.05}};
    // one-photon drive (energy kappa) so the solver tolerance is meaningful
    const double kappa = angular(0.5e6);
    const Eigen::VectorXd c0 = Eigen::Map<const Eigen::VectorXd>(p1.c.data(), Eigen::Index(p1.c.size()));
    const double norm = std::sqrt(c0.dot(build_F(b) * c0) / kappa);
    for (double& c : p1.c) c /= norm;
    BasisExpansionPulse p2 = p1;
    for (double& c : p2.c) c *= 2.0;
    const auto t = grid(0.0, 3e-6, 30);
    SimOptions o;
    o.store_spins = true;
    o.ode.atol = 1e-12;
    const auto s = Schedule::constant(kappa);
    const auto a = simulate_discrete_spins(PulseShape(p1), s, angular(1e6), Gaussian{W}, 30, t, {}, o);
    const auto c = simulate_discrete_spins(PulseShape(p2), s, angular(1e6), Gaussian{W}, 30, t, {}, o);
    EXPECT_GT(a.psi_s.cwiseAbs().maxCoeff(), 1e-2);
    EXPECT_LT((c.psi_s - 2.0 * a.psi_s).cwiseAbs().maxCoeff(), 1e-9);
    std::vector<cplx> a2(a.psi_c.size());
    for (std::size_t k = 0; k < a2.size(); ++k) a2[k] = 2.0 * a.psi_c[k];
    EXPECT_LT(sup_diff(c.psi_c, a2), 1e-9);
}

TEST(DiscreteSpins, SampledDeltaNLeavesProbabilitiesUnchanged) {
    const ExponentialPulse p = make_exponential_pulse(angular(1e6));
    const auto t = grid(0.0, p.t0 + 1e-6, 20);
    DiscreteSpinOptions d;
    d.sampling = SpinSampling::iid;
    d.seed = 7;
    const auto base = simulate_discrete_spins(PulseShape(p), Schedule::constant(angular(1e6)), angular(1e6),
                                              Gaussian{W}, 40, t, d);
    d.use_sampled_delta_n = true;
    const auto shifted = simulate_discrete_spins(PulseShape(p), Schedule::constant(angular(1e6)),
                                                 angular(1e6), Gaussian{W}, 40, t, d);
    for (std::size_t k = 0; k < t.size(); ++k) {
        EXPECT_NEAR(std::norm(base.psi_c[k]), std::norm(shifted.psi_c[k]), 1e-8);
        EXPECT_NEAR(base.spin_population[k], shifted.spin_population[k], 1e-8);
    }
}

TEST(DiscreteSpins, SeededSamplingIsReproducible) {
    const auto a = sample_detunings(Lorentzian{W}, 100, SpinSampling::iid, 42);
    const auto b = sample_detunings(Lorentzian{W}, 100, SpinSampling::iid, 42);
    const auto c = sample_detunings(Lorentzian{W}, 100, SpinSampling::iid, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    const auto s = sample_detunings(Gaussian{W}, 101, SpinSampling::stratified);
    EXPECT_NEAR(s[50], 0.0, 1e-9 * W);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], -s[s.size() - 1 - i], 1e-9 * W);
}

TEST(Sampling, QuantileInvertsCdf) {
    const LorentzianSum ls{{0.2, 0.3}, {0.5, 2.0}, W};
    for (const BroadeningModel& m : {BroadeningModel(Lorentzian{W}), BroadeningModel(Gaussian{W}), BroadeningModel(ls)})
        for (double u : {0.01, 0.3, 0.5, 0.77, 0.999})
            EXPECT_NEAR(broadening_cdf(m, broadening_quantile(m, u)), u, 1e-12);
}

TEST(KernelOde, ZeroTrace) {
    const auto t = grid(0.0, 1e-6, 10);
    const auto tr = simulate_kernel_ode(std::nullopt, Schedule::constant(angular(1e6)), angular(1e6), W, t);
    for (auto v : tr.psi_c) EXPECT_EQ(v, cplx(0.0));
}

TEST(KernelOde, OutputFieldAccountsForMissingPopulation) {
    // input-output: the photon leaves as f/sqrt(kappa) - sqrt(kappa) Psi_c
    const double k = angular(1e6), g = angular(1e6);
    const ExponentialPulse p = make_exponential_pulse(k, 0.0, 12.0);
    const double t_end = p.t0 + 6e-6;
    const auto tr = simulate_kernel_ode(PulseShape(p), Schedule::constant(k), g, W, {t_end});
    ASSERT_TRUE(tr.norm_accounted);
    auto out = [&](double t) {
        return std::norm(pulse_value(PulseShape(p), t) / std::sqrt(k) - std::sqrt(k) * tr.psi_c_at(t));
    };
    auto simpson = [&](double a, double b, int n) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            const double x0 = a + (b - a) * j / n, x1 = a + (b - a) * (j + 1) / n;
            s += (x1 - x0) / 6.0 * (out(x0) + 4.0 * out(0.5 * (x0 + x1)) + out(x1));
        }
        return s;
    };
    const double emitted = simpson(0.0, p.t0, 20000) + simpson(std::nextafter(p.t0, INFINITY), t_end, 20000);
    EXPECT_NEAR(tr.spin_population[0] + std::norm(tr.psi_c[0]) + emitted, 1.0, 1e-6);
}

TEST(SpinAmplitude, ConstantCavity) {
    AmplitudeTrace tr;
    tr.times = {0.0, 0.5e-6, 1e-6};
    tr.cavity = {{0.0, 0.4e-6, {1.0, 0.0, 0.0, 0.0, 0.0}}, {0.4e-6, 0.6e-6, {1.0, 0.0, 0.0, 0.0, 0.0}}};
    const double g = angular(1e6);
    const auto a = spin_amplitudes_from_cavity(tr, 0.0, g);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(a[k] - cplx(0.0, -g * tr.times[k])), 0.0, 1e-12);
    for (double d : {angular(0.3e6), angular(50e6)}) {
        const double t = 1e-6;
        const cplx ref = -g * (1.0 - std::exp(cplx(0.0, -d * t))) / d;
        EXPECT_NEAR(std::abs(spin_amplitude_at(tr, d, g, t) - ref), 0.0, 1e-12);
        EXPECT_NEAR(std::abs(spin_amplitudes_from_cavity(tr, d, g)[2] - ref), 0.0, 1e-12);
    }
}

TEST(SpinAmplitude, ZeroCavity) {
    AmplitudeTrace tr;
    tr.times = {0.0, 1e-6};
    tr.cavity = {{0.0, 1e-6, {0.0, 0.0, 0.0, 0.0, 0.0}}};
    EXPECT_EQ(spin_amplitude_at(tr, 1e6, 1e6, 1e-6), cplx(0.0));
}

TEST(SpinAmplitude, KernelRebuildMatchesDiscreteSpins) {
    // the same finite ensemble seen two ways: direct ODE and Filon rebuild from Psi_c
    const double g = angular(1e6), k = angular(1e6);
    const ExponentialPulse p = make_exponential_pulse(k);
    const auto t = grid(0.0, p.t0 + 1e-6, 40);
    SimOptions o;
    o.store_spins = true;
    const auto tr = simulate_discrete_spins(PulseShape(p), Schedule::constant(k), g, Gaussian{W}, 25, t, {}, o);
    const double gi = g / 5.0;
    double worst = 0.0;
    for (int i = 0; i < 25; ++i) {
        const auto row = spin_amplitudes_from_cavity(tr, tr.detunings[i], gi);
        for (std::size_t kk = 0; kk < t.size(); ++kk)
            worst = std::max(worst, std::abs(row[kk] - tr.psi_s(i, Eigen::Index(kk))));
    }
    EXPECT_LT(worst, 1e-7);
}

TEST(SpinAmplitude, OneStepAssembledFromCavity) {
    const double g = angular(1e6), k = angular(0.5e6);
    const ExponentialPulse p = make_exponential_pulse(k, 0.0, 12.0);
    const double rate = (k + W - varpi_prime(k, W, g)).real() / 4.0;
    const double t_end = p.t0 + 25.0 / rate;
    const auto tr = simulate_kernel_ode(PulseShape(p), Schedule::constant(k), g, W, {t_end});
    QuadratureConfig cfg;
    cfg.rel_tol = 1e-7;
    const double ps = spin_population_from_cavity(tr, Lorentzian{W}, g, t_end, cfg, k);
    const double ref = one_step_exp_ps_final(g, k, W);
    EXPECT_LT(std::abs(ps - ref) / ref, 5e-3);
    EXPECT_NEAR(ps, tr.spin_population[0], 1e-3);
}

TEST(KernelOde, PiecewiseSwitchMatchesConcatenatedClosedForms) {
    const double g = angular(0.1e6), dcs = angular(10e9);
    const double kmax = angular(1e6), kmin = angular(25e3);
    const ExponentialPulse p = make_exponential_pulse(kmax, dcs);
    const CavitySchedule cs{dcs, kmax, kmin, p.t0};
    const double t_end = p.t0 + two_step_duration(g, kmin, W, kmax).second_step;
    auto t = grid(0.0, p.t0, 40);
    for (double x : grid(p.t0, t_end, 200)) if (x > p.t0) t.push_back(x);
    const auto tr = simulate_kernel_ode(PulseShape(p), Schedule::from(cs), g, W, t);
    const cplx c0 = cavity_amplitude_first_step(PulseShape(p), p.t0, dcs, kmax, W, g);
    std::vector<cplx> ref;
    for (double x : t)
        ref.push_back(x <= p.t0 ? cavity_amplitude_first_step(PulseShape(p), x, dcs, kmax, W, g)
                                : c0 * cavity_amplitude_second_step(x, p.t0, kmin, W, g));
    EXPECT_LT(sup_diff(tr.psi_c, ref), 1e-6);
}

TEST(Ensemble, TwoStepMatchesClosedForm) {
    const double g = angular(1e6), kmax = angular(10e6), kmin = angular(25e3), dcs = angular(1e9);
    const ExponentialPulse p = make_exponential_pulse(kmax, dcs);
    const double t_end = p.t0 + two_step_duration(g, kmin, W, kmax).second_step;
    const auto tr = simulate_discrete_spins(PulseShape(p), Schedule::from({dcs, kmax, kmin, p.t0}), g,
                                            Lorentzian{W}, 2000, {t_end});
    const double ref = two_step_ps(g, kmin, W);
    EXPECT_LT(std::abs(tr.spin_population[0] - ref) / ref, 0.01);
}

TEST(Ensemble, ConvergesToKernelLimit) {
    const double g = angular(1e6), k = angular(1e6);
    const ExponentialPulse p = make_exponential_pulse(k);
    const auto t = grid(0.0, p.t0 + 2e-6, 60);
    const auto ref = simulate_kernel_ode(PulseShape(p), Schedule::constant(k), g, W, t);
    std::vector<double> err;
    for (int n : {500, 2000, 8000}) {
        const auto tr = simulate_discrete_spins(PulseShape(p), Schedule::constant(k), g, Lorentzian{W}, n, t);
        double e = sup_diff(tr.psi_c, ref.psi_c);
        for (std::size_t i = 0; i < t.size(); ++i)
            e = std::max(e, std::abs(tr.spin_population[i] - ref.spin_population[i]));
        err.push_back(e);
    }
    EXPECT_LT(err[1], 0.6 * err[0]);
    EXPECT_LT(err[2], 0.6 * err[1]);
}
