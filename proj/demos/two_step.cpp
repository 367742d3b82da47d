// Two-step protocol: closed form against the discrete-spin simulation.
#include <cstdio>

#include "spinmem/spinmem.hpp"

using namespace spinmem;

int main() {
    const double g = angular(1e6), w = angular(10e6), kappa_min = angular(250e3);
    const double kappa_max = angular(10e6), delta_cs = angular(1e9);

    const ExponentialPulse drive = make_exponential_pulse(kappa_max, delta_cs);
    const CavitySchedule cs{delta_cs, kappa_max, kappa_min, drive.t0};
    const double t_end = drive.t0 + two_step_duration(g, kappa_min, w, kappa_max).second_step;

    const AmplitudeTrace tr = simulate_discrete_spins(drive, Schedule::from(cs), g, Lorentzian{w},
                                                      500, {drive.t0, t_end});
    std::printf("closed form P_s = %.6f\n", two_step_ps(g, kappa_min, w));
    std::printf("500 spins   P_s = %.6f (cavity left %.2e)\n", tr.spin_population[1],
                std::norm(tr.psi_c[1]));
}
