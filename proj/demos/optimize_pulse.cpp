// Optimal pulse at fixed duration, kappa searched on a log grid.
#include <cstdio>

#include "spinmem/spinmem.hpp"

using namespace spinmem;

int main() {
    const double g = angular(0.5e6), w = angular(10e6), T = 10e-6;
    const BasisSet basis{T, 5};
    const OptimizationResult r = optimize_kappa(g, w, basis);

    std::printf("kappa/2pi = %.4f MHz, C = %.3f\n", per_two_pi(r.kappa) * 1e-6,
                cooperativity(g, r.kappa, w));
    std::printf("P_s = %.6f (eigen bound %.6f)\n", r.ps, r.eigen_ps);
    std::printf("sine fit: A = %.4g, phase = %.3g, offset = %.4g\n", r.sine.A, r.sine.phi,
                r.sine.offset);
    for (int k = 0; k <= 10; ++k) {
        const double t = T * k / 10.0;
        double f = 0.0;
        for (int j = 0; j < basis.dim(); ++j) f += r.c_opt(j) * basis_value(basis, j, t);
        std::printf("  t = %5.2f us  f = %.5g\n", t * 1e6, f);
    }
}
