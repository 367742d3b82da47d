#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "spinmem/errors.hpp"

namespace spinmem {

// f_0 = 1, f_j = cos(pi j t/T) for 1 <= j <= n_b, f_{n_b+k} = sin(pi k t/T).
struct BasisSet {
    double T = 0.0;
    int n_b = 1;

    int dim() const { return 2 * n_b + 1; }
    bool is_cos(int j) const { return j >= 1 && j <= n_b; }
    bool is_sin(int j) const { return j > n_b; }
    // harmonic number of index j (0 for the constant)
    int harmonic(int j) const { return j <= n_b ? j : j - n_b; }

    void validate() const {
        if (!(T > 0.0) || !std::isfinite(T)) throw ValidationError("T", "T must be positive");
        if (n_b < 0) throw ValidationError("n_b", "n_b must be non-negative");
    }
    void check_index(int j) const {
        if (j < 0 || j >= dim()) throw ValidationError("j", "basis index out of range");
    }
};

inline double basis_value(const BasisSet& b, int j, double t) {
    const double x = std::numbers::pi * b.harmonic(j) * t / b.T;
    if (j == 0) return 1.0;
    return b.is_cos(j) ? std::cos(x) : std::sin(x);
}

// coeff * exp(rate * s) with s = T - t.
struct ExpTerm {
    std::complex<double> coeff;
    std::complex<double> rate;
};
using ExpSum = std::vector<ExpTerm>;

// Basis function j rewritten in s = T - t:
//   cos(pi j t/T) = (-1)^j cos(u s),  sin(pi k t/T) = -(-1)^k sin(u s),  u = pi j/T.
inline ExpSum basis_exp_terms(const BasisSet& b, int j) {
    b.check_index(j);
    using C = std::complex<double>;
    if (j == 0) return {{1.0, 0.0}};
    const int m = b.harmonic(j);
    const double u = std::numbers::pi * m / b.T;
    const double sgn = (m % 2 == 0) ? 1.0 : -1.0;
    if (b.is_cos(j)) return {{sgn / 2.0, C{0.0, u}}, {sgn / 2.0, C{0.0, -u}}};
    const C s = -sgn / C{0.0, 2.0};
    return {{s, C{0.0, u}}, {-s, C{0.0, -u}}};
}

// F_ij = integral_0^T f_i f_j dt.
inline Eigen::MatrixXd build_F(const BasisSet& b) {
    b.validate();
    const int n = b.dim();
    const double T = b.T, pi = std::numbers::pi;
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, n);
    F(0, 0) = T;
    for (int j = 1; j < n; ++j) F(j, j) = T / 2.0;
    auto parity = [](int m) { return (m % 2 == 0) ? 1.0 : -1.0; };
    for (int k = 1; k <= b.n_b; ++k) {
        const int s = b.n_b + k;
        F(0, s) = F(s, 0) = T * (1.0 - parity(k)) / (pi * k);
        for (int j = 1; j <= b.n_b; ++j) {
            if (j == k) continue;
            const double v = T * k * (1.0 - parity(j + k)) / (pi * double(k * k - j * j));
            F(j, s) = F(s, j) = v;
        }
    }
    return F;
}

}  // namespace spinmem
