#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace spinmem {

struct BfgsOptions {
    int max_iter = 500;
    double grad_tol = 1e-10;  // on ||grad||_inf
    double c1 = 1e-4;         // Armijo constant
    int max_backtracks = 60;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Minimises fg(x, grad) -> f. Inverse-Hessian BFGS with backtracking Armijo
// search; the update is skipped when the curvature y's is not positive.
template <class Fn>
BfgsResult bfgs_minimize(Fn&& fg, Eigen::VectorXd x, const BfgsOptions& opt = {}) {
    const Eigen::Index n = x.size();
    Eigen::VectorXd g(n), g_new(n);
    double f = fg(x, g);
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
    BfgsResult r;
    bool scaled = false;
    for (int it = 0; it < opt.max_iter; ++it) {
        r.iterations = it;
        if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
            r.converged = true;
            break;
        }
        Eigen::VectorXd p = -H * g;
        double slope = g.dot(p);
        if (!(slope < 0.0)) {  // lost descent: restart from steepest descent
            H.setIdentity();
            p = -g;
            slope = -g.squaredNorm();
        }
        double step = 1.0, f_new = f;
        Eigen::VectorXd x_new = x;
        bool accepted = false;
        for (int k = 0; k < opt.max_backtracks; ++k) {
            x_new = x + step * p;
            f_new = fg(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + opt.c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no progress possible at this precision
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > std::numeric_limits<double>::epsilon() * s.norm() * y.norm()) {
            if (!scaled) {
                H *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Eigen::VectorXd Hy = H * y;
            H += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) -
                 rho * (Hy * s.transpose() + s * Hy.transpose());
        }
        x = x_new;
        f = f_new;
        g = g_new;
        r.iterations = it + 1;
    }
    r.x = x;
    r.f = f;
    r.grad_norm = g.lpNorm<Eigen::Infinity>();
    if (r.grad_norm <= opt.grad_tol) r.converged = true;
    return r;
}

}  // namespace spinmem
