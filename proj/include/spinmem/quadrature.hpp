#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include "spinmem/errors.hpp"

namespace spinmem {

enum class QuadratureRule { G7K15 };

struct QuadratureConfig {
    double rel_tol = 1e-10;
    double abs_tol = 0.0;
    QuadratureRule rule = QuadratureRule::G7K15;
    std::size_t max_subdivisions = 10'000'000;
    double delta_max = 2.0 * std::numbers::pi * 100e6;  // rad/s

    void validate() const {
        if (!(rel_tol > 0.0) || !std::isfinite(rel_tol))
            throw ValidationError("rel_tol", "rel_tol must be positive");
        if (!(abs_tol >= 0.0) || !std::isfinite(abs_tol))
            throw ValidationError("abs_tol", "abs_tol must be non-negative");
        if (!(delta_max > 0.0) || !std::isfinite(delta_max))
            throw ValidationError("delta_max", "delta_max must be positive");
        if (max_subdivisions == 0)
            throw ValidationError("max_subdivisions", "max_subdivisions must be at least 1");
    }
};

template <class V>
struct QuadResult {
    V value{};
    double error = 0.0;
    std::size_t evaluations = 0;
    std::size_t panels = 0;
};

namespace detail {

template <class V>
struct QuadTraits {
    static double norm(const V& v) { return std::abs(v); }
    static V zero(const V&) { return V{}; }
    static bool finite(const V& v) { return std::isfinite(std::abs(v)); }
    static std::complex<double> as_complex(const V& v) { return std::complex<double>(v); }
};

template <>
struct QuadTraits<Eigen::VectorXcd> {
    static double norm(const Eigen::VectorXcd& v) {
        return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
    }
    static Eigen::VectorXcd zero(const Eigen::VectorXcd& like) {
        return Eigen::VectorXcd::Zero(like.size());
    }
    static bool finite(const Eigen::VectorXcd& v) { return v.allFinite(); }
    static std::complex<double> as_complex(const Eigen::VectorXcd& v) { return norm(v); }
};

template <class V>
inline constexpr bool is_vector_v = std::is_same_v<V, Eigen::VectorXcd>;

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1]; the Gauss nodes are
// xgk[1], xgk[3], xgk[5] and the centre.
struct G7K15 {
    static constexpr std::array<double, 8> xgk{
        0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
        0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
        0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
        0.207784955007898467600689403773245, 0.0};
    static constexpr std::array<double, 8> wgk{
        0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
        0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
        0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
        0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
    static constexpr std::array<double, 4> wg{
        0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
        0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
};

template <class V>
struct Panel {
    double a, b;
    V value;
    double err;
    double absval;            // integral of the integrand's norm, for the roundoff floor
    Eigen::VectorXd comp_err;  // per-component |K - G|, vector integrands only
};

template <class V>
struct PanelLess {
    bool operator()(const Panel<V>& x, const Panel<V>& y) const { return x.err < y.err; }
};

template <class V, class Fn>
Panel<V> gk15(Fn& f, double a, double b) {
    using T = QuadTraits<V>;
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    V fc = f(c);
    V K = fc * G7K15::wgk[7];
    V G = fc * G7K15::wg[3];
    double A = T::norm(fc) * G7K15::wgk[7];
    for (int j = 0; j < 7; ++j) {
        const double x = h * G7K15::xgk[j];
        V f1 = f(c - x);
        V f2 = f(c + x);
        A += G7K15::wgk[j] * (T::norm(f1) + T::norm(f2));
        V s = f1 + f2;
        if (j % 2 == 1) G = G + s * G7K15::wg[(j - 1) / 2];
        K = K + s * G7K15::wgk[j];
    }
    Panel<V> p{a, b, K * h, 0.0, A * std::abs(h), {}};
    V diff = (K - G) * h;
    p.err = T::norm(diff);
    if constexpr (is_vector_v<V>) p.comp_err = diff.cwiseAbs();
    if (!T::finite(p.value))
        throw QuadratureError("non-finite integrand value on [" + std::to_string(a) + ", " +
                                  std::to_string(b) + "]",
                              std::complex<double>(NAN, NAN), INFINITY);
    return p;
}

}  // namespace detail

// Adaptive G7K15 over consecutive panels [x0,x1], [x1,x2], ... Always splits
// the panel with the largest |K - G|. Panel errors are summed. Converges when
// the summed error is below max(rel_tol*|I|, abs_tol), or below the roundoff
// floor 50*eps*integral(|f|) when the integral cancels to ~0.
//
// For Eigen::VectorXcd integrands |.| is the max norm; on failure the message
// names the component carrying the most error.
template <class V, class Fn>
QuadResult<V> integrate_panels(Fn&& f, const std::vector<double>& points,
                               const QuadratureConfig& cfg) {
    using T = detail::QuadTraits<V>;
    using P = detail::Panel<V>;
    cfg.validate();
    if (points.size() < 2) throw ValidationError("interval", "need at least two breakpoints");
    for (std::size_t i = 0; i + 1 < points.size(); ++i)
        if (!(points[i] < points[i + 1]) || !std::isfinite(points[i]) ||
            !std::isfinite(points[i + 1]))
            throw ValidationError("interval", "breakpoints must be finite and increasing");

    std::vector<P> heap;
    heap.reserve(points.size() + 64);
    std::size_t evals = 0;
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        heap.push_back(detail::gk15<V>(f, points[i], points[i + 1]));
        evals += 15;
    }
    detail::PanelLess<V> less;
    std::make_heap(heap.begin(), heap.end(), less);

    auto totals = [&](V& value, double& err, double& absval) {
        value = T::zero(heap.front().value);
        err = 0.0;
        absval = 0.0;
        for (const auto& p : heap) {
            value = value + p.value;
            err += p.err;
            absval += p.absval;
        }
    };
    V total;
    double total_err, total_abs;
    totals(total, total_err, total_abs);

    const double eps = std::numeric_limits<double>::epsilon();
    std::size_t since_resum = 0;
    for (;;) {
        const double target = std::max(cfg.rel_tol * T::norm(total), cfg.abs_tol);
        if (total_err <= target || total_err <= 50.0 * eps * total_abs) break;

        auto fail = [&](const std::string& why) {
            std::string msg = why + " (estimate " + std::to_string(T::norm(total)) +
                              ", error " + std::to_string(total_err) + ")";
            if constexpr (detail::is_vector_v<V>) {
                Eigen::VectorXd ce = Eigen::VectorXd::Zero(total.size());
                for (const auto& p : heap) ce += p.comp_err;
                Eigen::Index worst;
                ce.maxCoeff(&worst);
                msg += "; worst component " + std::to_string(worst);
                throw QuadratureError(msg, total(worst), ce(worst));
            }
            throw QuadratureError(msg, T::as_complex(total), total_err);
        };
        if (heap.size() >= cfg.max_subdivisions) fail("subdivision budget exhausted");

        std::pop_heap(heap.begin(), heap.end(), less);
        P worst = std::move(heap.back());
        heap.pop_back();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b) ||
            worst.b - worst.a <= 8.0 * eps * std::max(std::abs(worst.a), std::abs(worst.b))) {
            heap.push_back(std::move(worst));
            std::push_heap(heap.begin(), heap.end(), less);
            fail("panel too small to subdivide");
        }
        P left = detail::gk15<V>(f, worst.a, mid);
        P right = detail::gk15<V>(f, mid, worst.b);
        evals += 30;
        total = total + (left.value + right.value - worst.value);
        total_err += left.err + right.err - worst.err;
        total_abs += left.absval + right.absval - worst.absval;
        heap.push_back(std::move(left));
        std::push_heap(heap.begin(), heap.end(), less);
        heap.push_back(std::move(right));
        std::push_heap(heap.begin(), heap.end(), less);
        if (++since_resum == 4096) {
            totals(total, total_err, total_abs);
            since_resum = 0;
        }
    }
    totals(total, total_err, total_abs);
    return {total, total_err, evals, heap.size()};
}

template <class Fn>
QuadResult<std::complex<double>> integrate(Fn&& f, double a, double b,
                                           const QuadratureConfig& cfg = {}) {
    if (!(a < b)) throw ValidationError("interval", "integrate needs a < b");
    auto g = [&](double x) { return std::complex<double>(f(x)); };
    return integrate_panels<std::complex<double>>(g, {a, b}, cfg);
}

// Breakpoints for detuning integrals: +-Delta_max, 0, and a geometric ladder
// (factor 4) upward from the smallest physical scale. Keeps narrow features
// near resonance from hiding between Kronrod nodes of a huge first panel.
inline std::vector<double> detuning_breakpoints(double delta_max,
                                                std::initializer_list<double> scales = {}) {
    std::vector<double> pts{-delta_max, delta_max};
    double smin = INFINITY;
    for (double s : scales)
        if (s > 0.0 && std::isfinite(s)) smin = std::min(smin, s);
    if (std::isfinite(smin)) {
        pts.push_back(0.0);
        for (double x = smin / 4.0; x < delta_max; x *= 4.0) {
            pts.push_back(x);
            pts.push_back(-x);
        }
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

// Integral over [-delta_max, +delta_max]. `scales` (rad/s) are optional
// characteristic widths used to seed the panel layout.
template <class Fn>
std::complex<double> integrate_detuning(Fn&& g, const QuadratureConfig& cfg = {},
                                        std::initializer_list<double> scales = {}) {
    auto h = [&](double x) { return std::complex<double>(g(x)); };
    return integrate_panels<std::complex<double>>(h, detuning_breakpoints(cfg.delta_max, scales),
                                                  cfg)
        .value;
}

}  // namespace spinmem
