#pragma once

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "spinmem/spinmem.hpp"

namespace spinmem::cli {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All values in I/O units: rates per 2pi, times in microseconds.
struct Params {
    double g_ens_mhz = 1.0;
    double w_mhz = 10.0;
    double kappa_mhz = 0.025;
    double kappa_min_khz = 25.0;
    double kappa_max_mhz = 1.0;
    double delta_cs_mhz = 1000.0;
    double kappa_g_khz = 50.0;
    double T_us = 10.0;
    double t0_us = NAN;  // Gaussian centre; nan selects 3/kappa_g
    double threshold = default_decay_threshold;
    double target = 0.8;
    double T_lo_us = 1.0;
    double T_hi_us = 200.0;
    double kappa_lo_mhz = 0.001;
    double kappa_hi_mhz = 5.0;
    double t_end_us = NAN;  // simulate: nan picks the protocol's own duration
    double rel_tol = 1e-10;
    double delta_max_mhz = 100.0;
    double gamma = 1e-3;
    double atol = 1e-10;
    int n_b = 5;
    int n_spins = 2000;
    int m1 = 8;
    int m2 = 2000;
    int n_times = 201;
    int n_grid = 25;
    int max_iter = 5000;
    std::string broadening = "lorentzian";  // lorentzian | gaussian | both
    std::string readout = "after-ringdown";  // after-ringdown | at-pulse-end
    std::string family = "both";             // optimized | gaussian | both
    std::string mode = "kernel";             // kernel | discrete
    std::string protocol = "two-step";       // two-step | one-step | free
    std::string sampling = "stratified";     // stratified | iid
    std::uint64_t seed = 0;
    bool opt_kappa = false;
};

using NumField = std::variant<double Params::*, int Params::*>;

struct NumParam {
    const char* name;
    NumField field;
    const char* help;
};

inline const std::vector<NumParam>& numeric_params() {
    static const std::vector<NumParam> v{
        {"g_ens_mhz", &Params::g_ens_mhz, "ensemble coupling g_ens/2pi [MHz]"},
        {"w_mhz", &Params::w_mhz, "broadening width w/2pi [MHz]"},
        {"kappa_mhz", &Params::kappa_mhz, "cavity decay kappa/2pi [MHz]"},
        {"kappa_min_khz", &Params::kappa_min_khz, "second-step kappa_min/2pi [kHz]"},
        {"kappa_max_mhz", &Params::kappa_max_mhz, "first-step kappa_max/2pi [MHz]"},
        {"delta_cs_mhz", &Params::delta_cs_mhz, "first-step cavity detuning/2pi [MHz]"},
        {"kappa_g_khz", &Params::kappa_g_khz, "Gaussian bandwidth kappa_g/2pi [kHz]"},
        {"T_us", &Params::T_us, "pulse duration T [us]"},
        {"t0_us", &Params::t0_us, "Gaussian centre t0 [us]"},
        {"threshold", &Params::threshold, "decay threshold (e^-thr counts as 0)"},
        {"target", &Params::target, "target P_s for min-duration"},
        {"T_lo_us", &Params::T_lo_us, "min-duration lower bracket [us]"},
        {"T_hi_us", &Params::T_hi_us, "min-duration upper bracket [us]"},
        {"kappa_lo_mhz", &Params::kappa_lo_mhz, "kappa search lower bound/2pi [MHz]"},
        {"kappa_hi_mhz", &Params::kappa_hi_mhz, "kappa search upper bound/2pi [MHz]"},
        {"t_end_us", &Params::t_end_us, "simulation end time [us]"},
        {"rel_tol", &Params::rel_tol, "quadrature relative tolerance"},
        {"delta_max_mhz", &Params::delta_max_mhz, "detuning cutoff/2pi [MHz]"},
        {"gamma", &Params::gamma, "fit learning rate"},
        {"atol", &Params::atol, "ODE absolute tolerance"},
        {"n_b", &Params::n_b, "number of cosine (and sine) harmonics"},
        {"n_spins", &Params::n_spins, "discrete spins in the oracle"},
        {"m1", &Params::m1, "Lorentzians in the Gaussian fit"},
        {"m2", &Params::m2, "fit sample points"},
        {"n_times", &Params::n_times, "trace/pulse sample count"},
        {"n_grid", &Params::n_grid, "kappa coarse grid size"},
        {"max_iter", &Params::max_iter, "fit iteration cap"},
    };
    return v;
}

inline const NumParam* find_numeric(const std::string& name) {
    for (const auto& p : numeric_params())
        if (name == p.name) return &p;
    return nullptr;
}

inline void set_numeric(Params& p, const NumParam& np, double v) {
    if (auto* d = std::get_if<double Params::*>(&np.field)) {
        p.*(*d) = v;
    } else {
        if (v != std::floor(v)) throw UsageError(std::string(np.name) + " must be an integer");
        p.*std::get<int Params::*>(np.field) = int(v);
    }
}

inline double get_numeric(const Params& p, const NumParam& np) {
    if (auto* d = std::get_if<double Params::*>(&np.field)) return p.*(*d);
    return p.*std::get<int Params::*>(np.field);
}

struct SweepAxis {
    std::string name;
    std::string scale = "lin";  // lin | log | list
    double start = 0.0, stop = 0.0;
    int count = 0;
    std::vector<double> values;

    std::vector<double> points() const {
        if (scale == "list") return values;
        std::vector<double> v;
        for (int k = 0; k < count; ++k) {
            const double u = count == 1 ? 0.0 : double(k) / (count - 1);
            v.push_back(scale == "log" ? start * std::pow(stop / start, u) : start + (stop - start) * u);
        }
        return v;
    }

    void validate() const {
        if (!find_numeric(name)) throw UsageError("unknown sweep axis '" + name + "'");
        if (scale == "list") {
            if (values.empty()) throw UsageError("sweep axis '" + name + "' has no points");
            return;
        }
        if (scale != "lin" && scale != "log") throw UsageError("sweep scale must be lin, log or list");
        if (count < 1) throw UsageError("sweep axis '" + name + "' has no points");
        if (!std::isfinite(start) || !std::isfinite(stop))
            throw UsageError("sweep axis '" + name + "' needs finite bounds");
        if (scale == "log" && !(start > 0.0 && stop > 0.0))
            throw UsageError("log sweep axis '" + name + "' needs positive bounds");
    }
};

// name:lin:start:stop:count, name:log:start:stop:count or name:list:v1,v2,...
inline SweepAxis parse_axis(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string s; std::getline(ss, s, ':');) parts.push_back(s);
    auto num = [&](const std::string& s) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw UsageError("bad number '" + s + "' in axis '" + spec + "'");
        }
    };
    SweepAxis a;
    if (parts.size() == 3 && parts[1] == "list") {
        a.name = parts[0];
        a.scale = "list";
        std::stringstream vs(parts[2]);
        for (std::string s; std::getline(vs, s, ',');)
            if (!s.empty()) a.values.push_back(num(s));
        return a;
    }
    if (parts.size() != 5) throw UsageError("axis must be name:lin|log:start:stop:count or name:list:v,...");
    a.name = parts[0];
    a.scale = parts[1];
    a.start = num(parts[2]);
    a.stop = num(parts[3]);
    const double c = num(parts[4]);
    if (c != std::floor(c)) throw UsageError("axis count must be an integer");
    a.count = int(c);
    return a;
}

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> v{"two-step", "one-step",     "gaussian-pulse",
                                            "analytic-pulse", "optimize", "optimize-kappa",
                                            "min-duration",   "fit-gaussian", "simulate",
                                            "sweep"};
    return v;
}

struct RunConfig {
    std::string command;
    Params params;
    std::string sweep_command = "two-step";
    std::vector<SweepAxis> axes;
    std::string format = "csv";
    std::string out;  // empty: the caller's stream

    void validate() const {
        auto known = [](const std::string& c) {
            return std::find(commands().begin(), commands().end(), c) != commands().end();
        };
        if (!known(command)) throw UsageError("unknown command '" + command + "'");
        if (format != "csv" && format != "json") throw UsageError("format must be csv or json");
        if (command == "sweep") {
            if (sweep_command == "sweep" || !known(sweep_command))
                throw UsageError("bad sweep command '" + sweep_command + "'");
            if (axes.empty()) throw UsageError("sweep needs at least one axis");
            for (const auto& a : axes) a.validate();
        }
        auto one_of = [](const std::string& field, const std::string& v,
                         std::initializer_list<const char*> ok) {
            for (const char* o : ok)
                if (v == o) return;
            throw UsageError("bad value '" + v + "' for " + field);
        };
        const Params& p = params;
        one_of("broadening", p.broadening, {"lorentzian", "gaussian", "both"});
        one_of("readout", p.readout, {"after-ringdown", "at-pulse-end"});
        one_of("family", p.family, {"optimized", "gaussian", "both"});
        one_of("mode", p.mode, {"kernel", "discrete"});
        one_of("protocol", p.protocol, {"two-step", "one-step", "free"});
        one_of("sampling", p.sampling, {"stratified", "iid"});
    }
};

// ------------------------------------------------------------------ JSON

inline ordered_json params_json(const Params& p) {
    ordered_json j;
    for (const auto& np : numeric_params()) {
        const double v = get_numeric(p, np);
        if (std::holds_alternative<int Params::*>(np.field))
            j[np.name] = int(v);
        else if (std::isfinite(v))
            j[np.name] = v;
        else
            j[np.name] = nullptr;
    }
    j["broadening"] = p.broadening;
    j["readout"] = p.readout;
    j["family"] = p.family;
    j["mode"] = p.mode;
    j["protocol"] = p.protocol;
    j["sampling"] = p.sampling;
    j["seed"] = p.seed;
    j["opt_kappa"] = p.opt_kappa;
    return j;
}

inline ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["command"] = c.command;
    j["params"] = params_json(c.params);
    if (c.command == "sweep") {
        ordered_json axes = ordered_json::array();
        for (const auto& a : c.axes) {
            ordered_json aj;
            aj["name"] = a.name;
            aj["scale"] = a.scale;
            if (a.scale == "list") {
                aj["values"] = a.values;
            } else {
                aj["start"] = a.start;
                aj["stop"] = a.stop;
                aj["count"] = a.count;
            }
            axes.push_back(aj);
        }
        j["sweep"] = {{"command", c.sweep_command}, {"axes", axes}};
    }
    j["format"] = c.format;
    return j;
}

inline void apply_json(RunConfig& c, const ordered_json& j) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "command") {
                c.command = v.get<std::string>();
            } else if (k == "format") {
                c.format = v.get<std::string>();
            } else if (k == "out") {
                c.out = v.get<std::string>();
            } else if (k == "params") {
                for (auto p = v.begin(); p != v.end(); ++p) {
                    const std::string& pk = p.key();
                    if (const NumParam* np = find_numeric(pk)) {
                        set_numeric(c.params, *np, p.value().is_null() ? NAN : p.value().get<double>());
                    } else if (pk == "broadening") {
                        c.params.broadening = p.value().get<std::string>();
                    } else if (pk == "readout") {
                        c.params.readout = p.value().get<std::string>();
                    } else if (pk == "family") {
                        c.params.family = p.value().get<std::string>();
                    } else if (pk == "mode") {
                        c.params.mode = p.value().get<std::string>();
                    } else if (pk == "protocol") {
                        c.params.protocol = p.value().get<std::string>();
                    } else if (pk == "sampling") {
                        c.params.sampling = p.value().get<std::string>();
                    } else if (pk == "seed") {
                        c.params.seed = p.value().get<std::uint64_t>();
                    } else if (pk == "opt_kappa") {
                        c.params.opt_kappa = p.value().get<bool>();
                    } else {
                        throw UsageError("unknown parameter '" + pk + "' in config");
                    }
                }
            } else if (k == "sweep") {
                if (v.contains("command")) c.sweep_command = v.at("command").get<std::string>();
                if (v.contains("axes")) {
                    c.axes.clear();
                    for (const auto& a : v.at("axes")) {
                        SweepAxis ax;
                        ax.name = a.at("name").get<std::string>();
                        ax.scale = a.value("scale", std::string("lin"));
                        if (ax.scale == "list") {
                            ax.values = a.at("values").get<std::vector<double>>();
                        } else {
                            ax.start = a.at("start").get<double>();
                            ax.stop = a.at("stop").get<double>();
                            ax.count = a.at("count").get<int>();
                        }
                        c.axes.push_back(ax);
                    }
                }
            } else {
                throw UsageError("unknown config key '" + k + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad config: ") + e.what());
    }
}

// ------------------------------------------------------------- execution

namespace detail {

inline Readout readout_of(const Params& p) {
    return p.readout == "at-pulse-end" ? Readout::at_pulse_end : Readout::after_ringdown;
}

inline QuadratureConfig quad_of(const Params& p) {
    QuadratureConfig c;
    c.rel_tol = p.rel_tol;
    c.delta_max = angular(p.delta_max_mhz * 1e6);
    c.validate();
    return c;
}

inline KappaSearch kappa_search_of(const Params& p) {
    KappaSearch ks;
    ks.kappa_lo = angular(p.kappa_lo_mhz * 1e6);
    ks.kappa_hi = angular(p.kappa_hi_mhz * 1e6);
    ks.n_grid = p.n_grid;
    return ks;
}

inline double mhz(double x) { return angular(x * 1e6); }
inline double khz(double x) { return angular(x * 1e3); }
inline double us(double x) { return x * 1e-6; }
inline double to_mhz(double w) { return per_two_pi(w) * 1e-6; }
inline double to_khz(double w) { return per_two_pi(w) * 1e-3; }
inline double to_us(double t) { return t * 1e6; }

// The fit lives in units of w, so one fit serves every width.
inline LorentzianSumFit gaussian_fit(const Params& p, double w) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, double, int>, LorentzianSumFit> memo;
    const auto key = std::make_tuple(p.m1, p.m2, p.gamma, p.max_iter);
    LorentzianSumFit fit;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = memo.find(key);
        if (it == memo.end()) it = memo.emplace(key, fit_lorentzian_sum(1.0, p.m1, p.m2, p.gamma, p.max_iter)).first;
        fit = it->second;
    }
    fit.w = w;
    return fit;
}

inline ordered_json samples_json(const std::vector<double>& t, const std::vector<double>& v) {
    ordered_json a = ordered_json::array();
    for (std::size_t k = 0; k < t.size(); ++k) a.push_back({to_us(t[k]), v[k]});
    return a;
}

inline std::vector<double> uniform_times(double T, int n) {
    std::vector<double> t(std::size_t(std::max(n, 2)));
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = T * double(k) / double(t.size() - 1);
    return t;
}

inline std::vector<double> basis_samples(const BasisSet& b, const Eigen::VectorXd& c,
                                         const std::vector<double>& t) {
    std::vector<double> v(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) {
        double s = 0.0;
        for (int j = 0; j < b.dim(); ++j) s += c(j) * basis_value(b, j, t[k]);
        v[k] = s;
    }
    return v;
}

inline Table run_two_step(const Params& p, ordered_json&) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz), km = khz(p.kappa_min_khz),
                 kx = mhz(p.kappa_max_mhz);
    spinmem::detail::require_positive("w", w);
    spinmem::detail::require_nonneg("g_ens", g);
    spinmem::detail::require_nonneg("kappa_min", km);
    const TwoStepDuration d = two_step_duration(g, km, w, kx, p.threshold);
    Table t;
    t.columns = {"g_ens_mhz", "kappa_min_khz", "w_mhz", "kappa_max_mhz", "cooperativity",
                 "ps",        "first_step_us", "second_step_us", "tau_us"};
    std::vector<Cell> row{p.g_ens_mhz, p.kappa_min_khz, p.w_mhz,  p.kappa_max_mhz,
                          km > 0.0 ? cooperativity(g, km, w) : INFINITY,
                          two_step_ps(g, km, w), to_us(d.first_step), to_us(d.second_step),
                          to_us(d.total)};
    if (p.broadening != "lorentzian") {
        const LorentzianSumFit fit = gaussian_fit(p, w);
        t.columns.push_back("ps_gaussian");
        row.push_back(gaussian_two_step_ps(fit, g, km, w, quad_of(p)));
    }
    t.add(row);
    return t;
}

inline Table run_one_step(const Params& p, ordered_json&) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz), k = mhz(p.kappa_mhz);
    spinmem::detail::require_positive("w", w);
    spinmem::detail::require_positive("kappa", k);
    Table t;
    t.columns = {"g_ens_mhz", "kappa_mhz", "w_mhz",    "cooperativity", "cavity_t0",
                 "spins_t0",  "ps_final",  "asymptote", "t0_us"};
    t.add({p.g_ens_mhz, p.kappa_mhz, p.w_mhz, cooperativity(g, k, w),
           one_step_exp_cavity_at_t0(g, k, w), one_step_exp_spins_at_t0(g, k, w),
           one_step_exp_ps_final(g, k, w, quad_of(p)), g > 0.0 ? k * w / (g * g) : INFINITY,
           to_us(2.0 * p.threshold / k)});
    return t;
}

inline Table run_gaussian_pulse(const Params& p, ordered_json&) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz), k = mhz(p.kappa_mhz),
                 kg = khz(p.kappa_g_khz);
    spinmem::detail::require_positive("w", w);
    spinmem::detail::require_positive("kappa", k);
    const std::optional<double> t0 =
        std::isfinite(p.t0_us) ? std::optional<double>(us(p.t0_us)) : std::nullopt;
    const DurationCheck dc = gaussian_duration_check(k, w, g, kg, us(p.T_us), t0, p.threshold);
    Table t;
    t.columns = {"g_ens_mhz", "kappa_mhz", "kappa_g_khz", "w_mhz", "ps", "min_T_us", "T_us",
                 "duration_ok"};
    t.add({p.g_ens_mhz, p.kappa_mhz, p.kappa_g_khz, p.w_mhz, gaussian_pulse_ps(g, k, kg, w, quad_of(p)),
           to_us(dc.min_T), p.T_us, dc.satisfied ? 1.0 : 0.0});
    return t;
}

inline Table run_analytic_pulse(const Params& p, ordered_json& extra) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz), k = mhz(p.kappa_mhz), T = us(p.T_us);
    const QuadratureConfig cfg = quad_of(p);
    const AnalyticOptimalPulse ap = analytic_optimal_pulse(T, k, w, g, cfg);
    Table t;
    t.columns = {"g_ens_mhz", "kappa_mhz", "w_mhz", "T_us", "ps", "lambda"};
    t.add({p.g_ens_mhz, p.kappa_mhz, p.w_mhz, p.T_us, ps_analytic_pulse(ap, cfg, readout_of(p)),
           std::abs(ap.lambda)});
    const auto times = uniform_times(T, p.n_times);
    std::vector<double> f(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) f[i] = pulse_value(ap, times[i]).real();
    extra["pulse"] = samples_json(times, f);
    return t;
}

inline Table run_optimize(const Params& p, ordered_json& extra, bool force_kappa) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz), T = us(p.T_us);
    spinmem::detail::require_positive("w", w);
    const QuadratureConfig cfg = quad_of(p);
    const Readout ro = readout_of(p);
    const BasisSet basis{T, p.n_b};
    basis.validate();
    const bool opt_k = force_kappa || p.opt_kappa;
    OptimizationResult r;
    if (opt_k) {
        r = optimize_kappa(g, w, basis, kappa_search_of(p), cfg, ro);
    } else {
        const double k = mhz(p.kappa_mhz);
        spinmem::detail::require_positive("kappa", k);
        const KernelCache kc = build_kernel_cache(basis, g, w, k, cfg, ro);
        r = optimize_pulse(kc);
        r.eigen_ps = eigen_optimal(kc).ps_max;
    }
    const BasisSet b5{T, 5};
    Eigen::VectorXd cg = figure_gaussian_expansion(b5, r.kappa, cfg);
    cg *= std::sqrt(r.kappa / cg.dot(build_F(b5) * cg));
    const double ps_g = ps_for_coefficients(b5, cg, g, w, r.kappa, cfg, ro);
    Table t;
    t.columns = {"g_ens_mhz",  "w_mhz",        "T_us",          "n_b",        "kappa_opt_mhz",
                 "kappa_at_bound", "cooperativity", "ps",          "eigen_ps",   "ps_gaussian",
                 "ps_gain",    "sine_amplitude", "sine_phase",  "sine_offset", "sine_residual",
                 "iterations", "converged"};
    t.add({p.g_ens_mhz, p.w_mhz, p.T_us, double(p.n_b), to_mhz(r.kappa),
           r.kappa_at_bound ? 1.0 : 0.0, cooperativity(g, r.kappa, w), r.ps, r.eigen_ps, ps_g,
           r.ps - ps_g, r.sine.A, r.sine.phi, r.sine.offset, r.sine.residual, double(r.iterations),
           r.converged ? 1.0 : 0.0});
    extra["kappa_optimized"] = opt_k;
    extra["c_opt"] = std::vector<double>(r.c_opt.data(), r.c_opt.data() + r.c_opt.size());
    const auto times = uniform_times(T, p.n_times);
    extra["pulse_optimized"] = samples_json(times, basis_samples(basis, r.c_opt, times));
    extra["pulse_gaussian"] = samples_json(times, basis_samples(b5, cg, times));
    return t;
}

inline Table run_min_duration(const Params& p, ordered_json&) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz);
    spinmem::detail::require_positive("w", w);
    const QuadratureConfig cfg = quad_of(p);
    const KappaSearch ks = kappa_search_of(p);
    const Readout ro = readout_of(p);
    auto solve = [&](PulseFamily f) {
        return min_duration(g, w, p.target, f, us(p.T_lo_us), us(p.T_hi_us), p.n_b, ks, cfg, ro).T_min;
    };
    Table t;
    t.columns = {"g_ens_mhz", "w_mhz", "target", "n_b"};
    std::vector<Cell> row{p.g_ens_mhz, p.w_mhz, p.target, double(p.n_b)};
    double T_opt = NAN, T_gauss = NAN;
    if (p.family != "gaussian") {
        T_opt = solve(PulseFamily::optimized);
        t.columns.push_back("T_opt_us");
        row.push_back(to_us(T_opt));
    }
    if (p.family != "optimized") {
        T_gauss = solve(PulseFamily::gaussian);
        t.columns.push_back("T_gauss_us");
        row.push_back(to_us(T_gauss));
    }
    if (p.family == "both") {
        t.columns.push_back("speedup");
        row.push_back(T_gauss / T_opt);
    }
    t.add(row);
    return t;
}

inline Table run_fit_gaussian(const Params& p, ordered_json& extra) {
    const double w = mhz(p.w_mhz);
    spinmem::detail::require_positive("w", w);
    const LorentzianSumFit fit = gaussian_fit(p, w);
    Table t;
    t.columns = {"term", "a", "b", "w_mhz"};
    for (std::size_t i = 0; i < fit.a.size(); ++i) t.add({double(i), fit.a[i], fit.b[i], p.w_mhz});
    extra["cost"] = fit.cost;
    extra["density_sse"] = fit.density_sse;
    extra["mass"] = fit.mass;
    extra["max_density_error"] = fit.max_density_error;
    extra["error_3w"] = gaussian_fit_error(fit, 3.0);
    extra["iterations"] = fit.iterations;
    return t;
}

inline Table run_simulate(const Params& p, ordered_json& extra) {
    const double g = mhz(p.g_ens_mhz), w = mhz(p.w_mhz);
    spinmem::detail::require_positive("w", w);
    std::optional<PulseShape> f;
    Schedule sched;
    SimOptions so;
    so.ode.atol = p.atol;
    double t_end = 0.0;
    if (p.protocol == "two-step") {
        const double kx = mhz(p.kappa_max_mhz), km = khz(p.kappa_min_khz), dcs = mhz(p.delta_cs_mhz);
        const ExponentialPulse ep = make_exponential_pulse(kx, dcs, p.threshold);
        f = ep;
        sched = Schedule::from(CavitySchedule{dcs, kx, km, ep.t0});
        t_end = ep.t0 + two_step_duration(g, km, w, kx, p.threshold).second_step;
    } else if (p.protocol == "one-step") {
        const double k = mhz(p.kappa_mhz);
        const ExponentialPulse ep = make_exponential_pulse(k, 0.0, p.threshold);
        f = ep;
        sched = Schedule::constant(k);
        const double rate = (k + w - varpi_prime(k, w, g)).real();
        t_end = ep.t0 + 4.0 * p.threshold / rate;
    } else {
        const double km = khz(p.kappa_min_khz);
        sched = Schedule::constant(km);
        so.psi_c0 = 1.0;
        t_end = two_step_duration(g, km, w, mhz(p.kappa_max_mhz), p.threshold).second_step;
    }
    if (std::isfinite(p.t_end_us)) t_end = us(p.t_end_us);
    spinmem::detail::require_positive("t_end", t_end);
    const auto times = uniform_times(t_end, p.n_times);
    AmplitudeTrace tr;
    if (p.mode == "kernel") {
        if (p.broadening != "lorentzian") throw UsageError("kernel mode needs lorentzian broadening");
        tr = simulate_kernel_ode(f, sched, g, w, times, so);
    } else {
        if (p.broadening == "both") throw UsageError("discrete mode needs a single broadening");
        const BroadeningModel bm =
            p.broadening == "gaussian" ? BroadeningModel(Gaussian{w}) : BroadeningModel(Lorentzian{w});
        DiscreteSpinOptions dso;
        dso.sampling = p.sampling == "iid" ? SpinSampling::iid : SpinSampling::stratified;
        dso.seed = p.seed;
        tr = simulate_discrete_spins(f, sched, g, bm, p.n_spins, times, dso, so);
    }
    const auto ext = tr.external_population();
    Table t;
    t.columns = {"t_us", "re_psi_c", "im_psi_c", "cavity_population", "spin_population",
                 "external_population", "external_valid"};
    for (std::size_t k = 0; k < times.size(); ++k)
        t.add({to_us(times[k]), tr.psi_c[k].real(), tr.psi_c[k].imag(), std::norm(tr.psi_c[k]),
               tr.spin_population[k], ext[k], tr.norm_accounted ? 1.0 : 0.0});
    extra["ode_steps"] = tr.stats.accepted;
    extra["ode_rejected"] = tr.stats.rejected;
    return t;
}

inline Table run_single(const std::string& cmd, const Params& p, ordered_json& extra) {
    if (cmd == "two-step") return run_two_step(p, extra);
    if (cmd == "one-step") return run_one_step(p, extra);
    if (cmd == "gaussian-pulse") return run_gaussian_pulse(p, extra);
    if (cmd == "analytic-pulse") return run_analytic_pulse(p, extra);
    if (cmd == "optimize") return run_optimize(p, extra, false);
    if (cmd == "optimize-kappa") return run_optimize(p, extra, true);
    if (cmd == "min-duration") return run_min_duration(p, extra);
    if (cmd == "fit-gaussian") return run_fit_gaussian(p, extra);
    if (cmd == "simulate") return run_simulate(p, extra);
    throw UsageError("unknown command '" + cmd + "'");
}

inline int worker_count() {
    if (const char* s = std::getenv("SPINMEM_WORKERS")) {
        const int n = std::atoi(s);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i < n on the worker pool; rethrows the lowest-index failure.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int nw = int(std::min<std::size_t>(std::size_t(worker_count()), n));
    std::vector<std::exception_ptr> errs(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                errs[i] = std::current_exception();
            }
        }
    };
    if (nw <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < nw; ++k) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

inline Table run_sweep(const RunConfig& c) {
    std::vector<std::vector<double>> pts;
    std::size_t total = 1;
    for (const auto& a : c.axes) {
        pts.push_back(a.points());
        total *= pts.back().size();
    }
    std::vector<Table> parts(total);
    parallel_for(total, [&](std::size_t i) {
        Params p = c.params;
        std::size_t rem = i;
        for (std::size_t k = c.axes.size(); k-- > 0;) {
            const std::size_t m = pts[k].size();
            set_numeric(p, *find_numeric(c.axes[k].name), pts[k][rem % m]);
            rem /= m;
        }
        ordered_json ignored;
        parts[i] = run_single(c.sweep_command, p, ignored);
    });
    Table out;
    for (auto& t : parts) {
        if (out.columns.empty()) out.columns = t.columns;
        if (t.columns != out.columns) throw Error("sweep points produced different columns");
        for (auto& r : t.rows) out.rows.push_back(std::move(r));
    }
    return out;
}

}  // namespace detail

// Writes the command's result to `os` in the configured format.
inline void execute(const RunConfig& c, std::ostream& os) {
    c.validate();
    ordered_json extra = ordered_json::object();
    const Table t = c.command == "sweep" ? detail::run_sweep(c)
                                         : detail::run_single(c.command, c.params, extra);
    const ordered_json cj = to_json(c);
    const std::string hash = config_hash(cj);
    if (c.format == "json")
        write_json(os, t, cj, hash, extra);
    else
        write_csv(os, t, hash);
}

// ------------------------------------------------------------ presets

inline const std::vector<std::string>& figure_names() {
    static const std::vector<std::string> v{"fig2", "fig3", "fig4", "fig5", "fig6",
                                            "fig7", "fig8", "fig9", "fig10"};
    return v;
}

inline RunConfig figure_recipe(const std::string& name) {
    RunConfig c;
    c.command = "sweep";
    Params& p = c.params;
    auto lin = [](const char* n, double a, double b, int k) { return SweepAxis{n, "lin", a, b, k, {}}; };
    auto log = [](const char* n, double a, double b, int k) { return SweepAxis{n, "log", a, b, k, {}}; };
    auto list = [](const char* n, std::vector<double> v) { return SweepAxis{n, "list", 0, 0, 0, std::move(v)}; };
    if (name == "fig2") {
        c.sweep_command = "two-step";
        p.kappa_max_mhz = 1.0;
        c.axes = {list("kappa_min_khz", {25, 250, 1000}), log("g_ens_mhz", 0.01, 10, 61)};
    } else if (name == "fig3") {
        c.sweep_command = "two-step";
        p.kappa_min_khz = 25;
        c.axes = {log("w_mhz", 0.1, 100, 31), log("g_ens_mhz", 0.01, 10, 31)};
    } else if (name == "fig4") {
        c.sweep_command = "two-step";
        p.broadening = "both";
        c.axes = {list("kappa_min_khz", {25, 250, 1000}), log("g_ens_mhz", 0.1, 3, 30)};
    } else if (name == "fig5") {
        c.sweep_command = "one-step";
        p.kappa_mhz = 0.025;
        c.axes = {log("g_ens_mhz", 0.01, 10, 61)};
    } else if (name == "fig6") {
        c.sweep_command = "gaussian-pulse";
        c.axes = {list("g_ens_mhz", {1.0, 0.3}), list("kappa_g_khz", {500, 250, 100, 50, 25}),
                  log("kappa_mhz", 0.001, 10, 41)};
    } else if (name == "fig7") {
        c.sweep_command = "optimize";
        p.T_us = 20;
        p.n_b = 5;
        c.axes = {log("g_ens_mhz", 0.1, 1.0, 10), log("kappa_mhz", 0.01, 1.0, 10)};
    } else if (name == "fig8") {
        c.command = "optimize";
        c.format = "json";
        p.g_ens_mhz = 0.5;
        p.T_us = 10;
        p.n_b = 5;
        p.opt_kappa = true;
    } else if (name == "fig9") {
        c.sweep_command = "optimize-kappa";
        p.n_b = 1;
        c.axes = {lin("T_us", 10, 50, 5), log("g_ens_mhz", 0.1, 1.0, 10)};
    } else if (name == "fig10") {
        c.sweep_command = "min-duration";
        p.n_b = 1;
        p.target = 0.8;
        c.axes = {lin("g_ens_mhz", 0.2, 0.4, 3)};
    } else {
        std::string all;
        for (const auto& n : figure_names()) all += (all.empty() ? "" : ", ") + n;
        throw UsageError("unknown figure '" + name + "'; available: " + all);
    }
    return c;
}

// ------------------------------------------------------------ front end

// Full command line handling; returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Single-photon absorption into an inhomogeneously broadened spin ensemble.\n"
                 "Rates are given per 2pi (MHz/kHz), times in microseconds."};
    app.require_subcommand(1, 1);
    app.fallthrough();
    Params p;
    for (const auto& np : numeric_params()) {
        std::string flag = std::string("--") + np.name;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (auto* d = std::get_if<double Params::*>(&np.field))
            app.add_option(flag, p.*(*d), np.help);
        else
            app.add_option(flag, p.*std::get<int Params::*>(np.field), np.help);
    }
    app.add_option("--broadening", p.broadening, "lorentzian | gaussian | both");
    app.add_option("--readout", p.readout, "after-ringdown | at-pulse-end");
    app.add_option("--family", p.family, "optimized | gaussian | both");
    app.add_option("--mode", p.mode, "simulate: kernel | discrete");
    app.add_option("--protocol", p.protocol, "simulate: two-step | one-step | free");
    app.add_option("--sampling", p.sampling, "stratified | iid");
    app.add_option("--seed", p.seed, "RNG seed");
    app.add_flag("--opt-kappa", p.opt_kappa, "optimize kappa as well");
    std::string config_path, out_path, format = "csv", sweep_cmd = "two-step";
    std::vector<std::string> axes;
    app.add_option("--config", config_path, "JSON config; overrides flags");
    app.add_option("--out", out_path, "output file (default stdout)");
    app.add_option("--format", format, "csv | json");
    app.add_option("--axis", axes, "sweep axis name:lin|log:start:stop:count or name:list:v,...");
    app.add_option("--sweep-command", sweep_cmd, "command evaluated at each sweep point");
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : commands()) subs[c] = app.add_subcommand(c, "run " + c);
    auto* fig = app.add_subcommand("figure", "emit (or run) a figure preset");
    std::string fig_name;
    bool fig_run = false;
    fig->add_option("name", fig_name, "preset name")->required();
    fig->add_flag("--run", fig_run, "execute the preset instead of printing it");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        RunConfig c;
        const bool is_fig = fig->parsed();
        if (is_fig) {
            c = figure_recipe(fig_name);
        } else {
            for (const auto& [name, sub] : subs)
                if (sub->parsed()) c.command = name;
            c.params = p;
            c.format = format;
            c.sweep_command = sweep_cmd;
            for (const auto& a : axes) c.axes.push_back(parse_axis(a));
            if (!config_path.empty()) {
                std::ifstream in(config_path);
                if (!in) throw UsageError("cannot read config '" + config_path + "'");
                ordered_json j;
                try {
                    j = ordered_json::parse(in);
                } catch (const nlohmann::json::exception& e) {
                    throw UsageError(std::string("bad config: ") + e.what());
                }
                apply_json(c, j);
            }
        }
        if (!out_path.empty()) c.out = out_path;
        if (is_fig && !fig_run) {
            c.validate();
            std::ostringstream ss;
            ss << to_json(c).dump(2) << '\n';
            if (c.out.empty()) {
                out << ss.str();
            } else {
                std::ofstream f(c.out, std::ios::binary);
                f << ss.str();
            }
            return 0;
        }
        if (c.out.empty()) {
            execute(c, out);
        } else {
            std::ostringstream ss;
            execute(c, ss);
            std::ofstream f(c.out, std::ios::binary);
            if (!f) throw UsageError("cannot write '" + c.out + "'");
            f << ss.str();
        }
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const ValidationError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace spinmem::cli
