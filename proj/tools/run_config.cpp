#include "run_config.hpp"

#include <algorithm>
#include <filesystem>
#include <random>

namespace mw::cli {

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

namespace {

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

RVec vec_from(const json& j, const char* key) {
    std::vector<double> v;
    read(j, key, v);
    if (v.empty()) throw ConfigError(std::string("missing vector '") + key + "'");
    return Eigen::Map<RVec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const RVec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void require_positive(double v, const std::string& what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + " must be positive");
}

}  // namespace

ProfileOptions profile_options_from_json(const json& j) {
    ProfileOptions o;
    if (j.is_null()) return o;
    check_keys(j, {"n_modes", "max_iter", "tol_residual", "tol_step", "report_tol", "rcond_min"}, "profile");
    read(j, "n_modes", o.n_modes);
    read(j, "max_iter", o.max_iter);
    read(j, "tol_residual", o.tol_residual);
    read(j, "tol_step", o.tol_step);
    read(j, "report_tol", o.report_tol);
    read(j, "rcond_min", o.rcond_min);
    if (o.n_modes < 1 || o.max_iter < 1) throw ConfigError("profile sizes must be positive");
    return o;
}

json profile_options_to_json(const ProfileOptions& o) {
    return {{"n_modes", o.n_modes},       {"max_iter", o.max_iter},     {"tol_residual", o.tol_residual},
            {"tol_step", o.tol_step},     {"report_tol", o.report_tol}, {"rcond_min", o.rcond_min}};
}

WaveSpec wave_from_json(const SystemSpec& sys, const json& j, const ProfileOptions& popt, const std::string& base_dir) {
    if (!j.is_object()) throw ConfigError("wave must be an object");
    std::string type;
    read(j, "type", type);
    WaveSpec ws;
    if (type == "cnoidal") {
        check_keys(j, {"type", "m", "mean", "k", "amplitude", "n_modes"}, "wave");
        if (sys.kind != SystemKind::KdV) throw ConfigError("cnoidal waves need the KdV system");
        double m = 0.5, mean = 0.0, k = 0.0, amp = 0.0;
        int n = popt.n_modes;
        read(j, "m", m);
        read(j, "mean", mean);
        read(j, "k", k);
        read(j, "amplitude", amp);
        read(j, "n_modes", n);
        if ((k > 0.0) == (amp > 0.0)) throw ConfigError("cnoidal wave needs exactly one of k and amplitude");
        ws.wave = k > 0.0 ? cnoidal_with_k(m, mean, k, n) : cnoidal_closed_form(m, mean, amp, n);
        ws.source = {{"type", type}, {"m", m}, {"mean", mean}, {"n_modes", n}};
        if (k > 0.0)
            ws.source["k"] = k;
        else
            ws.source["amplitude"] = amp;
    } else if (type == "cnoidal_invariants") {
        check_keys(j, {"type", "mean", "P", "k", "n_modes"}, "wave");
        if (sys.kind != SystemKind::KdV) throw ConfigError("cnoidal waves need the KdV system");
        double mean = 0.0, P = 0.0, k = 0.0;
        int n = popt.n_modes;
        read(j, "mean", mean);
        read(j, "P", P);
        read(j, "k", k);
        read(j, "n_modes", n);
        require_positive(k, "k");
        ws.wave = cnoidal_from_invariants(mean, P, k, n);
        ws.source = {{"type", type}, {"mean", mean}, {"P", P}, {"k", k}, {"n_modes", n}};
    } else if (type == "constant") {
        check_keys(j, {"type", "M", "k", "n_modes"}, "wave");
        RVec M = vec_from(j, "M");
        double k = 0.0;
        int n = 16;
        read(j, "k", k);
        read(j, "n_modes", n);
        require_positive(k, "k");
        if (M.size() != sys.d) throw ConfigError("constant state has the wrong dimension");
        ws.wave = constant_state(sys, M, k, n);
        ws.source = {{"type", type}, {"M", to_std(M)}, {"k", k}, {"n_modes", n}};
    } else if (type == "harmonic") {
        check_keys(j, {"type", "M", "k", "eps", "omega", "n_modes"}, "wave");
        RVec M = vec_from(j, "M");
        double k = 0.0, eps = 0.1, omega = 0.0;
        int n = popt.n_modes;
        read(j, "k", k);
        read(j, "eps", eps);
        read(j, "omega", omega);
        read(j, "n_modes", n);
        require_positive(k, "k");
        if (M.size() != sys.d) throw ConfigError("mean has the wrong dimension");
        ProfileOptions o = popt;
        o.n_modes = n;
        RVec t(sys.d + 1);
        t << M, k;
        ws.wave = solve_profile(sys, harmonic_seed(sys, M, k, eps, omega, n), t, o);
        ws.source = {{"type", type}, {"M", to_std(M)}, {"k", k}, {"eps", eps}, {"omega", omega}, {"n_modes", n}};
    } else if (type == "file") {
        check_keys(j, {"type", "path"}, "wave");
        std::string path;
        read(j, "path", path);
        if (path.empty()) throw ConfigError("wave file path is empty");
        std::filesystem::path p(path);
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        ws.wave = load_profile(p.string());
        ws.source = {{"type", type}, {"path", std::filesystem::absolute(p).lexically_normal().string()}};
    } else {
        throw ConfigError("unknown wave type '" + type + "'");
    }
    if (ws.wave.d != sys.d) throw ConfigError("wave and system dimension differ");
    return ws;
}

TimeGrid times_from_json(const json& j) {
    TimeGrid g;
    if (j.is_array()) {
        try {
            g.times = j.get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("times: ") + e.what());
        }
        g.source = g.times;
    } else {
        check_keys(j, {"t0", "t1", "count", "spacing"}, "times");
        double t0 = 0.0, t1 = 0.0;
        int count = 0;
        std::string spacing = "geometric";
        read(j, "t0", t0);
        read(j, "t1", t1);
        read(j, "count", count);
        read(j, "spacing", spacing);
        if (count < 2 || !(t1 > t0)) throw ConfigError("times need t0 < t1 and count >= 2");
        if (spacing == "geometric") {
            g.times = geometric_times(t0, t1, count);
        } else if (spacing == "linear") {
            for (int i = 0; i < count; ++i) g.times.push_back(t0 + (t1 - t0) * i / (count - 1));
        } else {
            throw ConfigError("unknown time spacing '" + spacing + "'");
        }
        g.source = {{"t0", t0}, {"t1", t1}, {"count", count}, {"spacing", spacing}};
    }
    if (g.times.empty()) throw ConfigError("time grid is empty");
    for (size_t i = 0; i < g.times.size(); ++i)
        if (!(g.times[i] >= 0.0) || (i > 0 && !(g.times[i] > g.times[i - 1])))
            throw ConfigError("times must be nonnegative and increasing");
    return g;
}

DataSpec data_from_json(const json& j) {
    DataSpec d;
    if (j.is_null()) return d;
    check_keys(j, {"shape", "amplitude", "center", "width", "component", "modes"}, "data");
    read(j, "shape", d.shape);
    read(j, "amplitude", d.amplitude);
    read(j, "center", d.center);
    read(j, "width", d.width);
    read(j, "component", d.component);
    read(j, "modes", d.modes);
    if (d.shape != "gaussian" && d.shape != "random" && d.shape != "none")
        throw ConfigError("unknown data shape '" + d.shape + "'");
    require_positive(d.width, "data width");
    if (d.modes < 1) throw ConfigError("data modes must be positive");
    return d;
}

json data_to_json(const DataSpec& d) {
    return {{"shape", d.shape}, {"amplitude", d.amplitude}, {"center", d.center},
            {"width", d.width}, {"component", d.component}, {"modes", d.modes}};
}

SampledLine make_data(const DataSpec& d, int n_cells, int pts, int dim, std::uint64_t seed) {
    if (d.component < 0 || d.component >= dim) throw ConfigError("data component out of range");
    SampledLine g(n_cells, pts, dim);
    if (d.shape == "none") return g;
    const double c = d.center < 0.0 ? 0.5 * n_cells : d.center;
    std::vector<double> a(d.modes), b(d.modes);
    if (d.shape == "random") {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int q = 0; q < d.modes; ++q) {
            a[q] = u(rng);
            b[q] = u(rng);
        }
    }
    for (int i = 0; i < g.size(); ++i) {
        const double z = (g.x(i) - c) / d.width;
        double v = std::exp(-0.5 * z * z);
        if (d.shape == "random") {
            double s = 0.0;
            for (int q = 0; q < d.modes; ++q) s += a[q] * std::cos((q + 1) * z) + b[q] * std::sin((q + 1) * z);
            v *= s / d.modes;
        }
        g.values(i, d.component) = d.amplitude * v;
    }
    return g;
}

SimulateConfig simulate_from_json(const json& j) {
    SimulateConfig c;
    check_keys(j, {"mode", "n_cells", "pts_per_cell", "times", "data", "linear", "nonlinear", "sm_norms", "fit", "save_states"},
               "simulate");
    read(j, "mode", c.mode);
    if (c.mode != "linear" && c.mode != "nonlinear") throw ConfigError("simulate mode must be linear or nonlinear");
    read(j, "n_cells", c.n_cells);
    read(j, "pts_per_cell", c.pts_per_cell);
    if (c.n_cells < 1 || c.pts_per_cell < 1) throw ConfigError("grid sizes must be positive");
    if (!j.contains("times")) throw ConfigError("simulate needs times");
    c.times = times_from_json(j.at("times"));
    if (j.contains("data")) c.data = data_from_json(j.at("data"));
    if (j.contains("linear")) {
        check_keys(j.at("linear"), {"tail_tol", "cond_max"}, "simulate.linear");
        read(j.at("linear"), "tail_tol", c.linear.tail_tol);
        read(j.at("linear"), "cond_max", c.linear.cond_max);
    }
    if (j.contains("nonlinear")) {
        const json& n = j.at("nonlinear");
        check_keys(n, {"dt", "step_tol", "max_halvings", "blowup_factor"}, "simulate.nonlinear");
        read(n, "dt", c.nonlinear.dt);
        read(n, "step_tol", c.nonlinear.step_tol);
        read(n, "max_halvings", c.nonlinear.max_halvings);
        read(n, "blowup_factor", c.nonlinear.blowup_factor);
        require_positive(c.nonlinear.dt, "dt");
    }
    if (j.contains("sm_norms")) {
        const json& s = j.at("sm_norms");
        check_keys(s, {"norms", "xi_cut"}, "simulate.sm_norms");
        read(s, "norms", c.sm_norms);
        read(s, "xi_cut", c.sm_xi_cut);
        for (const auto& n : c.sm_norms) norm_from_string(n);
        if (!(c.sm_xi_cut > 0.0) || c.sm_xi_cut > kPi) throw ConfigError("xi_cut must lie in (0, pi]");
    }
    if (j.contains("fit")) {
        const json& f = j.at("fit");
        check_keys(f, {"series", "t0", "t1", "drift_tol", "expect_min", "expect_max"}, "simulate.fit");
        read(f, "series", c.fit_series);
        read(f, "t0", c.fit_t0);
        read(f, "t1", c.fit_t1);
        read(f, "drift_tol", c.drift_tol);
        if (f.contains("expect_min") || f.contains("expect_max")) {
            c.has_expect = true;
            read(f, "expect_min", c.expect_min);
            read(f, "expect_max", c.expect_max);
            if (!(c.expect_max > c.expect_min)) throw ConfigError("fit expectation needs expect_min < expect_max");
        }
        if (c.fit_series.empty() || !(c.fit_t0 > 0.0) || !(c.fit_t1 > c.fit_t0))
            throw ConfigError("fit needs a series and a window 0 < t0 < t1");
    }
    read(j, "save_states", c.save_states);
    if (c.save_states != "final" && c.save_states != "all" && c.save_states != "none")
        throw ConfigError("save_states must be final, all or none");
    return c;
}

json simulate_to_json(const SimulateConfig& c) {
    json j = {{"mode", c.mode},
              {"n_cells", c.n_cells},
              {"pts_per_cell", c.pts_per_cell},
              {"times", c.times.source},
              {"data", data_to_json(c.data)},
              {"linear", {{"tail_tol", c.linear.tail_tol}, {"cond_max", c.linear.cond_max}}},
              {"nonlinear",
               {{"dt", c.nonlinear.dt},
                {"step_tol", c.nonlinear.step_tol},
                {"max_halvings", c.nonlinear.max_halvings},
                {"blowup_factor", c.nonlinear.blowup_factor}}},
              {"sm_norms", {{"norms", c.sm_norms}, {"xi_cut", c.sm_xi_cut}}},
              {"save_states", c.save_states}};
    if (!c.fit_series.empty()) {
        j["fit"] = {{"series", c.fit_series}, {"t0", c.fit_t0}, {"t1", c.fit_t1}, {"drift_tol", c.drift_tol}};
        if (c.has_expect) {
            j["fit"]["expect_min"] = c.expect_min;
            j["fit"]["expect_max"] = c.expect_max;
        }
    }
    return j;
}

WhithamConfig whitham_from_json(const json& j) {
    WhithamConfig c;
    c.bump.shape = "none";
    check_keys(j, {"tabulation", "spectral_check", "n_cells", "pts_per_cell", "psi0", "bump", "solve", "compare"}, "whitham");
    if (j.contains("tabulation")) {
        const json& t = j.at("tabulation");
        check_keys(t, {"points_per_axis", "rel_step"}, "whitham.tabulation");
        read(t, "points_per_axis", c.tabulation.points_per_axis);
        read(t, "rel_step", c.tabulation.rel_step);
    }
    if (j.contains("spectral_check")) {
        const json& s = j.at("spectral_check");
        check_keys(s, {"enabled", "tol"}, "whitham.spectral_check");
        read(s, "enabled", c.spectral_check);
        read(s, "tol", c.speed_tol);
    }
    read(j, "n_cells", c.n_cells);
    read(j, "pts_per_cell", c.pts_per_cell);
    if (c.n_cells < 1 || c.pts_per_cell < 1) throw ConfigError("grid sizes must be positive");
    if (j.contains("psi0")) {
        const json& p = j.at("psi0");
        check_keys(p, {"shape", "amplitude", "sharpness"}, "whitham.psi0");
        read(p, "shape", c.psi_shape);
        read(p, "amplitude", c.psi_amplitude);
        read(p, "sharpness", c.psi_sharpness);
        if (c.psi_shape != "none" && c.psi_shape != "tanh_sin") throw ConfigError("unknown psi0 shape '" + c.psi_shape + "'");
    }
    if (j.contains("bump")) {
        c.bump = data_from_json(j.at("bump"));
        if (c.bump.shape == "random") throw ConfigError("whitham bump must be gaussian or none");
    }
    if (j.contains("solve")) {
        const json& s = j.at("solve");
        check_keys(s, {"enabled", "times", "nu_art", "cfl"}, "whitham.solve");
        read(s, "enabled", c.solve);
        read(s, "nu_art", c.solver.nu_art);
        read(s, "cfl", c.solver.cfl);
        if (c.solve) {
            if (!s.contains("times")) throw ConfigError("whitham.solve needs times");
            c.times = times_from_json(s.at("times"));
        }
    }
    if (j.contains("compare")) {
        const json& s = j.at("compare");
        check_keys(s, {"enabled", "p", "fit_t0", "fit_t1"}, "whitham.compare");
        read(s, "enabled", c.compare);
        read(s, "p", c.p);
        read(s, "fit_t0", c.fit_t0);
        read(s, "fit_t1", c.fit_t1);
        if (c.compare && !c.solve) throw ConfigError("whitham.compare needs whitham.solve");
        if (!(c.p >= 1.0)) throw ConfigError("comparison p must be at least 1");
    }
    return c;
}

json whitham_to_json(const WhithamConfig& c) {
    json j = {{"tabulation", {{"points_per_axis", c.tabulation.points_per_axis}, {"rel_step", c.tabulation.rel_step}}},
              {"spectral_check", {{"enabled", c.spectral_check}, {"tol", c.speed_tol}}},
              {"n_cells", c.n_cells},
              {"pts_per_cell", c.pts_per_cell},
              {"psi0", {{"shape", c.psi_shape}, {"amplitude", c.psi_amplitude}, {"sharpness", c.psi_sharpness}}},
              {"bump", data_to_json(c.bump)},
              {"solve", {{"enabled", c.solve}, {"nu_art", c.solver.nu_art}, {"cfl", c.solver.cfl}}},
              {"compare", {{"enabled", c.compare}, {"p", c.p}, {"fit_t0", c.fit_t0}, {"fit_t1", c.fit_t1}}}};
    if (c.solve) j["solve"]["times"] = c.times.source;
    return j;
}

}  // namespace mw::cli
