#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "run_config.hpp"

using namespace mw;
using namespace mw::cli;
namespace fs = std::filesystem;

namespace {

struct Context {
    json raw;
    json materialized;
    std::string base_dir;
    fs::path out;
    std::uint64_t seed = 0;
    SystemSpec sys;
    ProfileOptions popt;
    WaveSpec wave;
};

void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    os << j.dump(2) << '\n';
}

const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    return j.contains(key) ? j.at(key) : empty;
}

Context load(const std::string& config_path, const std::string& out_dir, std::int64_t seed_flag) {
    Context c;
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config " + config_path);
    try {
        c.raw = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(c.raw, {"system", "wave", "profile", "spectrum", "check", "simulate", "whitham", "seed"}, "config");
    c.base_dir = fs::absolute(config_path).parent_path().string();
    if (c.raw.contains("seed")) {
        if (!c.raw.at("seed").is_number_unsigned()) throw ConfigError("seed must be a nonnegative integer");
        c.seed = c.raw.at("seed").get<std::uint64_t>();
    }
    if (seed_flag >= 0) c.seed = static_cast<std::uint64_t>(seed_flag);
    if (!c.raw.contains("system")) throw ConfigError("config needs a system");
    if (!c.raw.contains("wave")) throw ConfigError("config needs a wave");
    c.sys = system_from_json(c.raw.at("system"));
    c.popt = profile_options_from_json(section(c.raw, "profile"));
    c.out = out_dir;
    fs::create_directories(c.out);
    c.wave = wave_from_json(c.sys, c.raw.at("wave"), c.popt, c.base_dir);
    c.materialized = {{"system", system_to_json(c.sys)},
                      {"wave", c.wave.source},
                      {"profile", profile_options_to_json(c.popt)},
                      {"seed", c.seed}};
    return c;
}

void finish_config(const Context& c) { write_json(c.out / "config.json", c.materialized); }

int cmd_profile(Context& c) {
    const WaveProfile& w = c.wave.wave;
    finish_config(c);
    save_profile(w, (c.out / "profile.json").string());
    const double res = profile_residual(c.sys, w);
    const bool ok = res <= c.popt.report_tol;
    write_json(c.out / "residual.json", {{"residual", res},
                                         {"report_tol", c.popt.report_tol},
                                         {"spectral_tail", spectral_tail(w)},
                                         {"degenerate", w.degenerate},
                                         {"k", w.k},
                                         {"omega", w.omega},
                                         {"speed", w.speed()},
                                         {"amplitude", w.amplitude()},
                                         {"pass", ok}});
    std::cout << "residual " << res << (w.degenerate ? " (degenerate constant state)" : "") << '\n';
    return ok ? 0 : 2;
}

// Eigenvalues of the constant-state fiber symbol at mode j.
CVec constant_symbol(const SystemSpec& sys, const WaveProfile& w, double xi, int j) {
    const double mu = xi + kTwoPi * j;
    RVec M = w.coeffs.row(w.n_modes).real().transpose();
    const RMat df = sys.flux.jacobian(M);
    const int d = sys.d;
    CMat S = -kI * mu * (w.omega * CMat::Identity(d, d) + w.k * df.cast<cd>());
    if (sys.kind == SystemKind::KdV)
        S(0, 0) += kI * std::pow(w.k * mu, 3);
    else
        S -= w.k * w.k * mu * mu * sys.D.cast<cd>();
    return eigenvalues(S);
}

int cmd_spectrum(Context& c) {
    StabilityConfig cfg = stability_config_from_json(section(c.raw, "spectrum"));
    c.materialized["spectrum"] = stability_config_to_json(cfg);
    finish_config(c);
    const WaveProfile& w = c.wave.wave;
    FloquetSpectrum S = sweep(c.sys, w, uniform_xi_grid(cfg.n_xi), cfg.n_f, cfg.n_f2, cfg.sweep);
    TrackResult tr = track_curves(S, cfg.track);
    write_spectrum_csv(S, tr, (c.out / "spectrum.csv").string());
    write_figure1_csv(tr, (c.out / "figure1.csv").string());
    double max_re = 0.0;
    int resolved = 0, total = 0;
    for (const auto& row : S.eigs)
        for (const auto& e : row) {
            ++total;
            if (!e.resolved) continue;
            ++resolved;
            max_re = std::max(max_re, std::abs(e.lambda.real()));
        }
    json summary = {{"n_xi", cfg.n_xi},
                    {"n_f", S.n_f},
                    {"n_f2", S.n_f2},
                    {"eigenvalues", total},
                    {"resolved", resolved},
                    {"max_abs_re_resolved", max_re},
                    {"n_critical", tr.n_critical},
                    {"n_line_chains", tr.n_line_chains},
                    {"n_loops", tr.n_loops}};
    if (w.degenerate || w.amplitude() == 0.0) {
        std::ofstream os(c.out / "overlay.csv");
        os << std::setprecision(17) << "xi,j,branch,re_lambda,im_lambda,nearest_error\n";
        double worst = 0.0;
        const int jmax = std::min(10, S.n_f);
        for (size_t m = 0; m < S.xi.size(); ++m)
            for (int j = -jmax; j <= jmax; ++j) {
                CVec ev = constant_symbol(c.sys, w, S.xi[m], j);
                for (int b = 0; b < ev.size(); ++b) {
                    double best = 1e300;
                    for (const auto& e : S.eigs[m]) best = std::min(best, std::abs(e.lambda - ev(b)));
                    const double rel = best / (1.0 + std::abs(ev(b)));
                    worst = std::max(worst, rel);
                    os << S.xi[m] << ',' << j << ',' << b << ',' << ev(b).real() << ',' << ev(b).imag() << ',' << best
                       << '\n';
                }
            }
        summary["overlay_max_rel_error"] = worst;
    } else if (c.sys.kind == SystemKind::KdV) {
        LargeBranchResult lb = large_branch_asymptotics(tr, w.k);
        json bands = json::array();
        for (const auto& b : lb.bands) bands.push_back({{"band", b.band}, {"third", b.third}, {"mean_im", b.mean_im}});
        summary["large_branch"] = {{"bands", bands}, {"limit_6k", lb.limit_k}, {"limit_6k3", lb.limit_k3}};
    }
    write_json(c.out / "spectrum_summary.json", summary);
    std::cout << "critical " << tr.n_critical << ", lines " << tr.n_line_chains << ", loops " << tr.n_loops << '\n';
    return 0;
}

int cmd_check(Context& c) {
    StabilityConfig cfg = stability_config_from_json(section(c.raw, "check"));
    c.materialized["check"] = stability_config_to_json(cfg);
    finish_config(c);
    StabilityReport r = full_report(c.sys, c.wave.wave, cfg);
    write_json(c.out / "report.json", report_to_json(r));
    const std::string text = report_to_text(r);
    std::ofstream(c.out / "report.txt") << text;
    std::cout << text;
    std::set<std::string> conds = cfg.conditions;
    if (conds.empty()) {
        auto a = applicable_conditions(r);
        conds.insert(a.begin(), a.end());
    }
    return exit_code(r, conds);
}

void save_states(const Trajectory& tr, const std::string& which, const fs::path& out) {
    if (which == "none" || tr.states.empty()) return;
    if (which == "final") {
        write_state_binary(tr.states.back(), (out / "state_final.bin").string());
        return;
    }
    for (size_t i = 0; i < tr.states.size(); ++i) {
        std::ostringstream name;
        name << "state_" << std::setw(4) << std::setfill('0') << i << ".bin";
        write_state_binary(tr.states[i], (out / name.str()).string());
    }
}

json fit_to_json(const DecayFit& f) {
    return {{"exponent", f.exponent},         {"prefactor", f.prefactor},           {"t0", f.t0},
            {"t1", f.t1},                     {"residual", f.residual},             {"samples", f.samples},
            {"exponent_first", f.exponent_first}, {"exponent_second", f.exponent_second}, {"drift", f.drift},
            {"power_law", f.power_law}};
}

int cmd_simulate(Context& c) {
    if (!c.raw.contains("simulate")) throw ConfigError("config needs a simulate section");
    SimulateConfig s = simulate_from_json(c.raw.at("simulate"));
    c.materialized["simulate"] = simulate_to_json(s);
    finish_config(c);
    const WaveProfile& w = c.wave.wave;
    SampledLine W0 = make_data(s.data, s.n_cells, s.pts_per_cell, c.sys.d, c.seed);
    Trajectory tr;
    if (s.mode == "linear") {
        tr = evolve_linear(c.sys, w, W0, s.times.times, s.linear);
    } else {
        if (c.sys.kind != SystemKind::Parabolic) throw ConfigError("nonlinear runs need a parabolic system");
        SampledLine U0 = wave_on_line(w, s.n_cells, s.pts_per_cell);
        U0.values += W0.values;
        tr = evolve_parabolic_nonlinear(c.sys, w, U0, s.times.times, s.nonlinear);
    }
    for (const std::string& name : s.sm_norms) {
        const NormSpec X = norm_from_string(name);
        std::vector<double> v, vh;
        for (const SampledLine& st : tr.states) {
            if (s.mode == "linear") {
                SmNormOptions o;
                o.xi_cut = s.sm_xi_cut;
                SmNormResult r = compute_sm_norm(st, w, X, o);
                v.push_back(r.value);
                vh.push_back(r.value_half_cut);
            } else {
                SmDistanceOptions o;
                o.xi_cut = s.sm_xi_cut;
                v.push_back(compute_sm_distance(st, w, X, o).value);
            }
        }
        if (s.mode == "linear") {
            tr.norms["N_" + name] = v;
            tr.norms["N_" + name + "_half"] = vh;
        } else {
            tr.norms["delta_" + name] = v;
        }
    }
    write_norms_csv(tr, (c.out / "norms.csv").string());
    save_states(tr, s.save_states, c.out);

    int code = 0;
    json summary = {{"mode", s.mode},
                    {"samples", tr.times.size()},
                    {"requested", s.times.times.size()},
                    {"truncated", tr.truncated},
                    {"note", tr.note}};
    if (tr.truncated) code = 2;
    if (s.mode == "linear" && c.sys.kind == SystemKind::KdV && !tr.times.empty()) {
        const double rate = crude_growth_rate(w);
        const auto& l2 = tr.norms.at("L2");
        double worst = 0.0;
        for (size_t i = 0; i < tr.times.size(); ++i) {
            const double bound = std::exp(std::abs(tr.times[i] - tr.times[0]) * rate) * l2[0] * (1.0 + 1e-6);
            if (bound > 0.0) worst = std::max(worst, l2[i] / bound);
        }
        const bool ok = worst <= 1.0;
        summary["crude_bound"] = {{"rate", rate}, {"max_ratio", worst}, {"pass", ok}};
        if (!ok) code = 2;
    }
    if (!s.fit_series.empty()) {
        auto it = tr.norms.find(s.fit_series);
        if (it == tr.norms.end()) throw ConfigError("unknown fit series '" + s.fit_series + "'");
        DecayFit f = fit_decay(tr.times, it->second, s.fit_t0, s.fit_t1, s.drift_tol);
        summary["fit"] = fit_to_json(f);
        summary["fit"]["series"] = s.fit_series;
        if (s.has_expect) {
            const bool inside = f.exponent >= s.expect_min && f.exponent <= s.expect_max;
            summary["fit"]["expect"] = {{"min", s.expect_min}, {"max", s.expect_max}, {"inside", inside}};
            if (!inside)
                code = 2;
            else if (!f.power_law && code == 0)
                code = 3;
        }
    }
    summary["exit_code"] = code;
    write_json(c.out / "summary.json", summary);
    std::cout << summary.dump(2) << '\n';
    return code;
}

void write_fields_csv(const fs::path& p, const std::vector<double>& times, const std::vector<ModulationField>& fields) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    const int nq = fields.empty() ? 0 : static_cast<int>(fields[0].M.cols());
    os << std::setprecision(17) << "t,cell";
    for (int j = 0; j < nq; ++j) os << ",M" << j;
    os << ",kappa,phase,psi\n";
    for (size_t i = 0; i < fields.size(); ++i) {
        const ModulationField& f = fields[i];
        for (int c = 0; c < f.n_cells; ++c) {
            os << times[i] << ',' << c;
            for (int j = 0; j < nq; ++j) os << ',' << f.M(c, j);
            os << ',' << f.kappa(c) << ',' << f.phase(c) << ',' << (f.psi.size() ? f.psi(c) : 0.0) << '\n';
        }
    }
}

int cmd_whitham(Context& c) {
    WhithamConfig wc = whitham_from_json(section(c.raw, "whitham"));
    wc.tabulation.profile = c.popt;
    c.materialized["whitham"] = whitham_to_json(wc);
    finish_config(c);
    const WaveProfile& w = c.wave.wave;
    int code = 0;

    AveragedMaps A = tabulate_averages(c.sys, w, wc.tabulation);
    write_json(c.out / "averaged_maps.json", averaged_maps_to_json(A));
    const RVec q0 = w.family_coords();
    CharacteristicResult ch = characteristic_matrix(A, q0);
    json speeds = {{"hyperbolic", ch.hyperbolic}, {"min_gap", ch.min_gap}, {"loo_error", A.loo_error}};
    for (int i = 0; i < ch.speeds.size(); ++i) speeds["speeds"].push_back({ch.speeds(i).real(), ch.speeds(i).imag()});
    if (wc.spectral_check) {
        CriticalExpansion E = critical_expansion(c.sys, w);
        SpeedComparison sc = compare_speeds(A, w, E);
        speeds["averaged"] = sc.averaged;
        for (const cd& z : sc.spectral) speeds["spectral"].push_back({z.real(), z.imag()});
        speeds["max_rel_error"] = sc.max_rel_error;
        speeds["tol"] = wc.speed_tol;
        speeds["pass"] = sc.max_rel_error <= wc.speed_tol;
        if (sc.max_rel_error > wc.speed_tol) code = 2;
    }
    write_json(c.out / "speeds.json", speeds);

    const double N = wc.n_cells, a = wc.psi_amplitude, sh = wc.psi_sharpness;
    const bool ramp = wc.psi_shape == "tanh_sin";
    ScalarFn psi0 = [=](double x) { return ramp ? a * std::tanh(sh * std::sin(kTwoPi * x / N)) : 0.0; };
    ScalarFn psi0_x = [=](double x) {
        if (!ramp) return 0.0;
        const double t = std::tanh(sh * std::sin(kTwoPi * x / N));
        return a * (1.0 - t * t) * sh * std::cos(kTwoPi * x / N) * kTwoPi / N;
    };
    SampledLine U0(wc.n_cells, wc.pts_per_cell, c.sys.d);
    // modulated wave Ubar o Psi0 with Psi0 = (Id - psi0)^{-1}, plus the bump
    for (int i = 0; i < U0.size(); ++i)
        U0.values.row(i) = w.eval(invert_phase(psi0, psi0_x, U0.x(i))).transpose().cast<cd>();
    U0.values += make_data(wc.bump, wc.n_cells, wc.pts_per_cell, c.sys.d, c.seed).values;
    ModulationField init = effective_data(c.sys, w, U0, psi0, psi0_x);
    write_fields_csv(c.out / "effective_data.csv", {0.0}, {init});

    json summary = {{"hyperbolic", ch.hyperbolic}};
    if (wc.solve) {
        WhithamTrajectory wt = solve_whitham(A, init, w.k, w.omega, wc.times.times, wc.solver);
        write_fields_csv(c.out / "whitham_fields.csv", wt.times, wt.fields);
        summary["whitham"] = {{"samples", wt.times.size()}, {"truncated", wt.truncated}, {"note", wt.note}};
        if (wt.truncated) code = 2;
        if (wc.compare) {
            Trajectory full;
            SampledLine ubar = wave_on_line(w, wc.n_cells, wc.pts_per_cell);
            if (c.sys.kind == SystemKind::KdV) {
                SampledLine W0 = U0;
                W0.values -= ubar.values;
                full = evolve_linear(c.sys, w, W0, wt.times);
                for (SampledLine& st : full.states) st.values += ubar.values;
            } else {
                full = evolve_parabolic_nonlinear(c.sys, w, U0, wt.times);
            }
            std::vector<ModulationField> ext = extract_modulation(c.sys, full, w);
            const size_t n = std::min(ext.size(), wt.fields.size());
            std::vector<double> times(wt.times.begin(), wt.times.begin() + n);
            ext.resize(n);
            std::vector<ModulationField> red(wt.fields.begin(), wt.fields.begin() + n);
            const RVec bg = init.M.colwise().mean().transpose();
            RVec background(bg.size() + 1);
            background << bg, w.k;
            Comparison cmp = compare(times, ext, red, wc.p, background, wc.fit_t0, wc.fit_t1);
            write_comparison_csv(cmp, (c.out / "comparison.csv").string());
            write_fields_csv(c.out / "extracted_fields.csv", times, ext);
            json fits = json::object();
            for (const auto& [q, f] : cmp.fits) fits[q] = fit_to_json(f);
            summary["comparison"] = {{"samples", n}, {"full_truncated", full.truncated}, {"fits", fits}};
            if (full.truncated) code = 2;
        }
    }
    summary["exit_code"] = code;
    write_json(c.out / "whitham_summary.json", summary);
    std::cout << speeds.dump(2) << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"modulated periodic wave toolkit"};
    app.require_subcommand(1, 1);
    std::string config, out = "out";
    int n_threads = 1;
    std::int64_t seed = -1;
    for (const char* name : {"profile", "spectrum", "check", "simulate", "whitham"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "run configuration (JSON)")->required();
        sub->add_option("--out", out, "output directory");
        sub->add_option("--threads", n_threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "overrides the config seed")->check(CLI::NonNegativeNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 64;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        set_threads(n_threads);
        Context c = load(config, out, seed);
        if (cmd == "profile") return cmd_profile(c);
        if (cmd == "spectrum") return cmd_spectrum(c);
        if (cmd == "check") return cmd_check(c);
        if (cmd == "simulate") return cmd_simulate(c);
        return cmd_whitham(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 64;
    } catch (const ResolutionError& e) {
        std::cerr << "inconclusive: " << e.what() << '\n';
        return 3;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 64;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
