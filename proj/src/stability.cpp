#include "modwave/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mw {

using nlohmann::json;

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Pass: return "pass";
        case Verdict::Fail: return "fail";
        case Verdict::Inconclusive: return "inconclusive";
        default: return "not_run";
    }
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "pass") return Verdict::Pass;
    if (s == "fail") return Verdict::Fail;
    if (s == "inconclusive") return Verdict::Inconclusive;
    if (s == "not_run") return Verdict::NotRun;
    throw ConfigError("unknown verdict '" + s + "'");
}

namespace {

Verdict pass_if(bool b) { return b ? Verdict::Pass : Verdict::Fail; }

void require_sweep(const FloquetSpectrum& S, const CheckOptions& opt) {
    if (S.xi.empty()) throw ConfigError("empty spectrum");
    if (static_cast<int>(S.xi.size()) < opt.min_xi_samples)
        throw ConfigError("sweep has " + std::to_string(S.xi.size()) + " xi samples, fewer than the minimum " +
                          std::to_string(opt.min_xi_samples));
}

}  // namespace

D1Record check_d1(const FloquetSpectrum& S, const CheckOptions& opt) {
    require_sweep(S, opt);
    D1Record r;
    r.worst_re = -std::numeric_limits<double>::infinity();
    for (size_t m = 0; m < S.xi.size(); ++m)
        for (const auto& e : S.eigs[m]) {
            if (!e.resolved || std::abs(e.lambda) <= opt.zero_radius) continue;
            ++r.n_checked;
            if (e.lambda.real() > r.worst_re) {
                r.worst_re = e.lambda.real();
                r.worst_xi = S.xi[m];
                r.worst_lambda = e.lambda;
            }
        }
    r.verdict = pass_if(r.n_checked == 0 || r.worst_re < -opt.margin_floor);
    if (r.n_checked == 0) r.worst_re = 0.0;
    return r;
}

D2Record check_d2(const FloquetSpectrum& S, const TrackResult& tr, const CheckOptions& opt) {
    if (S.xi.empty()) throw ConfigError("empty spectrum");
    D2Record r;
    r.sup_ratio = -std::numeric_limits<double>::infinity();
    for (size_t m = 0; m < S.xi.size(); ++m) {
        const double xi = S.xi[m];
        if (xi == 0.0) continue;
        for (const auto& e : S.eigs[m]) {
            if (!e.resolved) continue;
            double q = e.lambda.real() / (xi * xi);
            if (q > r.sup_ratio) {
                r.sup_ratio = q;
                r.sup_xi = xi;
            }
        }
    }
    // extrapolate -Re/xi^2 to xi = 0 on each critical curve with a fit a + b xi^2
    r.theta_critical = std::numeric_limits<double>::infinity();
    int used = 0;
    for (const auto& c : tr.curves) {
        if (!c.critical) continue;
        std::vector<std::pair<double, double>> pts;
        for (size_t i = 0; i < c.xi.size(); ++i)
            if (c.xi[i] != 0.0) pts.push_back({std::abs(c.xi[i]), c.lambda[i].real() / (c.xi[i] * c.xi[i])});
        std::sort(pts.begin(), pts.end());
        const int n = std::min<int>(opt.d2_fit_points, pts.size());
        if (n < 2) continue;
        RMat V(n, 2);
        RVec b(n);
        for (int i = 0; i < n; ++i) {
            V(i, 0) = 1.0;
            V(i, 1) = pts[i].first * pts[i].first;
            b(i) = pts[i].second;
        }
        RVec coef = V.colPivHouseholderQr().solve(b);
        r.theta_critical = std::min(r.theta_critical, -coef(0));
        ++used;
    }
    if (used == 0) throw ConfigError("no critical curve samples near xi = 0");
    r.theta = std::min(-r.sup_ratio, r.theta_critical);
    r.verdict = pass_if(r.theta > opt.theta_floor);
    return r;
}

D3Record check_d3(const CriticalExpansion& E, SystemKind kind, int d) {
    D3Record r;
    r.multiplicity = E.multiplicity;
    r.geometric_multiplicity = E.geometric_multiplicity;
    r.gap = E.gap;
    r.informational = kind == SystemKind::KdV;
    r.expected = kind == SystemKind::KdV ? 3 : d + 1;
    r.verdict = pass_if(r.multiplicity == r.expected);
    return r;
}

HRecord check_h(const std::vector<cd>& slopes, const CheckOptions& opt) {
    HRecord r;
    r.slopes = slopes;
    r.min_gap = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < slopes.size(); ++i)
        for (size_t j = i + 1; j < slopes.size(); ++j) r.min_gap = std::min(r.min_gap, std::abs(slopes[i] - slopes[j]));
    if (slopes.size() < 2) r.min_gap = 0.0;
    r.verdict = pass_if(slopes.size() >= 2 && r.min_gap > opt.h_tol);
    return r;
}

HRecord check_h(const CriticalExpansion& E, const CheckOptions& opt) {
    HRecord r = check_h(E.slopes, opt);
    if (E.degenerate_slopes) r.verdict = Verdict::Fail;
    return r;
}

ImagAxisRecord check_imag_axis(const FloquetSpectrum& S, const CheckOptions& opt) {
    if (S.xi.empty()) throw ConfigError("empty spectrum");
    ImagAxisRecord r;
    for (const auto& row : S.eigs)
        for (const auto& e : row)
            if (e.resolved) r.max_abs_re = std::max(r.max_abs_re, std::abs(e.lambda.real()));
    r.verdict = pass_if(r.max_abs_re < opt.imag_tol);
    return r;
}

namespace {

struct Sample {
    double xi;
    double y;
};

struct DerivSample {
    double xi;
    double value;
    double err;
};

// Five-point central differences of order 2 or 3 at steps h and 2h, Richardson combined.
std::vector<std::optional<DerivSample>> glued_derivatives(const std::vector<Sample>& s, bool cyclic, int order, double h) {
    const int n = static_cast<int>(s.size());
    std::vector<std::optional<DerivSample>> out(n);
    auto at = [&](int i) -> const Sample* {
        if (cyclic) return &s[pos_mod(i, n)];
        if (i < 0 || i >= n) return nullptr;
        return &s[i];
    };
    for (int i = 0; i < n; ++i) {
        if (!cyclic && (i < 4 || i + 4 >= n)) continue;
        if (cyclic && n < 9) continue;
        auto f = [&](int o) { return at(i + o)->y; };
        double a, b, v;
        if (order == 2) {
            auto d2 = [&](int q, double hh) {
                return (-f(2 * q) + 16 * f(q) - 30 * f(0) + 16 * f(-q) - f(-2 * q)) / (12 * hh * hh);
            };
            a = d2(1, h);
            b = d2(2, 2 * h);
            v = (16 * a - b) / 15;
        } else {
            auto d3 = [&](int q, double hh) { return (f(2 * q) - 2 * f(q) + 2 * f(-q) - f(-2 * q)) / (2 * hh * hh * hh); };
            a = d3(1, h);
            b = d3(2, 2 * h);
            v = (4 * a - b) / 3;
        }
        out[i] = DerivSample{s[i].xi, v, std::abs(a - b)};
    }
    return out;
}

struct FamilyScan {
    double min_abs = std::numeric_limits<double>::infinity();
    double min_xi = 0.0;
    int samples = 0;
    double scale = 0.0;
    double max_err = 0.0;
};

void scan_family(const std::vector<std::optional<DerivSample>>& d, const std::vector<char>& excluded, bool cyclic,
                 const std::string& name, const CheckOptions& opt, FamilyScan& fs, std::vector<SignChange>& changes) {
    const int n = static_cast<int>(d.size());
    // start a cyclic scan just after an excluded or missing sample so segments are not split
    int start = 0;
    if (cyclic)
        for (int i = 0; i < n; ++i)
            if (!d[i] || excluded[i]) {
                start = (i + 1) % n;
                break;
            }
    int last_sign = 0;
    double last_xi = 0.0;
    for (int q = 0; q < n; ++q) {
        const int i = cyclic ? (start + q) % n : q;
        if (!d[i] || excluded[i]) {
            last_sign = 0;
            continue;
        }
        const DerivSample& s = *d[i];
        fs.samples++;
        fs.scale = std::max(fs.scale, std::abs(s.value));
        fs.max_err = std::max(fs.max_err, s.err);
        if (std::abs(s.value) < fs.min_abs) {
            fs.min_abs = std::abs(s.value);
            fs.min_xi = s.xi;
        }
        if (std::abs(s.value) <= 2.0 * s.err + opt.a_floor) continue;
        const int sg = s.value > 0 ? 1 : -1;
        if (last_sign != 0 && sg != last_sign) changes.push_back({name, last_xi, s.xi});
        last_sign = sg;
        last_xi = s.xi;
    }
}

}  // namespace

CondARecord check_a(const TrackResult& tr, const CheckOptions& opt) {
    CondARecord r;
    if (tr.curves.empty()) throw ConfigError("no spectral curves");
    double step = 0.0;
    for (const auto& c : tr.curves)
        if (c.xi.size() >= 2) {
            step = c.xi[1] - c.xi[0];
            break;
        }
    if (step <= 0.0) throw ConfigError("curves carry no xi step");
    r.xi_step = step;
    r.loop_window = opt.a_window_steps * step;

    FamilyScan line, loop;
    bool have_line = false;
    for (const Chain& ch : tr.chains) {
        if (ch.cls != CurveClass::Line && ch.cls != CurveClass::Loop) continue;
        const bool is_line = ch.cls == CurveClass::Line;
        int ref = 0;
        if (is_line) {
            // only the main line, restricted to bands near its critical band
            if (ch.bands.size() < 3) continue;
            double best = std::numeric_limits<double>::infinity();
            for (size_t p = 0; p < ch.bands.size(); ++p) {
                const SpectralCurve& c = tr.curves[ch.bands[p]];
                double mv = c.critical ? -1.0 : std::numeric_limits<double>::infinity();
                for (const cd& l : c.lambda) mv = std::min(mv, std::abs(l));
                if (mv < best) {
                    best = mv;
                    ref = static_cast<int>(p);
                }
            }
        }
        // split the chain into runs of consecutive samples
        std::vector<std::vector<Sample>> runs(1);
        for (size_t p = 0; p < ch.bands.size(); ++p) {
            const SpectralCurve& c = tr.curves[ch.bands[p]];
            if (is_line && std::abs(static_cast<int>(p) - ref) > opt.a_line_bands) {
                if (!runs.back().empty()) runs.emplace_back();
                continue;
            }
            for (size_t i = 0; i < c.xi.size(); ++i) {
                if (i > 0 && c.xi_index[i] != c.xi_index[i - 1] + 1 && !runs.back().empty()) runs.emplace_back();
                runs.back().push_back({c.xi[i], c.lambda[i].imag()});
            }
        }
        const bool cyclic = ch.closed && runs.size() == 1;
        for (const auto& run : runs) {
            if (run.size() < 9) continue;
            auto d = glued_derivatives(run, cyclic, is_line ? 3 : 2, step);
            std::vector<char> excluded(run.size(), 0);
            if (!is_line)
                for (size_t i = 0; i < run.size(); ++i) excluded[i] = std::abs(run[i].xi) < r.loop_window;
            if (is_line) have_line = true;
            scan_family(d, excluded, cyclic, is_line ? "line" : "loop", opt, is_line ? line : loop, r.sign_changes);
        }
    }
    if (!have_line) throw ConfigError("no line family to check");
    r.line_samples = line.samples;
    r.loop_samples = loop.samples;
    r.line_min_abs_d3 = line.min_abs;
    r.line_min_xi = line.min_xi;
    r.loop_min_abs_d2 = loop.samples ? loop.min_abs : 0.0;
    r.loop_min_xi = loop.min_xi;
    r.richardson_rel = line.max_err / line.scale;
    if (loop.samples) r.richardson_rel = std::max(r.richardson_rel, loop.max_err / loop.scale);
    if (r.richardson_rel > opt.a_richardson_tol)
        throw ResolutionError("finite differences along the curves disagree by " + std::to_string(r.richardson_rel) +
                              " relative; refine the xi grid");
    bool ok = r.sign_changes.empty() && r.line_min_abs_d3 > opt.a_floor;
    if (loop.samples) ok = ok && r.loop_min_abs_d2 > opt.a_floor;
    else r.note = "no loop present";
    r.verdict = pass_if(ok);
    return r;
}

std::vector<std::string> applicable_conditions(const StabilityReport& r) {
    if (r.kind == "kdv") return {"d1", "d2", "d3", "h", "imag_axis", "a"};
    return {"d1", "d2", "d3", "h"};
}

namespace {

Verdict verdict_of(const StabilityReport& r, const std::string& c) {
    if (c == "d1") return r.d1.verdict;
    if (c == "d2") return r.d2.verdict;
    if (c == "d3") return r.d3.verdict;
    if (c == "h") return r.h.verdict;
    if (c == "imag_axis") return r.imag_axis.verdict;
    if (c == "a") return r.cond_a.verdict;
    throw ConfigError("unknown condition '" + c + "'");
}

}  // namespace

int exit_code(const StabilityReport& r, const std::set<std::string>& conditions) {
    std::vector<std::string> cs(conditions.begin(), conditions.end());
    if (cs.empty()) cs = applicable_conditions(r);
    bool fail = false, inconclusive = false;
    for (const auto& c : cs) {
        Verdict v = verdict_of(r, c);
        if (v == Verdict::Fail) fail = true;
        if (v == Verdict::Inconclusive || v == Verdict::NotRun) inconclusive = true;
    }
    if (fail) return 2;
    if (inconclusive) return 3;
    return 0;
}

StabilityReport full_report(const SystemSpec& sys, const WaveProfile& wave, const StabilityConfig& cfg) {
    for (const auto& c : cfg.conditions)
        if (c != "d1" && c != "d2" && c != "d3" && c != "h" && c != "imag_axis" && c != "a")
            throw ConfigError("unknown condition '" + c + "'");
    if (cfg.n_xi < 1) throw ConfigError("xi grid must not be empty");
    StabilityReport r;
    r.system = sys.name;
    r.kind = sys.kind == SystemKind::KdV ? "kdv" : "parabolic";
    r.header = "D2 is checked in the decay orientation Re(lambda) <= -theta xi^2 near xi = 0; "
               "the reversed inequality would not express diffusive decay.";
    r.tolerances = stability_config_to_json(cfg);
    const bool kdv = sys.kind == SystemKind::KdV;

    auto mark_all = [&](Verdict v) {
        r.d1.verdict = r.d2.verdict = r.d3.verdict = r.h.verdict = v;
        if (kdv) r.imag_axis.verdict = r.cond_a.verdict = v;
    };
    FloquetSpectrum S;
    TrackResult tr;
    try {
        S = sweep(sys, wave, uniform_xi_grid(cfg.n_xi), cfg.n_f, cfg.n_f2, cfg.sweep);
        tr = track_curves(S, cfg.track);
    } catch (const ResolutionError& e) {
        r.error = e.what();
        mark_all(Verdict::Inconclusive);
        return r;
    }
    r.n_critical = tr.n_critical;
    r.n_line_chains = tr.n_line_chains;
    r.n_loops = tr.n_loops;

    r.d1 = check_d1(S, cfg.checks);
    try {
        r.d2 = check_d2(S, tr, cfg.checks);
    } catch (const ConfigError& e) {
        r.d2.verdict = Verdict::Inconclusive;
        r.error += std::string(r.error.empty() ? "" : "; ") + e.what();
    }
    ExpansionOptions eo = cfg.expansion;
    eo.n_f = std::max({eo.n_f, active_modes(wave), 8});
    try {
        CriticalExpansion E = critical_expansion(sys, wave, eo);
        r.d3 = check_d3(E, sys.kind, sys.d);
        r.h = check_h(E, cfg.checks);
    } catch (const Error& e) {
        r.d3.verdict = r.h.verdict = Verdict::Inconclusive;
        r.error += std::string(r.error.empty() ? "" : "; ") + e.what();
    }
    if (kdv) {
        r.imag_axis = check_imag_axis(S, cfg.checks);
        try {
            r.cond_a = check_a(tr, cfg.checks);
        } catch (const Error& e) {
            r.cond_a.verdict = Verdict::Inconclusive;
            r.cond_a.note = e.what();
        }
        try {
            r.large_branch = large_branch_asymptotics(tr, wave.k);
        } catch (const ConfigError&) {
        }
    }
    return r;
}

namespace {

json cjson(cd z) { return json::array({z.real(), z.imag()}); }
cd cfrom(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

// json has no infinities; they are stored as strings
json num(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}
double numf(const json& j) {
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    return j.get<double>();
}

}  // namespace

json report_to_json(const StabilityReport& r) {
    json j;
    j["system"] = r.system;
    j["kind"] = r.kind;
    j["header"] = r.header;
    j["error"] = r.error;
    j["curves"] = {{"n_critical", r.n_critical}, {"n_line_chains", r.n_line_chains}, {"n_loops", r.n_loops}};
    j["d1"] = {{"verdict", to_string(r.d1.verdict)},
               {"worst_re", num(r.d1.worst_re)},
               {"worst_xi", r.d1.worst_xi},
               {"worst_lambda", cjson(r.d1.worst_lambda)},
               {"n_checked", r.d1.n_checked}};
    j["d2"] = {{"verdict", to_string(r.d2.verdict)},
               {"theta", num(r.d2.theta)},
               {"theta_critical", num(r.d2.theta_critical)},
               {"sup_ratio", num(r.d2.sup_ratio)},
               {"sup_xi", r.d2.sup_xi}};
    j["d3"] = {{"verdict", to_string(r.d3.verdict)},
               {"multiplicity", r.d3.multiplicity},
               {"expected", r.d3.expected},
               {"geometric_multiplicity", r.d3.geometric_multiplicity},
               {"gap", r.d3.gap},
               {"informational", r.d3.informational}};
    json sl = json::array();
    for (const cd& s : r.h.slopes) sl.push_back(cjson(s));
    j["h"] = {{"verdict", to_string(r.h.verdict)}, {"min_gap", num(r.h.min_gap)}, {"slopes", sl}};
    j["imag_axis"] = {{"verdict", to_string(r.imag_axis.verdict)}, {"max_abs_re", r.imag_axis.max_abs_re}};
    json sc = json::array();
    for (const auto& s : r.cond_a.sign_changes) sc.push_back({{"family", s.family}, {"xi_left", s.xi_left}, {"xi_right", s.xi_right}});
    const CondARecord& a = r.cond_a;
    j["cond_a"] = {{"verdict", to_string(a.verdict)},
                   {"line_min_abs_d3", num(a.line_min_abs_d3)},
                   {"line_min_xi", a.line_min_xi},
                   {"loop_min_abs_d2", num(a.loop_min_abs_d2)},
                   {"loop_min_xi", a.loop_min_xi},
                   {"loop_window", a.loop_window},
                   {"xi_step", a.xi_step},
                   {"line_samples", a.line_samples},
                   {"loop_samples", a.loop_samples},
                   {"richardson_rel", num(a.richardson_rel)},
                   {"sign_changes", sc},
                   {"note", a.note}};
    if (r.large_branch) {
        json bands = json::array();
        for (const auto& b : r.large_branch->bands) bands.push_back({{"band", b.band}, {"third", b.third}, {"mean_im", b.mean_im}});
        j["large_branch"] = {{"limit_6k", r.large_branch->limit_k}, {"limit_6k3", r.large_branch->limit_k3}, {"bands", bands}};
    } else {
        j["large_branch"] = nullptr;
    }
    j["tolerances"] = r.tolerances;
    return j;
}

StabilityReport report_from_json(const json& j) {
    StabilityReport r;
    try {
        r.system = j.at("system");
        r.kind = j.at("kind");
        r.header = j.at("header");
        r.error = j.at("error");
        r.n_critical = j.at("curves").at("n_critical");
        r.n_line_chains = j.at("curves").at("n_line_chains");
        r.n_loops = j.at("curves").at("n_loops");
        const json& d1 = j.at("d1");
        r.d1 = {verdict_from_string(d1.at("verdict")), numf(d1.at("worst_re")), d1.at("worst_xi"), cfrom(d1.at("worst_lambda")),
                d1.at("n_checked")};
        const json& d2 = j.at("d2");
        r.d2 = {verdict_from_string(d2.at("verdict")), numf(d2.at("theta")), numf(d2.at("theta_critical")),
                numf(d2.at("sup_ratio")), d2.at("sup_xi")};
        const json& d3 = j.at("d3");
        r.d3 = {verdict_from_string(d3.at("verdict")), d3.at("multiplicity"), d3.at("expected"),
                d3.at("geometric_multiplicity"), d3.at("gap"), d3.at("informational")};
        const json& h = j.at("h");
        r.h.verdict = verdict_from_string(h.at("verdict"));
        r.h.min_gap = numf(h.at("min_gap"));
        for (const auto& s : h.at("slopes")) r.h.slopes.push_back(cfrom(s));
        r.imag_axis = {verdict_from_string(j.at("imag_axis").at("verdict")), j.at("imag_axis").at("max_abs_re")};
        const json& a = j.at("cond_a");
        CondARecord& c = r.cond_a;
        c.verdict = verdict_from_string(a.at("verdict"));
        c.line_min_abs_d3 = numf(a.at("line_min_abs_d3"));
        c.line_min_xi = a.at("line_min_xi");
        c.loop_min_abs_d2 = numf(a.at("loop_min_abs_d2"));
        c.loop_min_xi = a.at("loop_min_xi");
        c.loop_window = a.at("loop_window");
        c.xi_step = a.at("xi_step");
        c.line_samples = a.at("line_samples");
        c.loop_samples = a.at("loop_samples");
        c.richardson_rel = numf(a.at("richardson_rel"));
        for (const auto& s : a.at("sign_changes")) c.sign_changes.push_back({s.at("family"), s.at("xi_left"), s.at("xi_right")});
        c.note = a.at("note");
        if (!j.at("large_branch").is_null()) {
            LargeBranchResult lb;
            lb.limit_k = j["large_branch"].at("limit_6k");
            lb.limit_k3 = j["large_branch"].at("limit_6k3");
            for (const auto& b : j["large_branch"].at("bands")) lb.bands.push_back({b.at("band"), b.at("third"), b.at("mean_im")});
            r.large_branch = lb;
        }
        r.tolerances = j.at("tolerances");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed stability report: ") + e.what());
    }
    return r;
}

std::string report_to_text(const StabilityReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << "system " << r.system << " (" << r.kind << ")\n" << r.header << "\n";
    if (!r.error.empty()) os << "error: " << r.error << "\n";
    os << "curves: " << r.n_critical << " critical, " << r.n_line_chains << " line chains, " << r.n_loops << " loops\n";
    os << "D1        " << to_string(r.d1.verdict) << "  worst Re " << r.d1.worst_re << " at xi " << r.d1.worst_xi << "\n";
    os << "D2        " << to_string(r.d2.verdict) << "  theta " << r.d2.theta << " (critical " << r.d2.theta_critical
       << ", sup Re/xi^2 " << r.d2.sup_ratio << ")\n";
    os << "D3        " << to_string(r.d3.verdict) << "  multiplicity " << r.d3.multiplicity << " expected " << r.d3.expected
       << (r.d3.informational ? " (informational)" : "") << "\n";
    os << "H         " << to_string(r.h.verdict) << "  min slope gap " << r.h.min_gap << "\n";
    if (r.kind == "kdv") {
        os << "imag_axis " << to_string(r.imag_axis.verdict) << "  max |Re| " << r.imag_axis.max_abs_re << "\n";
        os << "A         " << to_string(r.cond_a.verdict) << "  min |d3 Im| line " << r.cond_a.line_min_abs_d3
           << ", min |d2 Im| loop " << r.cond_a.loop_min_abs_d2 << " (window " << r.cond_a.loop_window << ")";
        if (!r.cond_a.note.empty()) os << "  " << r.cond_a.note;
        os << "\n";
        for (const auto& s : r.cond_a.sign_changes)
            os << "  sign change on " << s.family << " between xi " << s.xi_left << " and " << s.xi_right << "\n";
        if (r.large_branch) {
            os << "large branches (6k = " << r.large_branch->limit_k << ", 6k^3 = " << r.large_branch->limit_k3 << "):";
            for (const auto& b : r.large_branch->bands)
                if (b.band >= 5 && b.band <= 10) os << " " << b.band << ":" << b.third;
            os << "\n";
        }
    }
    return os.str();
}

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& v) {
    if (j.contains(key)) v = j.at(key).get<T>();
}

}  // namespace

StabilityConfig stability_config_from_json(const json& j) {
    StabilityConfig c;
    try {
        if (!j.is_object()) throw ConfigError("stability config must be an object");
        read_opt(j, "n_f", c.n_f);
        read_opt(j, "n_f2", c.n_f2);
        read_opt(j, "n_xi", c.n_xi);
        if (j.contains("sweep")) {
            const json& s = j["sweep"];
            read_opt(s, "tol_abs", c.sweep.tol_abs);
            read_opt(s, "tol_rel", c.sweep.tol_rel);
            read_opt(s, "cluster_factor", c.sweep.cluster_factor);
        }
        if (j.contains("track")) {
            const json& s = j["track"];
            read_opt(s, "ambiguity_ratio", c.track.ambiguity_ratio);
            read_opt(s, "abs_floor", c.track.abs_floor);
            read_opt(s, "require_unambiguous", c.track.require_unambiguous);
        }
        if (j.contains("expansion")) {
            const json& s = j["expansion"];
            read_opt(s, "n_f", c.expansion.n_f);
            read_opt(s, "h1", c.expansion.h1);
            read_opt(s, "h2", c.expansion.h2);
            read_opt(s, "rank_tol", c.expansion.rank_tol);
        }
        if (j.contains("checks")) {
            const json& s = j["checks"];
            CheckOptions& o = c.checks;
            read_opt(s, "zero_radius", o.zero_radius);
            read_opt(s, "margin_floor", o.margin_floor);
            read_opt(s, "min_xi_samples", o.min_xi_samples);
            read_opt(s, "theta_floor", o.theta_floor);
            read_opt(s, "d2_fit_points", o.d2_fit_points);
            read_opt(s, "h_tol", o.h_tol);
            read_opt(s, "imag_tol", o.imag_tol);
            read_opt(s, "a_line_bands", o.a_line_bands);
            read_opt(s, "a_window_steps", o.a_window_steps);
            read_opt(s, "a_floor", o.a_floor);
            read_opt(s, "a_richardson_tol", o.a_richardson_tol);
        }
        if (j.contains("conditions"))
            for (const auto& s : j["conditions"]) c.conditions.insert(s.get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid stability config: ") + e.what());
    }
    if (c.n_xi < 1) throw ConfigError("xi grid must not be empty");
    if (c.n_f < 1) throw ConfigError("n_f must be positive");
    return c;
}

json stability_config_to_json(const StabilityConfig& c) {
    const CheckOptions& o = c.checks;
    return {{"n_f", c.n_f},
            {"n_f2", c.n_f2 > 0 ? c.n_f2 : second_truncation(c.n_f)},
            {"n_xi", c.n_xi},
            {"sweep", {{"tol_abs", c.sweep.tol_abs}, {"tol_rel", c.sweep.tol_rel}, {"cluster_factor", c.sweep.cluster_factor}}},
            {"track",
             {{"ambiguity_ratio", c.track.ambiguity_ratio},
              {"abs_floor", c.track.abs_floor},
              {"require_unambiguous", c.track.require_unambiguous}}},
            {"expansion", {{"n_f", c.expansion.n_f}, {"h1", c.expansion.h1}, {"h2", c.expansion.h2}, {"rank_tol", c.expansion.rank_tol}}},
            {"checks",
             {{"zero_radius", o.zero_radius},
              {"margin_floor", o.margin_floor},
              {"min_xi_samples", o.min_xi_samples},
              {"theta_floor", o.theta_floor},
              {"d2_fit_points", o.d2_fit_points},
              {"h_tol", o.h_tol},
              {"imag_tol", o.imag_tol},
              {"a_line_bands", o.a_line_bands},
              {"a_window_steps", o.a_window_steps},
              {"a_floor", o.a_floor},
              {"a_richardson_tol", o.a_richardson_tol}}},
            {"conditions", std::vector<std::string>(c.conditions.begin(), c.conditions.end())}};
}

}  // namespace mw
