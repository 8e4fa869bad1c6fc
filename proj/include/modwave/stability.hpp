#pragma once

#include <json.hpp>
#include <optional>
#include <set>
#include <string>

#include "modwave/floquet.hpp"

namespace mw {

enum class Verdict { Pass, Fail, Inconclusive, NotRun };
std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct D1Record {
    Verdict verdict = Verdict::NotRun;
    double worst_re = 0.0;
    double worst_xi = 0.0;
    cd worst_lambda = 0.0;
    int n_checked = 0;
};

struct D2Record {
    Verdict verdict = Verdict::NotRun;
    // theta = min(-sup Re/xi^2 over all resolved, extrapolated critical-branch value at 0)
    double theta = 0.0;
    double theta_critical = 0.0;
    double sup_ratio = 0.0;
    double sup_xi = 0.0;
};

struct D3Record {
    Verdict verdict = Verdict::NotRun;
    int multiplicity = 0;
    int expected = 0;
    int geometric_multiplicity = 0;
    double gap = 0.0;
    bool informational = false;
};

struct HRecord {
    Verdict verdict = Verdict::NotRun;
    double min_gap = 0.0;
    std::vector<cd> slopes;
};

struct ImagAxisRecord {
    Verdict verdict = Verdict::NotRun;
    double max_abs_re = 0.0;
};

struct SignChange {
    std::string family;
    double xi_left = 0.0;
    double xi_right = 0.0;
};

struct CondARecord {
    Verdict verdict = Verdict::NotRun;
    double line_min_abs_d3 = 0.0;
    double line_min_xi = 0.0;
    double loop_min_abs_d2 = 0.0;
    double loop_min_xi = 0.0;
    double loop_window = 0.0;
    double xi_step = 0.0;
    int line_samples = 0;
    int loop_samples = 0;
    double richardson_rel = 0.0;
    std::vector<SignChange> sign_changes;
    std::string note;
};

struct CheckOptions {
    double zero_radius = 1e-4;
    double margin_floor = 1e-8;
    int min_xi_samples = 16;
    double theta_floor = 1e-6;
    // number of smallest nonzero |xi| samples per critical curve used for the theta extrapolation
    int d2_fit_points = 6;
    double h_tol = 1e-8;
    double imag_tol = 1e-6;
    // line bands |band| <= a_line_bands around the critical band enter (A)
    int a_line_bands = 10;
    double a_window_steps = 10.0;
    double a_floor = 1e-6;
    double a_richardson_tol = 1e-2;
};

D1Record check_d1(const FloquetSpectrum& S, const CheckOptions& opt = {});
D2Record check_d2(const FloquetSpectrum& S, const TrackResult& tr, const CheckOptions& opt = {});
D3Record check_d3(const CriticalExpansion& E, SystemKind kind, int d);
HRecord check_h(const CriticalExpansion& E, const CheckOptions& opt = {});
HRecord check_h(const std::vector<cd>& slopes, const CheckOptions& opt = {});
ImagAxisRecord check_imag_axis(const FloquetSpectrum& S, const CheckOptions& opt = {});
CondARecord check_a(const TrackResult& tr, const CheckOptions& opt = {});

struct StabilityConfig {
    int n_f = 32;
    int n_f2 = 0;
    int n_xi = 128;
    ExpansionOptions expansion;
    SweepOptions sweep;
    TrackOptions track;
    CheckOptions checks;
    std::set<std::string> conditions;  // empty means all applicable
};

struct StabilityReport {
    std::string system;
    std::string kind;
    std::string header;
    D1Record d1;
    D2Record d2;
    D3Record d3;
    HRecord h;
    ImagAxisRecord imag_axis;
    CondARecord cond_a;
    int n_critical = 0;
    int n_line_chains = 0;
    int n_loops = 0;
    std::optional<LargeBranchResult> large_branch;
    std::string error;
    nlohmann::json tolerances;
};

// Sweep, track, expand and run the requested checks. Resolution problems turn the
// affected verdicts inconclusive instead of throwing.
StabilityReport full_report(const SystemSpec& sys, const WaveProfile& wave, const StabilityConfig& cfg);

// 0 all requested pass, 2 some fail, 3 inconclusive
int exit_code(const StabilityReport& r, const std::set<std::string>& conditions);
std::vector<std::string> applicable_conditions(const StabilityReport& r);

nlohmann::json report_to_json(const StabilityReport& r);
StabilityReport report_from_json(const nlohmann::json& j);
std::string report_to_text(const StabilityReport& r);

StabilityConfig stability_config_from_json(const nlohmann::json& j);
nlohmann::json stability_config_to_json(const StabilityConfig& c);

}  // namespace mw
