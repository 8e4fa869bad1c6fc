#include <doctest.h>

#include <cmath>

#include "modwave/stability.hpp"

using namespace mw;

namespace {

// One eigenvalue per xi given by fn, tracked as a single critical curve.
void synthetic(const std::function<cd(double)>& fn, FloquetSpectrum& S, TrackResult& tr) {
    S = FloquetSpectrum{};
    S.xi = uniform_xi_grid(64);
    SpectralCurve c;
    c.critical = true;
    for (size_t m = 0; m < S.xi.size(); ++m) {
        cd l = fn(S.xi[m]);
        S.eigs.push_back({{l, true}});
        c.xi_index.push_back(static_cast<int>(m));
        c.xi.push_back(S.xi[m]);
        c.lambda.push_back(l);
    }
    tr = TrackResult{};
    tr.curves.push_back(c);
    tr.n_critical = 1;
}

StabilityReport heat_report(double k, int n_f) {
    RMat A(2, 2), D(2, 2);
    A << 0.3, 0.0, 0.0, 0.3;
    D << 1.0, 0.4, 0.4, 0.5;
    SystemSpec sys = linear_system(A, D);
    RVec M(2);
    M << 0.2, -0.1;
    WaveProfile w = constant_state(sys, M, k, 8);
    StabilityConfig cfg;
    cfg.n_f = n_f;
    cfg.n_xi = 64;
    return full_report(sys, w, cfg);
}

}  // namespace

TEST_CASE("H distinguishes slopes") {
    HRecord h = check_h(std::vector<cd>{kI, 2.0 * kI, -kI});
    CHECK(h.verdict == Verdict::Pass);
    CHECK(h.min_gap == doctest::Approx(1.0));
    HRecord h2 = check_h(std::vector<cd>{kI, kI * (1.0 + 1e-11), -kI});
    CHECK(h2.verdict == Verdict::Fail);
}

TEST_CASE("D1 and D2 on manufactured spectra") {
    FloquetSpectrum S;
    TrackResult tr;
    CHECK_THROWS_AS(check_d1(S), ConfigError);

    synthetic([](double x) { return cd(-0.5 * x * x, x); }, S, tr);
    D2Record d2 = check_d2(S, tr);
    CHECK(d2.verdict == Verdict::Pass);
    CHECK(d2.theta == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(check_d1(S).verdict == Verdict::Pass);

    // quartic decay has no quadratic bound near zero
    synthetic([](double x) { return cd(-std::pow(x, 4), x); }, S, tr);
    d2 = check_d2(S, tr);
    CHECK(d2.verdict == Verdict::Fail);
    CHECK(std::abs(d2.theta_critical) < 1e-3);

    synthetic([](double x) { return cd(1e-3 * std::sin(x), x); }, S, tr);
    D1Record d1 = check_d1(S);
    CHECK(d1.verdict == Verdict::Fail);
    CHECK(d1.worst_re > 0.0);
}

TEST_CASE("condition A on synthetic curves") {
    // line: glued cubic bands; loop: sin, whose second derivative changes sign at +-pi
    TrackResult tr;
    std::vector<double> xi = uniform_xi_grid(64);
    Chain line, loop;
    for (int p = -3; p <= 3; ++p) {
        SpectralCurve c;
        c.id = static_cast<int>(tr.curves.size());
        c.critical = p == 0;
        for (size_t m = 0; m < xi.size(); ++m) {
            double t = xi[m] + kTwoPi * p;
            c.xi_index.push_back(static_cast<int>(m));
            c.xi.push_back(xi[m]);
            c.lambda.push_back(cd(0.0, t * t * t + 2.0 * t));
        }
        c.cls = CurveClass::Line;
        line.bands.push_back(c.id);
        tr.curves.push_back(c);
    }
    line.cls = CurveClass::Line;
    SpectralCurve l;
    l.id = static_cast<int>(tr.curves.size());
    for (size_t m = 0; m < xi.size(); ++m) {
        l.xi_index.push_back(static_cast<int>(m));
        l.xi.push_back(xi[m]);
        l.lambda.push_back(cd(0.0, std::sin(xi[m])));
    }
    l.cls = CurveClass::Loop;
    loop.bands.push_back(l.id);
    loop.closed = true;
    loop.cls = CurveClass::Loop;
    tr.curves.push_back(l);
    tr.chains = {line};
    CondARecord a = check_a(tr);
    CHECK(a.verdict == Verdict::Pass);
    CHECK(a.line_min_abs_d3 == doctest::Approx(6.0).epsilon(1e-6));

    tr.chains = {line, loop};
    a = check_a(tr);
    CHECK(a.verdict == Verdict::Fail);
    REQUIRE(a.sign_changes.size() >= 1);
    CHECK(a.sign_changes[0].family == "loop");
    CHECK(std::abs(std::abs(a.sign_changes[0].xi_left) - kPi) < 0.2);
}

TEST_CASE("cnoidal report: imaginary axis and A pass, D1 and D2 fail") {
    SystemSpec sys = kdv_system();
    WaveProfile w = cnoidal_with_k(0.7, 0.0, 0.7, 64);
    StabilityConfig cfg;
    cfg.n_f = 16;
    cfg.n_xi = 128;
    StabilityReport r = full_report(sys, w, cfg);
    CHECK(r.imag_axis.verdict == Verdict::Pass);
    CHECK(r.cond_a.verdict == Verdict::Pass);
    CHECK(r.d1.verdict == Verdict::Fail);
    CHECK(r.d2.verdict == Verdict::Fail);
    CHECK(std::abs(r.d2.theta) < 1e-6);
    CHECK(r.d3.multiplicity == 3);
    CHECK(r.h.verdict == Verdict::Pass);
    CHECK(exit_code(r, {"d1", "d2"}) == 2);
    CHECK(exit_code(r, {"imag_axis", "a"}) == 0);

    // lossless roundtrip
    nlohmann::json j = report_to_json(r);
    CHECK(report_to_json(report_from_json(j)) == j);
    CHECK(report_from_json(nlohmann::json::parse(j.dump())).d2.theta == r.d2.theta);

    // deterministic
    StabilityReport r2 = full_report(sys, w, cfg);
    CHECK(report_to_json(r2) == j);

    // resolution failure is inconclusive
    cfg.n_f = 6;
    StabilityReport bad = full_report(sys, w, cfg);
    CHECK(bad.imag_axis.verdict == Verdict::Inconclusive);
    CHECK(exit_code(bad, {"imag_axis", "a"}) == 3);
}

TEST_CASE("heat-type constant state passes D1 and D2") {
    const double k = 0.8;
    StabilityReport r = heat_report(k, 8);
    CHECK(r.d1.verdict == Verdict::Pass);
    CHECK(r.d2.verdict == Verdict::Pass);
    RMat D(2, 2);
    D << 1.0, 0.4, 0.4, 0.5;
    double lmin = Eigen::SelfAdjointEigenSolver<RMat>(D).eigenvalues()(0);
    CHECK(std::abs(r.d2.theta - k * k * lmin) < 1e-6);
    CHECK(exit_code(r, {"d1", "d2"}) == 0);
}

TEST_CASE("stability config validation") {
    CHECK_THROWS_AS(stability_config_from_json(nlohmann::json::parse(R"({"n_xi": 0})")), ConfigError);
    CHECK_THROWS_AS(stability_config_from_json(nlohmann::json::parse(R"({"n_f": "many"})")), ConfigError);
    StabilityConfig c = stability_config_from_json(nlohmann::json::parse(R"({"n_f": 20, "checks": {"zero_radius": 1e-3}})"));
    CHECK(c.n_f == 20);
    CHECK(c.checks.zero_radius == 1e-3);
    CHECK(stability_config_from_json(stability_config_to_json(c)).n_f2 == second_truncation(20));
    SystemSpec sys = kdv_system();
    c.conditions = {"bogus"};
    CHECK_THROWS_AS(full_report(sys, cnoidal_with_k(0.5, 0.0, 0.7), c), ConfigError);
}
