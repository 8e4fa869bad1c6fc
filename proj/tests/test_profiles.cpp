#include <doctest.h>

#include <cmath>
#include <cstdio>

#include <gsl/gsl_sf_ellint.h>
#include <gsl/gsl_sf_elljac.h>

#include "modwave/profiles.hpp"

using namespace mw;

namespace {

// Travelling-wave residual -omega U' - k (U^2/2)' - k^3 U''' from the coefficients.
double kdv_stationary_residual(const WaveProfile& w) {
    const int n = 1024;
    RMat U = w.samples(n), U1 = w.derivative_samples(n, 1), U3 = w.derivative_samples(n, 3);
    double r = 0.0;
    for (int i = 0; i < n; ++i)
        r = std::max(r, std::abs(-w.omega * U1(i, 0) - w.k * U(i, 0) * U1(i, 0) - std::pow(w.k, 3) * U3(i, 0)));
    return r;
}

}  // namespace

TEST_CASE("cnoidal closed form satisfies the stationary equation") {
    for (double m : {0.3, 0.7, 0.9}) {
        WaveProfile w = cnoidal_closed_form(m, 0.4, 2.0);
        CHECK(kdv_stationary_residual(w) < 1e-10);
        CHECK(w.residual < 1e-10);
        CHECK(std::abs(w.coeff(0).real() - 0.4) < 1e-12);
        CHECK(std::abs(w.speed() + w.omega / w.k) == 0.0);
        for (int j = 1; j <= w.n_modes; ++j) CHECK(std::abs(w.coeff(j) - std::conj(w.coeff(-j))) < 1e-15);
    }
    // the profile is beta + alpha cn^2(2 K y): compare point values with GSL directly
    const double m = 0.7, a = 2.0;
    WaveProfile w = cnoidal_closed_form(m, 0.0, a);
    double K = gsl_sf_ellint_Kcomp(std::sqrt(m), GSL_PREC_DOUBLE);
    double sn, cn, dn;
    gsl_sf_elljac_e(0.0, m, &sn, &cn, &dn);
    double u0 = w.eval(0.0)(0);
    gsl_sf_elljac_e(2.0 * K * 0.3, m, &sn, &cn, &dn);
    CHECK(w.eval(0.3)(0) - u0 == doctest::Approx(a * (cn * cn - 1.0)).epsilon(1e-12));
}

TEST_CASE("cnoidal modulus bounds are enforced") {
    CHECK_THROWS_AS(cnoidal_closed_form(0.99999, 0.0, 1.0), SolverError);
    CHECK_THROWS_AS(cnoidal_closed_form(1e-7, 0.0, 1.0), SolverError);
}

TEST_CASE("small modulus approaches the linear dispersion relation") {
    const double k = 0.5, M1 = 0.3;
    double prev = INFINITY;
    for (double m : {1e-2, 1e-3, 1e-4}) {
        WaveProfile w = cnoidal_with_k(m, M1, k);
        double err = std::abs(w.omega - (4 * kPi * kPi * k * k * k - k * M1));
        CHECK(err < prev);
        prev = err;
        // dominated by one cosine
        CHECK(std::abs(w.coeff(2)) < 0.1 * std::abs(w.coeff(1)));
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("Newton reconverges to the closed form") {
    SystemSpec kdv = kdv_system();
    WaveProfile w = cnoidal_closed_form(0.7, 0.2, 3.0, 48);
    WaveProfile seed = w;
    seed.coeffs *= 1.01;
    seed.omega *= 0.99;
    WaveProfile s = solve_profile(kdv, seed, w.family_coords());
    CHECK(s.residual < 1e-10);
    CHECK(std::abs(s.omega - w.omega) < 1e-9 * std::abs(w.omega));
    double err = 0.0;
    for (int j = -48; j <= 48; ++j) err = std::max(err, std::abs(s.coeff(j) - w.coeff(j)));
    CHECK(err < 1e-9);
    CHECK(std::abs(s.coeff(0).real() - 0.2) < 1e-12);
}

TEST_CASE("rotating waves of the manufactured system") {
    const double beta = 1.0, gamma = 0.5, k = 0.2;
    SystemSpec sys = rotation_system(beta, gamma);
    RVec M = RVec::Zero(2);
    WaveProfile seed = harmonic_seed(sys, M, k, 0.4, 0.0, 16);
    RVec t(3);
    t << 0.0, 0.0, k;
    ProfileOptions opt;
    opt.n_modes = 16;
    WaveProfile w = solve_profile(sys, seed, t, opt);
    const double r2 = (kTwoPi * k - 1.0) / beta;
    CHECK(w.residual < 1e-10);
    CHECK(std::abs(w.omega + k * gamma * r2) < 1e-10);
    CHECK(std::abs(2.0 * std::abs(w.coeff(1, 0)) - std::sqrt(r2)) < 1e-10);
    CHECK(std::abs(w.coeff(0, 0)) < 1e-12);
    CHECK(w.family_coords().size() == 3);  // d + 1, phase adds the last of d + 2

    // near onset the small harmonic ansatz converges to the small wave
    const double k2 = 0.162, r2b = kTwoPi * k2 - 1.0;
    RVec t2(3);
    t2 << 0.0, 0.0, k2;
    WaveProfile small = solve_profile(sys, harmonic_seed(sys, M, k2, 0.1, 0.0, 16), t2, opt);
    CHECK(small.residual < 1e-10);
    CHECK(std::abs(2.0 * std::abs(small.coeff(1, 0)) - std::sqrt(r2b)) < 1e-10);
}

TEST_CASE("zero amplitude seed returns the flagged constant state") {
    SystemSpec sys = burgers_system(1.0);
    RVec M = RVec::Constant(1, 0.7);
    WaveProfile seed = constant_state(sys, M, 1.0);
    RVec t(2);
    t << 0.7, 1.0;
    WaveProfile w = solve_profile(sys, seed, t);
    CHECK(w.degenerate);
    CHECK(w.constants(0) == doctest::Approx(0.5 * 0.49));
    CHECK(profile_residual(sys, w) < 1e-14);
}

TEST_CASE("continuation in the quadratic invariant follows the closed form") {
    SystemSpec kdv = kdv_system();
    WaveProfile w = cnoidal_with_k(0.5, 0.0, 0.5, 48);
    ProfileOptions opt;
    opt.n_modes = 48;
    ContinuationResult r = continue_family(kdv, w, 1, 4, 0.05 * w.params(1), opt);
    CHECK_FALSE(r.fold);
    REQUIRE(r.family.size() == 5);
    for (size_t i = 1; i < r.family.size(); ++i) {
        const WaveProfile& s = r.family[i];
        CHECK(s.params(1) > r.family[i - 1].params(1));
        WaveProfile ref = cnoidal_from_invariants(0.0, s.params(1), 0.5, 48);
        double err = 0.0;
        for (double y = 0.0; y < 1.0; y += 0.01) err = std::max(err, std::abs(s.eval(y)(0) - ref.eval(y)(0)));
        CHECK(err < 1e-8);
    }
    ContinuationResult none = continue_family(kdv, w, 1, 0, 0.1, opt);
    CHECK(none.family.size() == 1);
}

TEST_CASE("continuation toward the onset point raises the fold flag") {
    SystemSpec sys = rotation_system(1.0, 0.5);
    ProfileOptions opt;
    opt.n_modes = 12;
    RVec t(3);
    t << 0.0, 0.0, 0.2;
    WaveProfile w = solve_profile(sys, harmonic_seed(sys, RVec::Zero(2), 0.2, 0.4, 0.0, 12), t, opt);
    ContinuationResult r = continue_family(sys, w, 2, 20, -0.005, opt);
    CHECK(r.fold);
    for (const auto& s : r.family) {
        CHECK(s.residual < 1e-10);
        CHECK(s.k > 1.0 / kTwoPi);
        CHECK(s.amplitude() > 1e-10);
    }
}

TEST_CASE("family derivatives") {
    SystemSpec kdv = kdv_system();
    WaveProfile w = cnoidal_with_k(0.5, 0.1, 0.6, 48);
    ProfileOptions opt;
    opt.n_modes = 48;
    WaveFamily fam = family_derivatives(kdv, w, 1e-3, opt);
    REQUIRE(fam.partials.size() == 3);
    // direct central difference with the same step agrees to O(h^2)
    for (int i = 0; i < 3; ++i) {
        double h = 1e-4 * std::max(1.0, std::abs(w.family_coords()(i)));
        RVec tp = w.family_coords(), tm = tp;
        tp(i) += h;
        tm(i) -= h;
        WaveProfile a = solve_profile(kdv, w, tp, opt), b = solve_profile(kdv, w, tm, opt);
        CMat fd = (a.coeffs - b.coeffs) / (2 * h);
        double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
        CHECK((fd - fam.partials[i]).cwiseAbs().maxCoeff() < 1e-5 * scale);
    }
    CHECK(std::abs(fam.phase_partial(49, 0) - kI * kTwoPi * w.coeff(1)) < 1e-14);

    // small amplitude: d omega / dk is the derivative of the linear dispersion relation
    WaveProfile s = cnoidal_with_k(1e-3, 0.3, 0.5, 24);
    opt.n_modes = 24;
    WaveFamily fs = family_derivatives(kdv, s, 1e-6, opt);
    CHECK(fs.freq_partials(2) == doctest::Approx(12 * kPi * kPi * 0.25 - 0.3).epsilon(1e-3));
}

TEST_CASE("profile json keeps 17 significant digits") {
    WaveProfile w = cnoidal_closed_form(0.6, 0.1, 1.5, 16);
    std::string path = "profile_roundtrip_test.json";
    save_profile(w, path);
    WaveProfile r = load_profile(path);
    std::remove(path.c_str());
    CHECK(r.k == w.k);
    CHECK(r.omega == w.omega);
    CHECK(r.params == w.params);
    CHECK(r.constants == w.constants);
    CHECK(r.coeffs == w.coeffs);
    CHECK_THROWS_AS(profile_from_json(nlohmann::json::parse(R"({"kind":"kdv"})")), ConfigError);
}
