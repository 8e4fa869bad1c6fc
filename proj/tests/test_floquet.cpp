#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "modwave/floquet.hpp"

using namespace mw;

namespace {

double nearest(const CVec& w, cd z) {
    double d = 1e300;
    for (int i = 0; i < w.size(); ++i) d = std::min(d, std::abs(w(i) - z));
    return d;
}

}  // namespace

TEST_CASE("constant KdV state has the dispersion relation spectrum") {
    SystemSpec sys = kdv_system();
    RVec M(1);
    M << 0.5;
    const double k = 0.7;
    WaveProfile w = constant_state(sys, M, k, 8);
    w.omega = 0.3;
    const int nf = 10;
    for (double xi : {0.0, 0.4, -2.0, kPi}) {
        CVec ev = eigenvalues(assemble_fiber(sys, w, xi, nf).matrix);
        CHECK(ev.size() == 2 * nf + 1);
        for (int j = -nf; j <= nf; ++j) {
            cd mu = kI * (xi + kTwoPi * j);
            cd lam = -(w.omega + k * M(0)) * mu - std::pow(k, 3) * mu * mu * mu;
            CHECK(nearest(ev, lam) < 1e-9 * (1.0 + std::abs(lam)));
        }
    }
}

TEST_CASE("constant state of a linear parabolic system") {
    RMat A(2, 2), D(2, 2);
    A << 0.0, 1.0, 1.0, 0.0;
    D << 1.0, 0.2, 0.2, 0.5;
    SystemSpec sys = linear_system(A, D);
    RVec M(2);
    M << 0.1, -0.3;
    const double k = 0.4;
    WaveProfile w = constant_state(sys, M, k, 8);
    w.omega = 0.25;
    const int nf = 9;
    const double xi = 1.1;
    CVec ev = eigenvalues(assemble_fiber(sys, w, xi, nf).matrix);
    for (int j = -nf; j <= nf; ++j) {
        double mu = xi + kTwoPi * j;
        CMat S = -kI * mu * (w.omega * CMat::Identity(2, 2) + k * A.cast<cd>()) - k * k * mu * mu * D.cast<cd>();
        CVec s = eigenvalues(S);
        for (int i = 0; i < 2; ++i) CHECK(nearest(ev, s(i)) < 1e-9 * (1.0 + std::abs(s(i))));
    }
}

TEST_CASE("pencil derivatives and the translation mode") {
    SystemSpec sys = kdv_system();
    WaveProfile w = cnoidal_with_k(0.7, 0.0, 0.7, 64);
    const int nf = 16;
    FiberPencil P = fiber_pencil(sys, w, nf);
    const double xi = 0.37, h = 1e-4;
    CMat fd = (P.at(xi + h) - P.at(xi - h)) / (2 * h);
    CHECK((fd - P.derivative(xi, 1)).cwiseAbs().maxCoeff() < 1e-6 * P.derivative(xi, 1).cwiseAbs().maxCoeff());
    CHECK((P.derivative(xi, 3) - 6.0 * P.A[3]).norm() == 0.0);

    // U' lies in the kernel of the operator at xi = 0
    CVec v(2 * nf + 1);
    for (int j = -nf; j <= nf; ++j) v(j + nf) = kI * kTwoPi * static_cast<double>(j) * w.coeff(j);
    CHECK((P.A[0] * v).norm() < 1e-9 * v.norm() * P.A[0].norm());
}

TEST_CASE("fiber truncation too small for the profile") {
    SystemSpec sys = kdv_system();
    WaveProfile w = cnoidal_with_k(0.7, 0.0, 0.7, 64);
    CHECK_THROWS_AS(fiber_pencil(sys, w, 6), ResolutionError);
    CHECK_THROWS_AS(fiber_pencil(sys, w, 12), ResolutionError);
    CHECK_NOTHROW(fiber_pencil(sys, w, 16));
    CHECK_THROWS_AS(assemble_fiber(sys, w, 4.0, 16), ConfigError);
}

TEST_CASE("cnoidal spectrum: imaginary axis, one line, one loop, three critical curves") {
    SystemSpec sys = kdv_system();
    WaveProfile w = cnoidal_with_k(0.7, 0.0, 0.7, 64);
    FloquetSpectrum S = sweep(sys, w, uniform_xi_grid(201), 16);
    CHECK(S.n_f2 == 24);
    double re = 0.0;
    int resolved = 0;
    for (const auto& row : S.eigs)
        for (const auto& e : row)
            if (e.resolved) {
                re = std::max(re, std::abs(e.lambda.real()));
                ++resolved;
            }
    CHECK(re < 1e-6);
    CHECK(resolved > 201 * 20);
    TrackResult tr = track_curves(S);
    CHECK(tr.n_critical == 3);
    CHECK(tr.n_line_chains == 1);
    CHECK(tr.n_loops == 1);
    int crit_on_loop = 0;
    for (const auto& c : tr.curves)
        if (c.critical && c.cls == CurveClass::Loop) ++crit_on_loop;
    CHECK(crit_on_loop == 2);

    LargeBranchResult lb = large_branch_asymptotics(tr, w.k);
    CHECK(lb.limit_k3 == doctest::Approx(6 * std::pow(0.7, 3)));
    for (const auto& b : lb.bands)
        if (std::abs(b.band) >= 5) CHECK(std::abs(b.third - lb.limit_k3) < 1e-4 * lb.limit_k3);
}

TEST_CASE("critical expansion slopes agree with finite differences") {
    SystemSpec sys = kdv_system();
    for (double m : {0.3, 0.7, 0.9}) {
        WaveProfile w = cnoidal_with_k(m, 0.2, 0.7, 64);
        CriticalExpansion E = critical_expansion(sys, w, {24});
        CHECK(E.multiplicity == 3);
        CHECK(E.geometric_multiplicity == 2);
        REQUIRE(E.slopes.size() == 3);
        CHECK(E.slope_consistency < 1e-6);
        CHECK_FALSE(E.degenerate_slopes);
        for (const cd& s : E.slopes) CHECK(std::abs(s.real()) < 1e-8 * std::abs(s));
    }
}

TEST_CASE("cubic fit recovers the third derivative") {
    std::vector<double> x, y;
    for (int i = 0; i < 20; ++i) {
        double t = -1.0 + 0.1 * i;
        x.push_back(t);
        y.push_back(3.0 - t + 0.5 * t * t + 1.25 * t * t * t);
    }
    CHECK(cubic_fit_third(x, y) == doctest::Approx(7.5).epsilon(1e-12));
    CHECK_THROWS_AS(cubic_fit_third({0, 1, 2}, {0, 1, 2}), ConfigError);
}
