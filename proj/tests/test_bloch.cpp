#include <doctest.h>

#include <cmath>
#include <random>

#include "modwave/bloch.hpp"

using namespace mw;

namespace {

SampledLine random_line(int n, int M, std::mt19937& rng, int d = 1) {
    std::normal_distribution<double> nd;
    SampledLine g(n, M, d);
    for (int i = 0; i < g.size(); ++i)
        for (int c = 0; c < d; ++c) g.values(i, c) = cd(nd(rng), nd(rng));
    return g;
}

// smooth localized bump, resolved on the grid
SampledLine bump(int n, int M) {
    SampledLine g(n, M);
    for (int i = 0; i < g.size(); ++i) {
        double x = g.x(i) - 0.5 * n;
        g.values(i, 0) = std::exp(-x * x / 8.0) * std::exp(kI * 0.7 * x);
    }
    return g;
}

}  // namespace

TEST_CASE("forward transform equals the periodization sum") {
    std::mt19937 rng(7);
    for (int n : {5, 8}) {
        const int M = 6;
        SampledLine g = random_line(n, M, rng);
        BlochField G = forward_bloch(g);
        for (int m = 0; m < n; ++m) {
            CMat s = fiber_samples(G.fibers[m], M, 1);
            const double xi = G.xi[m];
            for (int i = 0; i < M; ++i) {
                cd acc = 0.0;
                for (int l = 0; l < n; ++l) {
                    double x = static_cast<double>(i) / M + l;
                    acc += std::exp(-kI * xi * x) * g.values(i + l * M, 0);
                }
                acc /= kTwoPi;
                CHECK(std::abs(acc - s(i, 0)) < 1e-12);
            }
        }
    }
}

TEST_CASE("xi grid is half-open, ascending and contains zero") {
    BlochField G = zero_field(8, 4);
    CHECK(G.xi.front() == doctest::Approx(-kPi));
    CHECK(G.xi[center_fiber(8)] == 0.0);
    for (int m = 1; m < 8; ++m) CHECK(G.xi[m] > G.xi[m - 1]);
    CHECK(G.xi.back() < kPi);
}

TEST_CASE("pure Bloch wave and periodic input land in one fiber") {
    const int n = 8, M = 5;
    SampledLine g(n, M);
    const int m0 = 3;
    const double xi0 = xi_of(m0, n);
    for (int i = 0; i < g.size(); ++i) g.values(i, 0) = std::exp(kI * xi0 * g.x(i));
    BlochField G = forward_bloch(g);
    for (int m = 0; m < n; ++m)
        for (int r = 0; r < M; ++r) {
            double expect = (m == m0 && mode_of(r, M) == 0) ? n / kTwoPi : 0.0;
            CHECK(std::abs(G.fibers[m](r) - expect) < 1e-12);
        }

    for (int i = 0; i < g.size(); ++i) g.values(i, 0) = std::exp(kI * kTwoPi * g.x(i));
    G = forward_bloch(g);
    for (int m = 0; m < n; ++m)
        for (int r = 0; r < M; ++r) {
            double expect = (m == center_fiber(n) && mode_of(r, M) == 1) ? n / kTwoPi : 0.0;
            CHECK(std::abs(G.fibers[m](r) - expect) < 1e-12);
        }
}

TEST_CASE("roundtrip, Parseval and zero field") {
    std::mt19937 rng(11);
    for (int n : {4, 7, 16, 64})
        for (int M : {4, 9, 32}) {
            SampledLine g = random_line(n, M, rng, 2);
            BlochField G = forward_bloch(g);
            SampledLine h = inverse_bloch(G);
            double scale = g.values.cwiseAbs().maxCoeff();
            CHECK((h.values - g.values).cwiseAbs().maxCoeff() < 1e-10 * scale);
            double lhs = std::pow(lp_norm(g, 2), 2);
            double rhs = kTwoPi * std::pow(mixed_norm(G, 2, 2), 2);
            CHECK(std::abs(lhs - rhs) < 1e-12 * lhs);
        }
    BlochField Z = zero_field(6, 5);
    CHECK(inverse_bloch(Z).values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(mixed_norm(Z, 2, 2) == 0.0);
}

TEST_CASE("single fiber inverts to a weighted Bloch wave") {
    const int n = 10, M = 4, m0 = 7;
    BlochField G = zero_field(n, M);
    G.fibers[m0](index_of_mode(0, M)) = 1.0;
    SampledLine g = inverse_bloch(G);
    for (int i = 0; i < g.size(); ++i)
        CHECK(std::abs(g.values(i, 0) - (kTwoPi / n) * std::exp(kI * G.xi[m0] * g.x(i))) < 1e-13);
}

TEST_CASE("Hausdorff-Young inequalities on random inputs") {
    std::mt19937 rng(3);
    const double inf = INFINITY;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        SampledLine g = random_line(8 + trial % 5, 4 + trial % 3, rng);
        BlochField G = forward_bloch(g);
        for (double p : {2.0, 4.0, inf}) {
            double pc = std::isinf(p) ? 1.0 : p / (p - 1.0);
            double c = std::isinf(p) ? 1.0 : std::pow(kTwoPi, 1.0 / p);
            CHECK(lp_norm(g, p) <= c * mixed_norm(G, pc, p) * (1 + 1e-12));
            CHECK(mixed_norm(G, p, pc) <= lp_norm(g, pc) / c * (1 + 1e-12));
            ++checked;
        }
    }
    CHECK(checked == 300);
}

TEST_CASE("fiberwise derivative and multiplication match line operations") {
    const int n = 32, M = 16;
    SampledLine g = bump(n, M);
    BlochField G = forward_bloch(g);
    auto deriv = [&](double xi) {
        CMat A = CMat::Zero(M, M);
        for (int r = 0; r < M; ++r) A(r, r) = kI * (xi + kTwoPi * mode_of(r, M));
        return A;
    };
    SampledLine dg = inverse_bloch(apply_fiberwise(G, deriv));
    SampledLine ref = line_derivative(g);
    CHECK((dg.values - ref.values).cwiseAbs().maxCoeff() < 1e-8);

    // periodic coefficient 2 + cos(2 pi x) as a Toeplitz convolution
    auto mult = [&](double) {
        CMat T = CMat::Zero(M, M);
        for (int a = 0; a < M; ++a)
            for (int b = 0; b < M; ++b) {
                int dj = mode_of(a, M) - mode_of(b, M);
                if (dj == 0) T(a, b) = 2.0;
                if (std::abs(dj) == 1) T(a, b) = 0.5;
            }
        return T;
    };
    SampledLine pg = inverse_bloch(apply_fiberwise(G, mult));
    double err = 0.0;
    for (int i = 0; i < g.size(); ++i)
        err = std::max(err, std::abs(pg.values(i, 0) - (2.0 + std::cos(kTwoPi * g.x(i))) * g.values(i, 0)));
    CHECK(err < 1e-8);

    BlochField same = apply_fiberwise(G, [&](double) { return CMat::Identity(M, M); });
    for (int m = 0; m < n; ++m) CHECK((same.fibers[m] - G.fibers[m]).norm() == 0.0);
}

TEST_CASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(zero_field(0, 4), ConfigError);
    BlochField G = zero_field(4, 4);
    CHECK_THROWS_AS(mixed_norm(G, 0.5, 2), ConfigError);
    CHECK_THROWS_AS(apply_fiberwise(G, [](double) { return CMat::Identity(3, 3); }), ConfigError);
    G.fibers.pop_back();
    CHECK_THROWS_AS(inverse_bloch(G), ConfigError);
}
