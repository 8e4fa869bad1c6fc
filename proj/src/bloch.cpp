#include "modwave/bloch.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "modwave/fft.hpp"

namespace mw {

SampledLine::SampledLine(int n, int m, int d) : n_cells(n), pts_per_cell(m), values(CMat::Zero(n * m, d)) {}

double xi_of(int m, int n_cells) { return kTwoPi * (m - n_cells / 2) / n_cells; }
int mode_of(int idx, int pts_per_cell) { return idx - pts_per_cell / 2; }
int index_of_mode(int j, int pts_per_cell) { return j + pts_per_cell / 2; }
int center_fiber(int n_cells) { return n_cells / 2; }

namespace {

void check_grid(int n, int m) {
    if (n <= 0 || m <= 0) throw ConfigError("Bloch grid needs positive cell and point counts");
}

// Position in the length-L DFT array of frequency q = (m - N/2) + N*j.
int dft_slot(int m, int idx, int n, int M) {
    int q = (m - n / 2) + n * mode_of(idx, M);
    return pos_mod(q, n * M);
}

}  // namespace

BlochField zero_field(int n_cells, int pts_per_cell, int d) {
    check_grid(n_cells, pts_per_cell);
    BlochField G;
    G.n_cells = n_cells;
    G.pts_per_cell = pts_per_cell;
    G.d = d;
    G.xi.resize(n_cells);
    G.fibers.assign(n_cells, CVec::Zero(d * pts_per_cell));
    for (int m = 0; m < n_cells; ++m) G.xi[m] = xi_of(m, n_cells);
    return G;
}

BlochField forward_bloch(const SampledLine& g) {
    check_grid(g.n_cells, g.pts_per_cell);
    const int n = g.n_cells, M = g.pts_per_cell, L = n * M, d = g.dim();
    if (g.values.rows() != L) throw ConfigError("sample count does not match N*M_pts");
    BlochField G = zero_field(n, M, d);
    const double scale = static_cast<double>(n) / (kTwoPi * L);
    for (int c = 0; c < d; ++c) {
        CVec hat = fft(g.values.col(c));
        for (int m = 0; m < n; ++m)
            for (int idx = 0; idx < M; ++idx) G.fibers[m](c * M + idx) = scale * hat(dft_slot(m, idx, n, M));
    }
    return G;
}

SampledLine inverse_bloch(const BlochField& G) {
    check_grid(G.n_cells, G.pts_per_cell);
    const int n = G.n_cells, M = G.pts_per_cell, L = n * M, d = G.d;
    if (static_cast<int>(G.fibers.size()) != n) throw ConfigError("fiber count does not match N");
    SampledLine g(n, M, d);
    const double scale = kTwoPi / n;
    for (int c = 0; c < d; ++c) {
        CVec hat = CVec::Zero(L);
        for (int m = 0; m < n; ++m) {
            if (G.fibers[m].size() != d * M) throw ConfigError("fiber length does not match d*M_pts");
            for (int idx = 0; idx < M; ++idx) hat(dft_slot(m, idx, n, M)) = scale * G.fibers[m](c * M + idx);
        }
        g.values.col(c) = ifft(hat);
    }
    return g;
}

BlochField apply_fiberwise(const BlochField& G, const std::function<CMat(double)>& fiber_op) {
    BlochField out = G;
    const int dim = G.d * G.pts_per_cell;
    parallel_for(G.n_cells, [&](int m) {
        CMat A = fiber_op(G.xi[m]);
        if (A.rows() != dim || A.cols() != dim) throw ConfigError("fiber operator has the wrong size");
        out.fibers[m] = A * G.fibers[m];
    });
    return out;
}

CMat fiber_samples(const CVec& fiber, int M, int d) {
    CMat s(M, d);
    for (int c = 0; c < d; ++c) {
        CVec hat = CVec::Zero(M);
        for (int idx = 0; idx < M; ++idx) hat(pos_mod(mode_of(idx, M), M)) = fiber(c * M + idx);
        s.col(c) = ifft(hat);
    }
    return s;
}

namespace {

double check_exponent(double p) {
    if (!(p >= 1.0)) throw ConfigError("Lebesgue exponent must be >= 1");
    return p;
}

// Weighted discrete L^p norm of nonnegative values with uniform weight w.
double weighted_norm(const RVec& a, double w, double p) {
    if (std::isinf(p)) return a.size() ? a.maxCoeff() : 0.0;
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += std::pow(a(i), p);
    return std::pow(w * s, 1.0 / p);
}

}  // namespace

double mixed_norm(const BlochField& G, double p_outer, double p_inner) {
    check_exponent(p_outer);
    check_exponent(p_inner);
    const int n = G.n_cells, M = G.pts_per_cell;
    RVec outer(n);
    for (int m = 0; m < n; ++m) {
        CMat s = fiber_samples(G.fibers[m], M, G.d);
        RVec pt = s.rowwise().norm();
        outer(m) = weighted_norm(pt, 1.0 / M, p_inner);
    }
    return weighted_norm(outer, kTwoPi / n, p_outer);
}

double lp_norm(const SampledLine& g, double p) {
    check_exponent(p);
    RVec pt = g.values.rowwise().norm();
    return weighted_norm(pt, 1.0 / g.pts_per_cell, p);
}

SampledLine line_derivative(const SampledLine& g, int order) {
    const int n = g.n_cells, M = g.pts_per_cell, L = n * M;
    SampledLine out(n, M, g.dim());
    for (int c = 0; c < g.dim(); ++c) {
        CVec hat = fft(g.values.col(c));
        for (int s = 0; s < L; ++s) {
            int q = s <= L / 2 ? s : s - L;
            // the Nyquist mode is dropped for odd derivatives so real data stay real
            if (L % 2 == 0 && s == L / 2 && order % 2 == 1) {
                hat(s) = 0.0;
                continue;
            }
            hat(s) *= std::pow(kI * (kTwoPi * q / n), order);
        }
        out.values.col(c) = ifft(hat) / static_cast<double>(L);
    }
    return out;
}

void write_bloch_csv(const BlochField& G, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path);
    os << std::setprecision(17) << "xi,mode_index,re,im\n";
    for (int m = 0; m < G.n_cells; ++m)
        for (int r = 0; r < G.fibers[m].size(); ++r)
            os << G.xi[m] << ',' << r << ',' << G.fibers[m](r).real() << ',' << G.fibers[m](r).imag() << '\n';
}

}  // namespace mw
