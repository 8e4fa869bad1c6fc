#include "modwave/floquet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>

#include "modwave/fft.hpp"
#include "modwave/linalg.hpp"

namespace mw {

int active_modes(const WaveProfile& wave) {
    double top = 0.0;
    for (int c = 0; c < wave.d; ++c)
        for (int j = 1; j <= wave.n_modes; ++j) top = std::max(top, std::abs(wave.coeff(j, c)));
    int act = 0;
    if (top == 0.0) return 0;
    for (int c = 0; c < wave.d; ++c)
        for (int j = 1; j <= wave.n_modes; ++j)
            if (std::abs(wave.coeff(j, c)) > 1e-13 * top) act = std::max(act, j);
    return act;
}

namespace {

// Fourier coefficients (modes -2 n_f .. 2 n_f) of each entry of df(U(y)).
std::vector<CMat> jacobian_coeffs(const SystemSpec& sys, const WaveProfile& wave, int n_f) {
    const int d = sys.d;
    const int ns = 2 * (2 * wave.n_modes + 2 * n_f) + 1;
    RMat U = wave.samples(ns);
    std::vector<CVec> series(d * d, CVec(ns));
    for (int i = 0; i < ns; ++i) {
        RMat J = sys.flux.jacobian(U.row(i).transpose());
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) series[a * d + b](i) = J(a, b);
    }
    std::vector<CMat> out(4 * n_f + 1, CMat::Zero(d, d));
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            CVec hat = fft(series[a * d + b]) / static_cast<double>(ns);
            for (int q = -2 * n_f; q <= 2 * n_f; ++q) out[q + 2 * n_f](a, b) = hat(pos_mod(q, ns));
        }
    return out;
}

}  // namespace

FiberPencil fiber_pencil(const SystemSpec& sys, const WaveProfile& wave, int n_f) {
    validate(sys);
    if (n_f < 1) throw ConfigError("fiber truncation must be positive");
    if (wave.d != sys.d) throw ConfigError("wave and system dimension differ");
    if (n_f < 8 || active_modes(wave) > n_f)
        throw ResolutionError("fiber truncation N_F=" + std::to_string(n_f) + " cannot represent the profile's " +
                              std::to_string(active_modes(wave)) + " active modes");
    const int d = sys.d, M = 2 * n_f + 1, n = d * M;
    const double k = wave.k, om = wave.omega;
    std::vector<CMat> a = jacobian_coeffs(sys, wave, n_f);
    CMat T(n, n);
    for (int c = 0; c < d; ++c)
        for (int cc = 0; cc < d; ++cc)
            for (int r = 0; r < M; ++r)
                for (int s = 0; s < M; ++s) T(c * M + r, cc * M + s) = a[(r - s) + 2 * n_f](c, cc);
    CVec D0(n);
    for (int c = 0; c < d; ++c)
        for (int r = 0; r < M; ++r) D0(c * M + r) = kI * (kTwoPi * (r - n_f));

    FiberPencil P;
    P.n_f = n_f;
    P.d = d;
    for (auto& A : P.A) A = CMat::Zero(n, n);
    // first-order part: -(omega + k T) D with D = D0 + i xi acting on the left
    P.A[0] = -om * D0.asDiagonal().toDenseMatrix() - k * (D0.asDiagonal() * T);
    P.A[1] = -om * kI * CMat::Identity(n, n) - k * kI * T;
    if (sys.kind == SystemKind::KdV) {
        const double k3 = k * k * k;
        for (int r = 0; r < n; ++r) {
            cd d0 = D0(r);
            P.A[0](r, r) += -k3 * d0 * d0 * d0;
            P.A[1](r, r) += -k3 * 3.0 * d0 * d0 * kI;
            P.A[2](r, r) += -k3 * 3.0 * d0 * (kI * kI);
            P.A[3](r, r) += -k3 * (kI * kI * kI);
        }
    } else {
        const double k2 = k * k;
        for (int c = 0; c < d; ++c)
            for (int cc = 0; cc < d; ++cc)
                for (int r = 0; r < M; ++r) {
                    cd d0 = D0(c * M + r);
                    const double Dv = sys.D(c, cc);
                    P.A[0](c * M + r, cc * M + r) += k2 * Dv * d0 * d0;
                    P.A[1](c * M + r, cc * M + r) += k2 * Dv * 2.0 * kI * d0;
                    P.A[2](c * M + r, cc * M + r) += -k2 * Dv;
                }
    }
    return P;
}

CMat FiberPencil::at(double xi) const { return A[0] + xi * (A[1] + xi * (A[2] + xi * A[3])); }

CMat FiberPencil::derivative(double xi, int order) const {
    switch (order) {
        case 0: return at(xi);
        case 1: return A[1] + 2.0 * xi * A[2] + 3.0 * xi * xi * A[3];
        case 2: return 2.0 * A[2] + 6.0 * xi * A[3];
        case 3: return 6.0 * A[3];
        default: return CMat::Zero(A[0].rows(), A[0].cols());
    }
}

FiberMatrix assemble_fiber(const SystemSpec& sys, const WaveProfile& wave, double xi, int n_f) {
    if (!(std::abs(xi) <= kPi + 1e-12)) throw ConfigError("Floquet exponent outside [-pi, pi]");
    FiberPencil P = fiber_pencil(sys, wave, n_f);
    FiberMatrix F;
    F.xi = xi;
    F.n_f = n_f;
    F.d = sys.d;
    F.matrix = P.at(xi);
    return F;
}

namespace {

bool im_then_re(const cd& a, const cd& b) {
    if (a.imag() != b.imag()) return a.imag() < b.imag();
    return a.real() < b.real();
}

}  // namespace

CVec eigenvalues(const CMat& A) {
    CVec w = eig_general(A, false).values;
    std::sort(w.data(), w.data() + w.size(), im_then_re);
    return w;
}

std::vector<EigPair> eig_fiber(const FiberMatrix& F) {
    EigResult r;
    try {
        r = eig_general(F.matrix, true);
    } catch (const SolverError& e) {
        throw SolverError(std::string(e.what()) + " at xi=" + std::to_string(F.xi));
    }
    std::vector<EigPair> out(r.values.size());
    for (int i = 0; i < r.values.size(); ++i) out[i] = {r.values(i), r.vectors.col(i)};
    std::sort(out.begin(), out.end(), [](const EigPair& a, const EigPair& b) { return im_then_re(a.lambda, b.lambda); });
    return out;
}

int second_truncation(int n_f) { return (3 * n_f + 1) / 2; }

std::vector<double> uniform_xi_grid(int count) {
    std::vector<double> g(count);
    for (int m = 0; m < count; ++m) g[m] = kTwoPi * (m - count / 2) / count;
    return g;
}

namespace {

// Replaces each group of eigenvalues closer than radius (single linkage) by its centroid.
void snap_clusters(CVec& w, double radius) {
    const int n = static_cast<int>(w.size());
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int i) { return parent[i] == i ? i : parent[i] = find(parent[i]); };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(w(i) - w(j)) < radius) parent[find(i)] = find(j);
    std::vector<cd> sum(n, 0.0);
    std::vector<int> cnt(n, 0);
    for (int i = 0; i < n; ++i) {
        sum[find(i)] += w(i);
        cnt[find(i)]++;
    }
    for (int i = 0; i < n; ++i)
        if (cnt[find(i)] > 1) w(i) = sum[find(i)] / static_cast<double>(cnt[find(i)]);
}

double cluster_radius_of(const CMat& A, double factor) {
    return factor * std::sqrt(std::numeric_limits<double>::epsilon() * one_norm(A));
}

}  // namespace

FloquetSpectrum sweep(const SystemSpec& sys, const WaveProfile& wave, const std::vector<double>& xi_grid, int n_f,
                      int n_f2, const SweepOptions& opt) {
    if (n_f2 <= 0) n_f2 = second_truncation(n_f);
    if (n_f2 <= n_f) throw ConfigError("second truncation must exceed the first");
    FloquetSpectrum S;
    S.xi = xi_grid;
    std::sort(S.xi.begin(), S.xi.end());
    S.n_f = n_f;
    S.n_f2 = n_f2;
    S.tol_abs = opt.tol_abs;
    S.tol_rel = opt.tol_rel;
    const int nx = static_cast<int>(S.xi.size());
    S.eigs.resize(nx);
    S.cluster_radius.resize(nx);
    if (nx == 0) return S;
    FiberPencil P1 = fiber_pencil(sys, wave, n_f);
    FiberPencil P2 = fiber_pencil(sys, wave, n_f2);
    parallel_for(nx, [&](int m) {
        const double xi = S.xi[m];
        CMat A1 = P1.at(xi), A2 = P2.at(xi);
        CVec w1, w2;
        try {
            w1 = eigenvalues(A1);
            w2 = eigenvalues(A2);
        } catch (const SolverError& e) {
            throw SolverError(std::string(e.what()) + " at xi=" + std::to_string(xi));
        }
        const double rad = cluster_radius_of(A1, opt.cluster_factor);
        snap_clusters(w1, rad);
        snap_clusters(w2, cluster_radius_of(A2, opt.cluster_factor));
        std::vector<FloquetEig> out(w1.size());
        for (int i = 0; i < w1.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < w2.size(); ++j) best = std::min(best, std::abs(w1(i) - w2(j)));
            out[i] = {w1(i), best <= opt.tol_abs + opt.tol_rel * std::abs(w1(i))};
        }
        S.eigs[m] = std::move(out);
        S.cluster_radius[m] = rad;
    });
    return S;
}

std::string to_string(CurveClass c) {
    switch (c) {
        case CurveClass::Critical: return "critical";
        case CurveClass::Line: return "line";
        case CurveClass::Loop: return "loop";
        default: return "other";
    }
}

namespace {

struct Assignment {
    std::vector<int> target;  // per source, index of the chosen candidate or -1
    bool ambiguous = false;
    std::string where;
};

// Greedy nearest matching of predictions to candidates. Candidates with identical
// values (snapped clusters) may absorb as many sources as their multiplicity.
Assignment match(const std::vector<cd>& pred, const std::vector<double>& scale, const std::vector<cd>& cand,
                 const TrackOptions& opt, bool use_separation) {
    Assignment a;
    a.target.assign(pred.size(), -1);
    struct Pair {
        double dist;
        int s, c;
    };
    std::vector<Pair> pairs;
    for (int s = 0; s < static_cast<int>(pred.size()); ++s)
        for (int c = 0; c < static_cast<int>(cand.size()); ++c) pairs.push_back({std::abs(pred[s] - cand[c]), s, c});
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.dist != y.dist) return x.dist < y.dist;
        if (x.s != y.s) return x.s < y.s;
        return x.c < y.c;
    });
    // a jump larger than both the local step and half the gap to the nearest other
    // prediction means the curve ended here
    std::vector<double> allowed(pred.size());
    for (size_t s = 0; s < pred.size(); ++s) {
        double sep = std::numeric_limits<double>::infinity();
        for (size_t o = 0; o < pred.size(); ++o)
            if (o != s) sep = std::min(sep, std::abs(pred[s] - pred[o]));
        if (!std::isfinite(sep) || !use_separation) sep = 0.0;
        allowed[s] = std::max(0.5 * scale[s], 0.5 * sep) + opt.abs_floor * (1.0 + std::abs(pred[s]));
    }
    std::vector<char> used_c(cand.size(), 0);
    for (const Pair& p : pairs) {
        if (a.target[p.s] >= 0 || used_c[p.c]) continue;
        if (p.dist > allowed[p.s]) continue;
        a.target[p.s] = p.c;
        used_c[p.c] = 1;
    }
    for (int s = 0; s < static_cast<int>(pred.size()); ++s) {
        int c = a.target[s];
        if (c < 0) continue;
        double d1 = std::abs(pred[s] - cand[c]);
        if (d1 <= opt.abs_floor * (1.0 + std::abs(pred[s]))) continue;
        double d2 = std::numeric_limits<double>::infinity();
        for (int o = 0; o < static_cast<int>(cand.size()); ++o)
            if (cand[o] != cand[c]) d2 = std::min(d2, std::abs(pred[s] - cand[o]));
        if (d2 < opt.ambiguity_ratio * d1) a.ambiguous = true;
    }
    return a;
}

// Quadratic extrapolation through the last three samples (linear with two). Linear
// prediction alone cannot separate curves that meet tangentially, such as the
// diffusive pair -k^2 d_i xi^2 of a constant state.
cd predict(const SpectralCurve& c, double xi_next) {
    const int n = static_cast<int>(c.lambda.size());
    if (n == 1) return c.lambda[0];
    const double x1 = c.xi[n - 1], x0 = c.xi[n - 2];
    if (n == 2) return c.lambda[n - 1] + (c.lambda[n - 1] - c.lambda[n - 2]) * ((xi_next - x1) / (x1 - x0));
    const double xm = c.xi[n - 3];
    const cd f1 = c.lambda[n - 1], f0 = c.lambda[n - 2], fm = c.lambda[n - 3];
    const double t = xi_next;
    return f1 * ((t - x0) * (t - xm) / ((x1 - x0) * (x1 - xm))) + f0 * ((t - x1) * (t - xm) / ((x0 - x1) * (x0 - xm))) +
           fm * ((t - x1) * (t - x0) / ((xm - x1) * (xm - x0)));
}

// Allowed prediction error: half a step plus a multiple of the second difference,
// so that turning points (where the step shrinks) are not mistaken for ends.
double step_scale(const SpectralCurve& c) {
    const int n = static_cast<int>(c.lambda.size());
    if (n == 1) return std::numeric_limits<double>::infinity();
    double s = std::abs(c.lambda[n - 1] - c.lambda[n - 2]);
    if (n >= 3) s += 20.0 * std::abs(c.lambda[n - 1] - 2.0 * c.lambda[n - 2] + c.lambda[n - 3]);
    return s;
}

}  // namespace

TrackResult track_curves(const FloquetSpectrum& S, const TrackOptions& opt) {
    TrackResult tr;
    const int nx = static_cast<int>(S.xi.size());
    if (nx == 0) return tr;
    std::vector<int> active;
    for (int m = 0; m < nx; ++m) {
        std::vector<cd> cand;
        for (const auto& e : S.eigs[m])
            if (e.resolved) cand.push_back(e.lambda);
        std::vector<char> taken(cand.size(), 0);
        std::vector<int> next_active;
        if (!active.empty()) {
            std::vector<cd> pred;
            std::vector<double> scale;
            for (int id : active) {
                pred.push_back(predict(tr.curves[id], S.xi[m]));
                scale.push_back(step_scale(tr.curves[id]));
            }
            Assignment a = match(pred, scale, cand, opt, true);
            if (a.ambiguous && opt.require_unambiguous)
                throw ResolutionError("ambiguous curve continuation at xi=" + std::to_string(S.xi[m]) + "; refine the xi grid");
            for (size_t s = 0; s < active.size(); ++s) {
                int c = a.target[s];
                if (c < 0) continue;
                SpectralCurve& cur = tr.curves[active[s]];
                cur.xi_index.push_back(m);
                cur.xi.push_back(S.xi[m]);
                cur.lambda.push_back(cand[c]);
                taken[c] = 1;
                next_active.push_back(active[s]);
            }
        }
        for (size_t c = 0; c < cand.size(); ++c) {
            if (taken[c]) continue;
            SpectralCurve cur;
            cur.id = static_cast<int>(tr.curves.size());
            cur.xi_index.push_back(m);
            cur.xi.push_back(S.xi[m]);
            cur.lambda.push_back(cand[c]);
            tr.curves.push_back(cur);
            next_active.push_back(cur.id);
        }
        active = next_active;
    }

    // critical curves: inside the zero cluster at xi = 0
    int m0 = -1;
    for (int m = 0; m < nx; ++m)
        if (std::abs(S.xi[m]) < 1e-14) m0 = m;
    if (m0 >= 0)
        for (auto& c : tr.curves)
            for (size_t i = 0; i < c.xi_index.size(); ++i)
                if (c.xi_index[i] == m0 && std::abs(c.lambda[i]) <= S.cluster_radius[m0]) c.critical = true;
    for (const auto& c : tr.curves) tr.n_critical += c.critical ? 1 : 0;

    // glue bands across xi = pi == -pi (only meaningful on a full periodic grid)
    const int nc = static_cast<int>(tr.curves.size());
    std::vector<int> succ(nc, -1), pred_of(nc, -1);
    // uniform grid whose wrap-around step xi_0 + 2 pi - xi_last equals the grid step
    bool periodic_grid = nx >= 3;
    const double step = nx >= 2 ? S.xi[1] - S.xi[0] : 0.0;
    for (int m = 1; periodic_grid && m < nx; ++m)
        if (std::abs(S.xi[m] - S.xi[m - 1] - step) > 1e-9 * step) periodic_grid = false;
    if (periodic_grid && std::abs(S.xi.front() + kTwoPi - S.xi.back() - step) > 1e-9 * step) periodic_grid = false;
    if (periodic_grid) {
        std::vector<int> ends, starts;
        for (const auto& c : tr.curves) {
            if (c.xi_index.back() == nx - 1 && c.lambda.size() >= 2) ends.push_back(c.id);
            if (c.xi_index.front() == 0) starts.push_back(c.id);
        }
        std::vector<cd> pr, cand;
        std::vector<double> sc;
        for (int id : ends) {
            pr.push_back(predict(tr.curves[id], S.xi.back() + step));
            sc.push_back(step_scale(tr.curves[id]));
        }
        for (int id : starts) cand.push_back(tr.curves[id].lambda.front());
        Assignment a = match(pr, sc, cand, opt, false);
        if (a.ambiguous && opt.require_unambiguous) throw ResolutionError("ambiguous gluing at xi=pi; refine the xi grid");
        for (size_t s = 0; s < ends.size(); ++s)
            if (a.target[s] >= 0) {
                succ[ends[s]] = starts[a.target[s]];
                pred_of[starts[a.target[s]]] = ends[s];
            }
    }
    std::vector<char> seen(nc, 0);
    auto walk = [&](int start, bool closed) {
        Chain ch;
        ch.closed = closed;
        int b = start;
        while (b >= 0 && !seen[b]) {
            seen[b] = 1;
            ch.bands.push_back(b);
            b = succ[b];
        }
        ch.cls = closed ? CurveClass::Loop : CurveClass::Line;
        const int id = static_cast<int>(tr.chains.size());
        for (size_t p = 0; p < ch.bands.size(); ++p) {
            tr.curves[ch.bands[p]].chain = id;
            tr.curves[ch.bands[p]].chain_pos = static_cast<int>(p);
            tr.curves[ch.bands[p]].cls = ch.cls;
        }
        tr.chains.push_back(ch);
    };
    for (int b = 0; b < nc; ++b)
        if (pred_of[b] < 0) walk(b, false);
    for (int b = 0; b < nc; ++b)
        if (!seen[b]) walk(b, true);
    for (const auto& ch : tr.chains) {
        if (ch.closed) tr.n_loops++;
        else tr.n_line_chains++;
    }
    return tr;
}

namespace {

// Eigenvalues of A nearest to the predictions, one each, chosen to minimise the
// largest mismatch over all assignments (brute force, small r).
std::vector<cd> nearest_set(const CVec& w, const std::vector<cd>& pred) {
    const int r = static_cast<int>(pred.size());
    std::vector<int> cand_idx;
    for (int i = 0; i < r; ++i) {
        std::vector<std::pair<double, int>> ds;
        for (int j = 0; j < w.size(); ++j) ds.push_back({std::abs(w(j) - pred[i]), j});
        std::partial_sort(ds.begin(), ds.begin() + std::min<int>(r + 1, ds.size()), ds.end());
        for (int q = 0; q < std::min<int>(r + 1, ds.size()); ++q) cand_idx.push_back(ds[q].second);
    }
    std::sort(cand_idx.begin(), cand_idx.end());
    cand_idx.erase(std::unique(cand_idx.begin(), cand_idx.end()), cand_idx.end());
    std::vector<int> best(r, -1), cur(r, -1);
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<char> used(cand_idx.size(), 0);
    std::function<void(int, double)> rec = [&](int i, double cost) {
        if (cost >= best_cost) return;
        if (i == r) {
            best_cost = cost;
            best = cur;
            return;
        }
        for (size_t q = 0; q < cand_idx.size(); ++q) {
            if (used[q]) continue;
            used[q] = 1;
            cur[i] = cand_idx[q];
            rec(i + 1, std::max(cost, std::abs(w(cand_idx[q]) - pred[i])));
            used[q] = 0;
        }
    };
    rec(0, 0.0);
    std::vector<cd> out(r);
    for (int i = 0; i < r; ++i) out[i] = w(best[i]);
    return out;
}

}  // namespace

CriticalExpansion critical_expansion(const SystemSpec& sys, const WaveProfile& wave, const ExpansionOptions& opt) {
    CriticalExpansion E;
    FiberPencil P = fiber_pencil(sys, wave, opt.n_f);
    const CMat& A0 = P.A[0];
    const int n = static_cast<int>(A0.rows());
    const double nrm = one_norm(A0);
    const double radius = 10.0 * std::sqrt(std::numeric_limits<double>::epsilon() * nrm);

    CVec w = eig_general(A0, false).values;
    std::vector<double> mags(w.size());
    for (int i = 0; i < w.size(); ++i) mags[i] = std::abs(w(i));
    std::sort(mags.begin(), mags.end());
    int r = 0;
    while (r < n && mags[r] < radius) ++r;
    E.multiplicity = r;
    E.gap = (r > 0 && r < n) ? mags[r - 1] / mags[r] : 0.0;
    E.geometric_multiplicity = n - numerical_rank(A0, opt.rank_tol * nrm);
    if (r == 0) {
        E.note = "zero is not an eigenvalue of L_0";
        return E;
    }

    SchurSplit right = schur_small(A0, radius);
    SchurSplit left = schur_small(A0.adjoint(), radius);
    if (right.selected != r || left.selected != r) throw SolverError("Schur split disagrees with the eigenvalue count");
    CMat T11 = right.T.topLeftCorner(r, r);
    CMat Tp = CMat::Identity(r, r);
    for (int p = 1; p <= r; ++p) {
        Tp = Tp * T11;
        E.jordan_ranks.push_back(numerical_rank(Tp, opt.rank_tol * nrm));
    }
    CMat R = right.Z.leftCols(r);
    CMat W = left.Z.leftCols(r);
    CMat Lt = (W.adjoint() * R).lu().solve(W.adjoint());

    CMat N0 = Lt * A0 * R;
    Eigen::JacobiSVD<CMat> svd(N0, Eigen::ComputeFullU);
    int rank = 0;
    for (int i = 0; i < r; ++i)
        if (svd.singularValues()(i) > opt.rank_tol * nrm) ++rank;
    CMat U = svd.matrixU();
    CMat R2 = R * U, Lt2 = U.adjoint() * Lt;
    N0 = Lt2 * A0 * R2;
    CMat B1 = Lt2 * P.A[1] * R2;
    CMat red;
    if (rank == 0) {
        red = B1;
    } else if (rank == 1) {
        // one Jordan chain of length two: rescale the range coordinate by xi
        CMat Q = CMat::Identity(n, n) - R2 * Lt2;
        CMat G = (A0 + R2 * Lt2).lu().solve(CMat::Identity(n, n));
        CVec r0 = R2.col(0);
        CVec C2 = Lt2 * P.A[2] * r0 - Lt2 * P.A[1] * (G * (Q * (P.A[1] * r0)));
        red = CMat::Zero(r, r);
        red(0, 0) = B1(0, 0);
        for (int b = 1; b < r; ++b) red(0, b) = N0(0, b);
        for (int a = 1; a < r; ++a) red(a, 0) = C2(a);
        red.bottomRightCorner(r - 1, r - 1) = B1.bottomRightCorner(r - 1, r - 1);
        double leak = r > 1 ? B1.col(0).tail(r - 1).cwiseAbs().maxCoeff() : 0.0;
        if (leak > 1e-6 * std::max(1.0, B1.cwiseAbs().maxCoeff()))
            E.note = "first-order coupling into the phase coordinate; curves may not be differentiable at 0";
    } else {
        E.note = "Jordan structure with more than one chain; slopes from finite differences only";
    }
    if (red.size()) {
        CVec s = eig_general(red, false).values;
        E.slopes.assign(s.data(), s.data() + s.size());
        std::sort(E.slopes.begin(), E.slopes.end(), im_then_re);
    }

    // finite differences along the branches, predicted by the slopes
    std::vector<cd> guess = E.slopes;
    if (guess.empty()) {
        CVec wh = eigenvalues(P.at(opt.h2));
        std::vector<std::pair<double, cd>> near;
        for (int i = 0; i < wh.size(); ++i) near.push_back({std::abs(wh(i)), wh(i)});
        std::sort(near.begin(), near.end(), [](auto& a, auto& b) { return a.first < b.first; });
        for (int i = 0; i < r; ++i) guess.push_back(near[i].second / opt.h2);
    }
    auto branch_values = [&](double h) {
        std::array<std::vector<cd>, 4> f;
        const double xs[4] = {-2 * h, -h, h, 2 * h};
        for (int q = 0; q < 4; ++q) {
            std::vector<cd> pred(r);
            for (int j = 0; j < r; ++j) pred[j] = xs[q] * guess[j];
            f[q] = nearest_set(eigenvalues(P.at(xs[q])), pred);
        }
        return f;
    };
    auto f1 = branch_values(opt.h1), f2 = branch_values(opt.h2);
    const double ratio = opt.h1 / opt.h2;
    E.fd_slopes.resize(r);
    E.curvatures.resize(r);
    E.third.resize(r);
    E.curvature_err.resize(r);
    E.third_err.resize(r);
    for (int j = 0; j < r; ++j) {
        auto d1 = [&](const std::array<std::vector<cd>, 4>& f, double h) {
            return (-f[3][j] + 8.0 * f[2][j] - 8.0 * f[1][j] + f[0][j]) / (12.0 * h);
        };
        auto d2 = [&](const std::array<std::vector<cd>, 4>& f, double h) {
            return (-f[3][j] + 16.0 * f[2][j] + 16.0 * f[1][j] - f[0][j]) / (12.0 * h * h);
        };
        auto d3 = [&](const std::array<std::vector<cd>, 4>& f, double h) {
            return (f[3][j] - 2.0 * f[2][j] + 2.0 * f[1][j] - f[0][j]) / (2.0 * h * h * h);
        };
        const double p4 = std::pow(ratio, 4), p2 = ratio * ratio;
        cd a1 = d1(f1, opt.h1), b1 = d1(f2, opt.h2);
        cd a2 = d2(f1, opt.h1), b2 = d2(f2, opt.h2);
        cd a3 = d3(f1, opt.h1), b3 = d3(f2, opt.h2);
        E.fd_slopes[j] = (p4 * b1 - a1) / (p4 - 1.0);
        E.curvatures[j] = (p4 * b2 - a2) / (p4 - 1.0);
        E.third[j] = (p2 * b3 - a3) / (p2 - 1.0);
        E.curvature_err[j] = std::abs(b2 - a2);
        E.third_err[j] = std::abs(b3 - a3);
        if (!E.slopes.empty())
            E.slope_consistency = std::max(E.slope_consistency, std::abs(E.fd_slopes[j] - E.slopes[j]) / std::abs(E.slopes[j]));
    }
    if (E.slopes.empty()) E.slopes = E.fd_slopes;
    double smax = 0.0, gap = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < E.slopes.size(); ++i) {
        smax = std::max(smax, std::abs(E.slopes[i]));
        for (size_t j = i + 1; j < E.slopes.size(); ++j) gap = std::min(gap, std::abs(E.slopes[i] - E.slopes[j]));
    }
    E.degenerate_slopes = E.slopes.size() > 1 && gap < 1e-8 * std::max(1.0, smax);
    return E;
}

double cubic_fit_third(const std::vector<double>& x, const std::vector<double>& y) {
    const int n = static_cast<int>(x.size());
    if (n < 4) throw ConfigError("cubic fit needs at least four samples");
    double c = 0.0;
    for (double v : x) c += v;
    c /= n;
    RMat V(n, 4);
    RVec b(n);
    for (int i = 0; i < n; ++i) {
        double t = x[i] - c;
        V(i, 0) = 1.0;
        V(i, 1) = t;
        V(i, 2) = t * t;
        V(i, 3) = t * t * t;
        b(i) = y[i];
    }
    RVec coef = V.colPivHouseholderQr().solve(b);
    return 6.0 * coef(3);
}

LargeBranchResult large_branch_asymptotics(const TrackResult& tr, double k) {
    LargeBranchResult res;
    res.limit_k = 6.0 * k;
    res.limit_k3 = 6.0 * k * k * k;
    int best = -1;
    for (size_t c = 0; c < tr.chains.size(); ++c)
        if (!tr.chains[c].closed && (best < 0 || tr.chains[c].bands.size() > tr.chains[best].bands.size())) best = c;
    if (best < 0) throw ConfigError("no line family to analyse");
    const Chain& ch = tr.chains[best];
    // reference band: the critical band of the line, else the one closest to zero
    int ref = -1;
    double refv = std::numeric_limits<double>::infinity();
    for (size_t p = 0; p < ch.bands.size(); ++p) {
        const SpectralCurve& c = tr.curves[ch.bands[p]];
        double mv = std::numeric_limits<double>::infinity();
        for (const cd& l : c.lambda) mv = std::min(mv, std::abs(l));
        if (c.critical) mv = -1.0;
        if (mv < refv) {
            refv = mv;
            ref = static_cast<int>(p);
        }
    }
    // orient so that band index grows with Im lambda
    const SpectralCurve& r0 = tr.curves[ch.bands[ref]];
    double dir = 1.0;
    if (ref + 1 < static_cast<int>(ch.bands.size())) {
        const SpectralCurve& r1 = tr.curves[ch.bands[ref + 1]];
        if (r1.lambda.front().imag() < r0.lambda.front().imag()) dir = -1.0;
    }
    for (size_t p = 0; p < ch.bands.size(); ++p) {
        const SpectralCurve& c = tr.curves[ch.bands[p]];
        if (c.xi.size() < 8) continue;
        std::vector<double> im;
        double mean = 0.0;
        for (const cd& l : c.lambda) {
            im.push_back(l.imag());
            mean += l.imag();
        }
        BandAsymptotics b;
        b.band = static_cast<int>(dir * (static_cast<int>(p) - ref));
        b.third = cubic_fit_third(c.xi, im);
        b.mean_im = mean / im.size();
        res.bands.push_back(b);
    }
    std::sort(res.bands.begin(), res.bands.end(), [](auto& a, auto& b) { return a.band < b.band; });
    int beyond = 0;
    for (const auto& b : res.bands)
        if (b.band != 0) ++beyond;
    if (beyond < 3) throw ConfigError("fewer than three line branches for the asymptotic fit");
    return res;
}

void write_spectrum_csv(const FloquetSpectrum& S, const TrackResult& tr, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << std::setprecision(17) << "xi,re_lambda,im_lambda,branch_id,resolved\n";
    std::vector<std::vector<std::pair<cd, int>>> tagged(S.xi.size());
    for (const auto& c : tr.curves)
        for (size_t i = 0; i < c.xi_index.size(); ++i) tagged[c.xi_index[i]].push_back({c.lambda[i], c.id});
    for (size_t m = 0; m < S.xi.size(); ++m) {
        std::vector<char> used(tagged[m].size(), 0);
        for (const auto& e : S.eigs[m]) {
            int id = -1;
            if (e.resolved)
                for (size_t q = 0; q < tagged[m].size(); ++q)
                    if (!used[q] && tagged[m][q].first == e.lambda) {
                        id = tagged[m][q].second;
                        used[q] = 1;
                        break;
                    }
            os << S.xi[m] << ',' << e.lambda.real() << ',' << e.lambda.imag() << ',' << id << ',' << (e.resolved ? 1 : 0) << '\n';
        }
    }
}

void write_figure1_csv(const TrackResult& tr, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << std::setprecision(17) << "im_lambda,xi,branch_class\n";
    for (const auto& c : tr.curves)
        for (size_t i = 0; i < c.xi.size(); ++i)
            os << c.lambda[i].imag() << ',' << c.xi[i] << ',' << to_string(c.cls) << (c.critical ? "+critical" : "") << '\n';
}

}  // namespace mw
