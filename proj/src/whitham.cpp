#include "modwave/whitham.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "modwave/linalg.hpp"

namespace mw {

RMat conserved_densities(const SystemSpec& sys, const RMat& U) {
    if (sys.kind != SystemKind::KdV) return U;
    RMat q(U.rows(), 2);
    q.col(0) = U.col(0);
    q.col(1) = 0.5 * U.col(0).array().square().matrix();
    return q;
}

namespace {

// G with G'(u) = u f'(u) for the scalar KdV flux
double kdv_entropy_flux(const Flux& f, double u) {
    return f.A(0, 0) * u * u / 2.0 + 2.0 * f.b(0, 0, 0) * u * u * u / 3.0 + 3.0 * f.c(0, 0, 0, 0) * u * u * u * u / 4.0;
}

// barycentric-free Lagrange basis values and derivatives at x
void lagrange(const std::vector<double>& nodes, double x, RVec& l, RVec& dl) {
    const int n = static_cast<int>(nodes.size());
    l.resize(n);
    dl.resize(n);
    for (int i = 0; i < n; ++i) {
        double v = 1.0, dv = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double den = nodes[i] - nodes[j];
            dv = dv * (x - nodes[j]) / den + v / den;
            v *= (x - nodes[j]) / den;
        }
        l(i) = v;
        dl(i) = dv;
    }
}

std::vector<int> unflatten(int flat, const std::vector<std::vector<double>>& nodes) {
    std::vector<int> idx(nodes.size());
    for (int a = static_cast<int>(nodes.size()) - 1; a >= 0; --a) {
        const int n = static_cast<int>(nodes[a].size());
        idx[a] = flat % n;
        flat /= n;
    }
    return idx;
}

}  // namespace

RVec averaged_flux(const SystemSpec& sys, const WaveProfile& w) {
    const int n = 4 * std::max(w.n_modes, 1) + 1;
    RMat U = w.samples(n);
    if (sys.kind == SystemKind::KdV) {
        RMat U1 = w.derivative_samples(n, 1);
        RVec F = RVec::Zero(3);
        for (int i = 0; i < n; ++i) {
            RVec u = U.row(i).transpose();
            F(0) += sys.flux.eval(u)(0);
            F(1) += kdv_entropy_flux(sys.flux, u(0)) - 1.5 * w.k * w.k * U1(i, 0) * U1(i, 0);
        }
        F.head(2) /= n;
        F(2) = w.omega;
        return F;
    }
    RVec F = RVec::Zero(sys.d + 1);
    for (int i = 0; i < n; ++i) F.head(sys.d) += sys.flux.eval(U.row(i).transpose());
    F.head(sys.d) /= n;
    F(sys.d) = w.omega;
    return F;
}

bool AveragedMaps::inside(const RVec& q) const {
    if (q.size() != n_coords()) return false;
    for (int a = 0; a < n_coords(); ++a) {
        const double lo = nodes[a].front(), hi = nodes[a].back(), tol = 1e-12 * (hi - lo);
        if (q(a) < lo - tol || q(a) > hi + tol) return false;
    }
    return true;
}

RVec AveragedMaps::eval(const RVec& q) const {
    if (q.size() != n_coords()) throw ConfigError("coordinate vector has the wrong size");
    std::vector<RVec> l(n_coords()), dl(n_coords());
    for (int a = 0; a < n_coords(); ++a) lagrange(nodes[a], q(a), l[a], dl[a]);
    RVec out = RVec::Zero(values.cols());
    for (int r = 0; r < values.rows(); ++r) {
        std::vector<int> idx = unflatten(r, nodes);
        double w = 1.0;
        for (int a = 0; a < n_coords(); ++a) w *= l[a](idx[a]);
        out += w * values.row(r).transpose();
    }
    return out;
}

RMat AveragedMaps::jacobian(const RVec& q) const {
    if (q.size() != n_coords()) throw ConfigError("coordinate vector has the wrong size");
    const int nc = n_coords();
    std::vector<RVec> l(nc), dl(nc);
    for (int a = 0; a < nc; ++a) lagrange(nodes[a], q(a), l[a], dl[a]);
    RMat J = RMat::Zero(values.cols(), nc);
    for (int r = 0; r < values.rows(); ++r) {
        std::vector<int> idx = unflatten(r, nodes);
        for (int b = 0; b < nc; ++b) {
            double w = 1.0;
            for (int a = 0; a < nc; ++a) w *= a == b ? dl[a](idx[a]) : l[a](idx[a]);
            J.col(b) += w * values.row(r).transpose();
        }
    }
    return J;
}

AveragedMaps tabulate_averages(const SystemSpec& sys, const WaveProfile& center, const TabulationOptions& opt) {
    validate(sys);
    if (opt.points_per_axis < 3) throw ConfigError("tabulation needs at least 3 points per axis");
    if (!(opt.rel_step > 0.0)) throw ConfigError("tabulation step must be positive");
    AveragedMaps A;
    A.sys = sys;
    A.center = center.family_coords();
    A.constant_family = center.degenerate || center.amplitude() == 0.0;
    const int nc = static_cast<int>(A.center.size());
    const int np = opt.points_per_axis;
    for (int a = 0; a < nc; ++a) {
        const double h = opt.rel_step * std::max(std::abs(A.center(a)), 1.0);
        std::vector<double> x(np);
        for (int i = 0; i < np; ++i) x[i] = A.center(a) + h * (i - 0.5 * (np - 1));
        A.nodes.push_back(x);
    }
    int total = 1;
    for (const auto& x : A.nodes) total *= static_cast<int>(x.size());
    const int nf = static_cast<int>(averaged_flux(sys, center).size());
    A.values = RMat::Zero(total, nf);
    std::vector<std::string> failed(total);
    std::vector<double> ident(total, 0.0);
    ProfileOptions popt = opt.profile;
    const bool kdv_closed_form = sys.kind == SystemKind::KdV && sys.name == "kdv";
    popt.n_modes = center.n_modes;
    parallel_for(total, [&](int r) {
        std::vector<int> idx = unflatten(r, A.nodes);
        RVec q(nc);
        for (int a = 0; a < nc; ++a) q(a) = A.nodes[a][idx[a]];
        try {
            WaveProfile w;
            if (A.constant_family) {
                w = constant_state(sys, q.head(nc - 1), q(nc - 1), center.n_modes);
            } else if (kdv_closed_form) {
                w = cnoidal_from_invariants(q(0), q(1), q(2), center.n_modes);
            } else {
                w = solve_profile(sys, center, q, popt);
                if (w.degenerate) throw SolverError("profile collapsed to a constant");
            }
            A.values.row(r) = averaged_flux(sys, w).transpose();
            ident[r] = std::abs(w.omega + w.k * w.speed());
        } catch (const Error& e) {
            std::ostringstream os;
            os << "[";
            for (int a = 0; a < nc; ++a) os << (a ? ", " : "") << q(a);
            os << "]: " << e.what();
            failed[r] = os.str();
        }
    });
    std::string msg;
    for (const auto& f : failed)
        if (!f.empty()) msg += "\n  " + f;
    if (!msg.empty()) throw SolverError("profile solves failed at tabulation nodes:" + msg);
    A.omega_identity = *std::max_element(ident.begin(), ident.end());

    // leave-one-out along the axes through the center node
    const int mid = (np - 1) / 2;
    for (int a = 0; a < nc; ++a) {
        std::vector<int> idx(nc, mid);
        std::vector<RVec> line;
        for (int i = 0; i < np; ++i) {
            idx[a] = i;
            int flat = 0;
            for (int b = 0; b < nc; ++b) flat = flat * np + idx[b];
            line.push_back(A.values.row(flat).transpose());
        }
        for (int skip = 0; skip < np; ++skip) {
            std::vector<double> x;
            for (int i = 0; i < np; ++i)
                if (i != skip) x.push_back(A.nodes[a][i]);
            RVec l, dl;
            lagrange(x, A.nodes[a][skip], l, dl);
            RVec pred = RVec::Zero(nf);
            int c = 0;
            for (int i = 0; i < np; ++i)
                if (i != skip) pred += l(c++) * line[i];
            A.loo_error = std::max(A.loo_error, (pred - line[skip]).cwiseAbs().maxCoeff());
        }
    }
    return A;
}

CharacteristicResult characteristic_matrix(const AveragedMaps& A, const RVec& q) {
    if (!A.inside(q)) throw ConfigError("point lies outside the tabulation patch");
    CharacteristicResult r;
    RMat J = A.jacobian(q);
    r.matrix = J;
    r.matrix.row(J.rows() - 1) *= -1.0;
    CVec s = eigenvalues(r.matrix.cast<cd>());
    std::vector<cd> v(s.data(), s.data() + s.size());
    std::sort(v.begin(), v.end(), [](cd a, cd b) { return a.real() < b.real(); });
    r.speeds = Eigen::Map<CVec>(v.data(), static_cast<Eigen::Index>(v.size()));
    double scale = 1.0, imag = 0.0;
    for (const cd& z : v) {
        scale = std::max(scale, std::abs(z));
        imag = std::max(imag, std::abs(z.imag()));
    }
    r.min_gap = std::numeric_limits<double>::infinity();
    for (size_t i = 1; i < v.size(); ++i) r.min_gap = std::min(r.min_gap, std::abs(v[i] - v[i - 1]));
    r.hyperbolic = imag <= 1e-10 * scale && r.min_gap > 1e-8 * scale;
    return r;
}

SpeedComparison compare_speeds(const AveragedMaps& A, const WaveProfile& wave, const CriticalExpansion& E) {
    SpeedComparison c;
    const double k = wave.k, om = wave.omega;
    std::vector<cd> s;
    if (A.constant_family) {
        RMat J = A.jacobian(A.center);
        const int d = A.n_flux();
        CVec e = eigenvalues(J.topLeftCorner(d, d).cast<cd>());
        for (int i = 0; i < e.size(); ++i) s.push_back(e(i));
    } else {
        CVec e = characteristic_matrix(A, A.center).speeds;
        for (int i = 0; i < e.size(); ++i) s.push_back(e(i));
    }
    for (const cd& z : s) c.averaged.push_back(k * z.real() + om);
    for (const cd& l : E.slopes) c.spectral.push_back(kI * l);
    std::sort(c.averaged.begin(), c.averaged.end());
    std::sort(c.spectral.begin(), c.spectral.end(), [](cd a, cd b) { return a.real() < b.real(); });
    if (c.averaged.size() != c.spectral.size())
        throw ResolutionError("averaged system has " + std::to_string(c.averaged.size()) + " speeds but the expansion " +
                              std::to_string(c.spectral.size()) + " critical slopes");
    double scale = 0.0;
    for (const cd& z : c.spectral) scale = std::max(scale, std::abs(z));
    for (size_t i = 0; i < c.averaged.size(); ++i) {
        const double den = std::max(std::abs(c.spectral[i]), 1e-6 * std::max(scale, 1e-300));
        c.max_rel_error = std::max(c.max_rel_error, std::abs(c.averaged[i] - c.spectral[i]) / den);
    }
    return c;
}

double invert_phase(const ScalarFn& psi, const ScalarFn& psi_x, double x) {
    double y = x + psi(x);
    for (int it = 0; it < 100; ++it) {
        const double d = 1.0 - psi_x(y);
        if (!(d > 0.0)) throw ConfigError("Id - psi is not invertible (psi_x >= 1)");
        const double step = (y - psi(y) - x) / d;
        y -= step;
        if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(y))) return y;
    }
    if (std::abs(y - psi(y) - x) > 1e-12 * std::max(1.0, std::abs(x))) throw SolverError("phase inversion did not converge");
    return y;
}

std::pair<RVec, double> effective_point(const SystemSpec& sys, const WaveProfile& wave, const RVec& u0,
                                        const ScalarFn& psi0, const ScalarFn& psi0_x, double x) {
    const double Psi = invert_phase(psi0, psi0_x, x);
    const double dPsi = 1.0 / (1.0 - psi0_x(Psi));
    RVec qbar = conserved_densities(sys, wave.eval(Psi).transpose()).row(0).transpose();
    RVec q0 = conserved_densities(sys, u0.transpose()).row(0).transpose();
    const RVec& Mbar = wave.params;
    RVec M = Mbar + q0 - qbar + (1.0 / dPsi - 1.0) * (qbar - Mbar);
    return {M, wave.k * dPsi};
}

ModulationField effective_data(const SystemSpec& sys, const WaveProfile& wave, const SampledLine& U0,
                               const ScalarFn& psi0, const ScalarFn& psi0_x) {
    if (U0.dim() != wave.d) throw ConfigError("initial state and wave dimension differ");
    const int n = U0.n_cells, M = U0.pts_per_cell, L = U0.size();
    const int nq = static_cast<int>(wave.params.size());
    RMat q(L, nq);
    RVec kap(L);
    parallel_for(L, [&](int i) {
        auto [m, k] = effective_point(sys, wave, U0.values.row(i).real().transpose(), psi0, psi0_x, U0.x(i));
        q.row(i) = m.transpose();
        kap(i) = k;
    });
    ModulationField f;
    f.n_cells = n;
    f.M = RMat::Zero(n, nq);
    f.kappa = RVec::Zero(n);
    f.phase.resize(n);
    f.psi.resize(n);
    for (int c = 0; c < n; ++c) {
        // composite trapezoid over [c, c+1]; the right end is the next cell's first sample
        for (int i = 0; i <= M; ++i) {
            const int s = (c * M + i) % L;
            const double w = (i == 0 || i == M) ? 0.5 / M : 1.0 / M;
            if (c * M + i == L) {
                // psi0 need not be periodic, so the domain end is evaluated there
                auto [m, k] = effective_point(sys, wave, U0.values.row(0).real().transpose(), psi0, psi0_x, n);
                f.M.row(c) += w * m.transpose();
                f.kappa(c) += w * k;
                continue;
            }
            f.M.row(c) += w * q.row(s);
            f.kappa(c) += w * kap(s);
        }
        const double xc = c + 0.5;
        f.phase(c) = invert_phase(psi0, psi0_x, xc) - xc;
        f.psi(c) = psi0(xc);
    }
    return f;
}

namespace {

double periodic_linear(const RVec& v, double x) {
    // v holds values at cell centers c + 1/2 on a grid of v.size() cells
    const int n = static_cast<int>(v.size());
    const double s = x - 0.5;
    const int i0 = static_cast<int>(std::floor(s));
    const double t = s - i0;
    return (1.0 - t) * v(pos_mod(i0, n)) + t * v(pos_mod(i0 + 1, n));
}

// psi(x) = phase(x - psi(x)) at the cell centers, by fixed point
RVec psi_from_phase(const RVec& phase) {
    const int n = static_cast<int>(phase.size());
    RVec psi = phase;
    for (int i = 0; i < n; ++i) {
        const double x = i + 0.5;
        double p = phase(i);
        for (int it = 0; it < 100; ++it) {
            const double np = periodic_linear(phase, x - p);
            if (std::abs(np - p) < 1e-15) {
                p = np;
                break;
            }
            p = np;
        }
        psi(i) = p;
    }
    return psi;
}

// Largest jump between neighboring cells, each coordinate measured in units of its patch width.
double max_slope(const RMat& Q, const RVec& width) {
    const int n = static_cast<int>(Q.rows());
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        s = std::max(s, ((Q.row((i + 1) % n) - Q.row(i)).transpose().cwiseAbs().array() / width.array()).maxCoeff());
    return s;
}

}  // namespace

WhithamTrajectory solve_whitham(const AveragedMaps& A, const ModulationField& init, double k0, double omega0,
                                const std::vector<double>& times, const WhithamOptions& opt) {
    if (times.empty()) throw ConfigError("no output times");
    for (size_t i = 0; i < times.size(); ++i)
        if (!(times[i] >= 0.0) || (i > 0 && !(times[i] > times[i - 1]))) throw ConfigError("output times must increase");
    if (!(opt.nu_art >= 0.0) || !(opt.cfl > 0.0)) throw ConfigError("invalid Whitham solver options");
    const int n = init.n_cells, nq = static_cast<int>(init.M.cols()), nc = nq + 1;
    if (nc != A.n_coords()) throw ConfigError("modulation field does not match the averaged maps");
    RMat Q(n, nc);
    Q.leftCols(nq) = init.M;
    Q.col(nq) = init.kappa;
    RVec phase = init.phase;
    for (int i = 0; i < n; ++i)
        if (!A.inside(Q.row(i).transpose())) throw ConfigError("initial modulation leaves the tabulation patch");
    auto speed_bound = [&](const RMat& S) {
        double a = 0.0;
        for (int i = 0; i < n; ++i) {
            RMat J = A.jacobian(S.row(i).transpose());
            J.row(nc - 1) *= -1.0;
            RMat B = k0 * J + omega0 * RMat::Identity(nc, nc);
            CVec e = eigenvalues(B.cast<cd>());
            for (int j = 0; j < e.size(); ++j) a = std::max(a, std::abs(e(j)));
        }
        return a;
    };
    auto rhs = [&](const RMat& S, RMat& dQ, RVec& dphase) {
        RMat H(n, nc);
        RVec om(n);
        for (int i = 0; i < n; ++i) {
            RVec v = A.eval(S.row(i).transpose());
            RVec phi(nc);
            phi.head(nc - 1) = v.head(nc - 1);
            phi(nc - 1) = -v(nc - 1);
            H.row(i) = (k0 * phi + omega0 * S.row(i).transpose()).transpose();
            om(i) = v(nc - 1);
        }
        RMat G(n, nc);
        for (int i = 0; i < n; ++i) {
            const int j = (i + 1) % n;
            G.row(i) = 0.5 * (H.row(i) + H.row(j)) - opt.nu_art * (S.row(j) - S.row(i));
        }
        dQ.resize(n, nc);
        for (int i = 0; i < n; ++i) dQ.row(i) = -(G.row(i) - G.row(pos_mod(i - 1, n)));
        dphase = om - (omega0 / k0) * S.col(nc - 1);
    };
    WhithamTrajectory tr;
    RVec width(nc);
    for (int a = 0; a < nc; ++a) width(a) = A.nodes[a].back() - A.nodes[a].front();
    const double slope0 = max_slope(Q, width);
    auto snapshot = [&](double t) {
        ModulationField f;
        f.n_cells = n;
        f.M = Q.leftCols(nq);
        f.kappa = Q.col(nq);
        f.phase = phase;
        f.psi = psi_from_phase(phase);
        tr.times.push_back(t);
        tr.fields.push_back(std::move(f));
    };
    double amax = speed_bound(Q), t = 0.0;
    int steps = 0;
    for (double target : times) {
        while (t < target - 1e-14 * std::max(1.0, target)) {
            double dt = opt.cfl / std::max(amax + 2.0 * opt.nu_art, 1e-300);
            dt = std::min(dt, target - t);
            RMat k1, k2, k3;
            RVec p1, p2, p3;
            rhs(Q, k1, p1);
            RMat Q1 = Q + dt * k1;
            RVec f1 = phase + dt * p1;
            bool ok = true;
            for (int i = 0; i < n && ok; ++i) ok = A.inside(Q1.row(i).transpose());
            if (ok) {
                rhs(Q1, k2, p2);
                RMat Q2 = 0.75 * Q + 0.25 * (Q1 + dt * k2);
                RVec f2 = 0.75 * phase + 0.25 * (f1 + dt * p2);
                for (int i = 0; i < n && ok; ++i) ok = A.inside(Q2.row(i).transpose());
                if (ok) {
                    rhs(Q2, k3, p3);
                    Q = (Q + 2.0 * (Q2 + dt * k3)) / 3.0;
                    phase = (phase + 2.0 * (f2 + dt * p3)) / 3.0;
                    for (int i = 0; i < n && ok; ++i) ok = A.inside(Q.row(i).transpose());
                }
            }
            if (!ok || !Q.allFinite()) {
                tr.truncated = true;
                tr.note = "modulation left the tabulation patch at t=" + std::to_string(t);
                return tr;
            }
            t += dt;
            if (max_slope(Q, width) > opt.shock_factor * slope0 + opt.shock_floor) {
                tr.truncated = true;
                tr.note = "gradient blow-up (shock formation) at t=" + std::to_string(t);
                return tr;
            }
            if (++steps % 50 == 0) amax = speed_bound(Q);
        }
        snapshot(target);
    }
    return tr;
}

std::vector<ModulationField> extract_modulation(const SystemSpec& sys, const Trajectory& tr, const WaveProfile& wave,
                                                const ExtractOptions& opt) {
    std::vector<ModulationField> out;
    for (const SampledLine& U : tr.states) {
        const int n = U.n_cells, M = U.pts_per_cell, L = U.size();
        SmDistanceResult r = compute_sm_distance(U, wave, opt.norm, opt.distance);
        const ModDecomposition& md = r.decomposition;
        SampledLine psi = md.psi;
        psi.values.array() += md.shift;
        // psi is band-limited, so its trigonometric interpolant is exact
        auto psi_at = [&](double x) {
            RVec p(1);
            p(0) = x;
            return evaluate_periodic(psi, p)(0, 0).real();
        };
        auto Psi = [&](double x) {
            double y = x + psi_at(x);
            for (int it = 0; it < 200; ++it) {
                const double ny = x + psi_at(y);
                if (std::abs(ny - y) < 1e-15 * std::max(1.0, std::abs(x))) return ny;
                y = ny;
            }
            return y;
        };
        RMat ubar = wave_on_line(wave, n, M).values.real();
        RMat full = ubar + md.v_part.values.real();
        RMat q = conserved_densities(sys, full);
        const int nq = static_cast<int>(q.cols());
        RMat Mt = RMat::Zero(n, nq);
        for (int c = 0; c < n; ++c)
            for (int i = 0; i <= M; ++i) Mt.row(c) += ((i == 0 || i == M) ? 0.5 / M : 1.0 / M) * q.row((c * M + i) % L);
        ModulationField f;
        f.n_cells = n;
        f.M.resize(n, nq);
        f.kappa.resize(n);
        f.phase.resize(n);
        f.psi.resize(n);
        std::vector<double> edge(n + 1);
        for (int c = 0; c <= n; ++c) edge[c] = Psi(static_cast<double>(c));
        for (int c = 0; c < n; ++c) {
            const double xc = c + 0.5, Pc = Psi(xc);
            f.kappa(c) = wave.k * (edge[c + 1] - edge[c]);
            f.phase(c) = Pc - xc;
            f.psi(c) = psi_at(xc);
            for (int j = 0; j < nq; ++j) f.M(c, j) = periodic_linear(Mt.col(j), Pc);
        }
        out.push_back(std::move(f));
    }
    return out;
}

namespace {

double cell_lp(const RMat& X, double p) {
    RVec s = X.rowwise().norm();
    if (std::isinf(p)) return s.size() ? s.maxCoeff() : 0.0;
    return std::pow(s.array().pow(p).sum(), 1.0 / p);
}

RMat stack(const ModulationField& f) {
    RMat X(f.n_cells, f.M.cols() + 1);
    X.leftCols(f.M.cols()) = f.M;
    X.col(f.M.cols()) = f.kappa;
    return X;
}

}  // namespace

Comparison compare(const std::vector<double>& times, const std::vector<ModulationField>& full,
                   const std::vector<ModulationField>& reduced, double p, const RVec& background, double fit_t0,
                   double fit_t1) {
    if (full.size() != times.size() || reduced.size() != times.size())
        throw ConfigError("comparison needs both runs on the common time grid");
    if (!(p >= 1.0)) throw ConfigError("comparison exponent must be at least 1");
    Comparison c;
    std::map<std::string, std::vector<double>> series;
    for (size_t i = 0; i < times.size(); ++i) {
        const ModulationField &a = full[i], &b = reduced[i];
        if (a.n_cells != b.n_cells || a.M.cols() != b.M.cols()) throw ConfigError("modulation grids differ");
        RMat A = stack(a), B = stack(b);
        std::vector<std::pair<std::string, double>> vals = {{"M_kappa", cell_lp(A - B, p)},
                                                            {"Psi", cell_lp(a.phase - b.phase, p)}};
        if (background.size() > 0) {
            if (background.size() != A.cols()) throw ConfigError("background has the wrong size");
            RMat D = A.rowwise() - background.transpose();
            vals.push_back({"M_kappa_scale", cell_lp(D, p)});
        }
        for (const auto& [q, g] : vals) {
            c.rows.push_back({times[i], q, p, g});
            series[q].push_back(g);
        }
    }
    if (fit_t1 > fit_t0 && fit_t0 > 0.0)
        for (const auto& [q, v] : series) {
            try {
                c.fits[q] = fit_decay(times, v, fit_t0, fit_t1);
            } catch (const ConfigError&) {
            }
        }
    return c;
}

void write_comparison_csv(const Comparison& c, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << std::setprecision(17) << "t,quantity,p,gap\n";
    for (const GapRow& r : c.rows) os << r.t << ',' << r.quantity << ',' << r.p << ',' << r.gap << '\n';
}

nlohmann::json averaged_maps_to_json(const AveragedMaps& A) {
    nlohmann::json j;
    j["system"] = system_to_json(A.sys);
    j["constant_family"] = A.constant_family;
    j["center"] = std::vector<double>(A.center.data(), A.center.data() + A.center.size());
    j["nodes"] = A.nodes;
    std::vector<std::vector<double>> rows;
    for (int r = 0; r < A.values.rows(); ++r) {
        RVec v = A.values.row(r).transpose();
        rows.emplace_back(v.data(), v.data() + v.size());
    }
    j["values"] = rows;
    j["omega_identity"] = A.omega_identity;
    j["loo_error"] = A.loo_error;
    return j;
}

AveragedMaps averaged_maps_from_json(const nlohmann::json& j) {
    try {
        AveragedMaps A;
        A.sys = system_from_json(j.at("system"));
        A.constant_family = j.at("constant_family").get<bool>();
        auto c = j.at("center").get<std::vector<double>>();
        A.center = Eigen::Map<RVec>(c.data(), static_cast<Eigen::Index>(c.size()));
        A.nodes = j.at("nodes").get<std::vector<std::vector<double>>>();
        auto rows = j.at("values").get<std::vector<std::vector<double>>>();
        int total = 1;
        for (const auto& x : A.nodes) total *= static_cast<int>(x.size());
        if (static_cast<int>(rows.size()) != total || rows.empty()) throw ConfigError("averaged maps table has the wrong size");
        A.values.resize(total, static_cast<Eigen::Index>(rows[0].size()));
        for (int r = 0; r < total; ++r) {
            if (rows[r].size() != rows[0].size()) throw ConfigError("ragged averaged maps table");
            for (size_t q = 0; q < rows[r].size(); ++q) A.values(r, q) = rows[r][q];
        }
        A.omega_identity = j.value("omega_identity", 0.0);
        A.loo_error = j.value("loo_error", 0.0);
        return A;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("averaged maps: ") + e.what());
    }
}

}  // namespace mw
