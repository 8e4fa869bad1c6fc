#include "modwave/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>

#include <gsl/gsl_multimin.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "modwave/fft.hpp"
#include "modwave/floquet.hpp"
#include "modwave/linalg.hpp"

namespace mw {

SampledLine wave_on_line(const WaveProfile& wave, int n_cells, int pts_per_cell, int deriv) {
    if (n_cells < 1 || pts_per_cell < 1) throw ConfigError("empty grid");
    const int M = pts_per_cell, top = (M - 1) / 2;
    if (active_modes(wave) > top)
        throw ResolutionError("pts_per_cell=" + std::to_string(M) + " cannot carry the profile's " +
                              std::to_string(active_modes(wave)) + " active modes");
    SampledLine out(n_cells, M, wave.d);
    for (int c = 0; c < wave.d; ++c) {
        CVec hat = CVec::Zero(M);
        for (int j = -std::min(top, wave.n_modes); j <= std::min(top, wave.n_modes); ++j)
            hat(pos_mod(j, M)) = wave.coeff(j, c) * std::pow(kI * (kTwoPi * j), deriv);
        CVec cell = ifft(hat);
        for (int n = 0; n < n_cells; ++n)
            for (int i = 0; i < M; ++i) out.values(n * M + i, c) = cell(i).real();
    }
    return out;
}

namespace {

void check_times(const std::vector<double>& times) {
    if (times.empty()) throw ConfigError("no output times");
    for (size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i]) || times[i] < 0.0) throw ConfigError("output times must be finite and nonnegative");
        if (i > 0 && !(times[i] > times[i - 1])) throw ConfigError("output times must increase strictly");
    }
}

void record_norms(Trajectory& tr, const SampledLine& g) {
    tr.norms["L2"].push_back(lp_norm(g, 2.0));
    tr.norms["Linf"].push_back(lp_norm(g, INFINITY));
}

}  // namespace

Trajectory evolve_linear(const SystemSpec& sys, const WaveProfile& wave, const SampledLine& W0,
                         const std::vector<double>& times, const LinearOptions& opt) {
    check_times(times);
    const int n = W0.n_cells, M = W0.pts_per_cell, d = sys.d;
    if (M % 2 == 0) throw ConfigError("pts_per_cell must be odd for fiber propagation");
    if (W0.dim() != d) throw ConfigError("initial state has the wrong number of components");
    const int n_f = (M - 1) / 2;
    FiberPencil P = fiber_pencil(sys, wave, n_f);
    BlochField G = forward_bloch(W0);

    double total = 0.0, tail = 0.0;
    for (const CVec& f : G.fibers)
        for (int c = 0; c < d; ++c)
            for (int idx = 0; idx < M; ++idx) {
                double e = std::norm(f(c * M + idx));
                total += e;
                if (3 * std::abs(mode_of(idx, M)) > 2 * n_f) tail += e;
            }
    if (total > 0.0 && std::sqrt(tail / total) > opt.tail_tol)
        throw ResolutionError("initial data has relative tail " + std::to_string(std::sqrt(tail / total)) +
                              " in the top third of the fiber modes; increase pts_per_cell");

    const int nt = static_cast<int>(times.size());
    std::vector<BlochField> out(nt, G);
    parallel_for(n, [&](int m) {
        CMat A = P.at(G.xi[m]);
        const CVec& w = G.fibers[m];
        bool done = false;
        if (w.squaredNorm() == 0.0) {
            for (int q = 0; q < nt; ++q) out[q].fibers[m] = w;
            return;
        }
        EigResult e = eig_general(A, true);
        Eigen::PartialPivLU<CMat> lu(e.vectors);
        CMat Vinv = lu.inverse();
        const double cond = one_norm(e.vectors) * one_norm(Vinv);
        if (std::isfinite(cond) && cond < opt.cond_max) {
            CVec a = Vinv * w;
            for (int q = 0; q < nt; ++q) {
                CVec b(a.size());
                for (int i = 0; i < a.size(); ++i) b(i) = std::exp(e.values(i) * times[q]) * a(i);
                out[q].fibers[m] = e.vectors * b;
            }
            done = true;
        }
        if (!done)
            for (int q = 0; q < nt; ++q) {
                CMat At = A * cd(times[q]);
                out[q].fibers[m] = At.exp() * w;
            }
    });
    Trajectory tr;
    tr.times = times;
    for (int q = 0; q < nt; ++q) {
        tr.states.push_back(inverse_bloch(out[q]));
        record_norms(tr, tr.states.back());
    }
    return tr;
}

double crude_growth_rate(const WaveProfile& wave) {
    const int n = std::max(4096, 8 * wave.n_modes + 1);
    RMat U1 = wave.derivative_samples(n, 1);
    double mx = 0.0;
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < wave.d; ++c) mx = std::max(mx, -U1(i, c));
    return 0.5 * wave.k * mx;
}

namespace {

// Whole-domain pseudo-spectral operators for the nonlinear stepper.
struct ParabolicStepper {
    const SystemSpec& sys;
    const WaveProfile& wave;
    int n, M, L, d;
    std::vector<double> kappa;

    ParabolicStepper(const SystemSpec& s, const WaveProfile& w, int n_cells, int pts)
        : sys(s), wave(w), n(n_cells), M(pts), L(n_cells * pts), d(s.d), kappa(L) {
        for (int q = 0; q < L; ++q) {
            int qq = q <= L / 2 ? q : q - L;
            kappa[q] = kTwoPi * qq / n;
            if (L % 2 == 0 && q == L / 2) kappa[q] = 0.0;
        }
    }

    // d x d symbol of the implicit part at Fourier slot q
    CMat symbol(int q) const {
        const double kq = kappa[q];
        return -kI * kq * wave.omega * CMat::Identity(d, d) - wave.k * wave.k * kq * kq * sys.D.cast<cd>();
    }

    // Fourier coefficients (columns per component) of -k d/dx f(U)
    CMat explicit_hat(const CMat& Uhat) const {
        CMat U(L, d);
        for (int c = 0; c < d; ++c) U.col(c) = ifft(Uhat.col(c)) / static_cast<double>(L);
        CMat F(L, d);
        for (int i = 0; i < L; ++i) {
            RVec u = U.row(i).real().transpose();
            F.row(i) = sys.flux.eval(u).transpose().cast<cd>();
        }
        CMat out(L, d);
        for (int c = 0; c < d; ++c) {
            CVec h = fft(F.col(c));
            for (int q = 0; q < L; ++q) out(q, c) = -wave.k * kI * kappa[q] * h(q);
        }
        return out;
    }

    CMat step(const CMat& Uhat, double h) const {
        const double g = 1.0 - 1.0 / std::sqrt(2.0), delta = 1.0 - 1.0 / (2.0 * g);
        CMat N0 = explicit_hat(Uhat);
        CMat U1(L, d), LU1(L, d);
        std::vector<Eigen::PartialPivLU<CMat>> inv(L);
        for (int q = 0; q < L; ++q) {
            CMat S = symbol(q);
            inv[q] = Eigen::PartialPivLU<CMat>(CMat::Identity(d, d) - g * h * S);
            CVec rhs = (Uhat.row(q) + g * h * N0.row(q)).transpose();
            CVec u1 = inv[q].solve(rhs);
            U1.row(q) = u1.transpose();
            LU1.row(q) = (S * u1).transpose();
        }
        CMat N1 = explicit_hat(U1);
        CMat out(L, d);
        for (int q = 0; q < L; ++q) {
            CVec rhs = (Uhat.row(q) + h * (delta * N0.row(q) + (1.0 - delta) * N1.row(q)) + h * (1.0 - g) * LU1.row(q)).transpose();
            out.row(q) = inv[q].solve(rhs).transpose();
        }
        return out;
    }

    CMat to_hat(const SampledLine& g) const {
        CMat h(L, d);
        for (int c = 0; c < d; ++c) h.col(c) = fft(g.values.col(c));
        return h;
    }
    SampledLine from_hat(const CMat& h) const {
        SampledLine g(n, M, d);
        for (int c = 0; c < d; ++c) g.values.col(c) = (ifft(h.col(c)) / static_cast<double>(L)).real().cast<cd>();
        return g;
    }
};

double max_abs(const CMat& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

Trajectory evolve_parabolic_nonlinear(const SystemSpec& sys, const WaveProfile& wave, const SampledLine& U0,
                                      const std::vector<double>& times, const NonlinearOptions& opt) {
    if (sys.kind != SystemKind::Parabolic) throw ConfigError("nonlinear evolution needs a parabolic system");
    validate(sys);
    check_times(times);
    if (!(opt.dt > 0.0)) throw ConfigError("time step must be positive");
    if (U0.dim() != sys.d) throw ConfigError("initial state has the wrong number of components");
    const double imag = U0.values.imag().cwiseAbs().maxCoeff();
    if (imag > 1e-12 * (1.0 + max_abs(U0.values))) throw ConfigError("nonlinear evolution needs real data");
    ParabolicStepper st(sys, wave, U0.n_cells, U0.pts_per_cell);
    SampledLine Ubar = wave_on_line(wave, U0.n_cells, U0.pts_per_cell);
    const double ubar_max = max_abs(Ubar.values);

    Trajectory tr;
    CMat h = st.to_hat(U0);
    double t = 0.0, dt = opt.dt;
    int halvings = 0;
    auto push = [&](double time) {
        SampledLine s = st.from_hat(h);
        SampledLine pert = s;
        pert.values -= Ubar.values;
        tr.times.push_back(time);
        record_norms(tr, pert);
        for (int c = 0; c < sys.d; ++c)
            tr.norms["mass_" + std::to_string(c)].push_back(s.values.col(c).real().sum() / s.pts_per_cell);
        tr.states.push_back(std::move(s));
    };
    for (double target : times) {
        while (t < target - 1e-14 * std::max(1.0, target)) {
            const double hstep = std::min(dt, target - t);
            CMat big = st.step(h, hstep);
            CMat small = st.step(st.step(h, 0.5 * hstep), 0.5 * hstep);
            const double scale = std::max(1.0, max_abs(small) / st.L);
            const double err = max_abs(big - small) / st.L;
            if (!std::isfinite(err) || err > opt.step_tol * scale) {
                if (halvings < opt.max_halvings && std::isfinite(err)) {
                    dt *= 0.5;
                    ++halvings;
                    continue;
                }
            }
            h = small;
            t += hstep;
            SampledLine s = st.from_hat(h);
            const double dev = max_abs(s.values - Ubar.values);
            if (!std::isfinite(dev) || dev > opt.blowup_factor * (1.0 + ubar_max)) {
                tr.truncated = true;
                tr.note = "blow-up at t=" + std::to_string(t) + ": max deviation " + std::to_string(dev);
                return tr;
            }
        }
        push(target);
    }
    if (halvings > 0) tr.note = "time step halved " + std::to_string(halvings) + " times to dt=" + std::to_string(dt);
    return tr;
}

NormSpec norm_from_string(const std::string& name) {
    if (name == "L1") return {NormKind::L1, 0.0};
    if (name == "L2") return {NormKind::L2, 0.0};
    if (name == "Linf") return {NormKind::Linf, 0.0};
    if (name.size() > 1 && name[0] == 'H') {
        try {
            size_t pos = 0;
            double s = std::stod(name.substr(1), &pos);
            if (pos + 1 == name.size() && s >= 0.0) return {NormKind::Hs, s};
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("unknown norm '" + name + "' (L1, L2, Linf or H<s>)");
}

std::string to_string(const NormSpec& n) {
    switch (n.kind) {
        case NormKind::L1: return "L1";
        case NormKind::L2: return "L2";
        case NormKind::Linf: return "Linf";
        default: {
            std::ostringstream os;
            os << "H" << n.s;
            return os.str();
        }
    }
}

double line_norm(const SampledLine& g, const NormSpec& X) {
    switch (X.kind) {
        case NormKind::L1: return lp_norm(g, 1.0);
        case NormKind::L2: return lp_norm(g, 2.0);
        case NormKind::Linf: return lp_norm(g, INFINITY);
        default: break;
    }
    const int L = g.size(), n = g.n_cells;
    double acc = 0.0;
    for (int c = 0; c < g.dim(); ++c) {
        CVec h = fft(g.values.col(c));
        for (int q = 0; q < L; ++q) {
            int qq = q <= L / 2 ? q : q - L;
            double kq = kTwoPi * qq / n;
            acc += std::pow(1.0 + kq * kq, X.s) * std::norm(h(q));
        }
    }
    return std::sqrt(acc / (static_cast<double>(g.pts_per_cell) * L));
}

namespace {

// Per-fiber data for the quadratic (L2 / H^s) space-modulated problem.
struct FiberProblem {
    std::vector<int> cut;        // fiber indices with |xi| <= xi_cut
    std::vector<cd> a;           // <u, W_m>_w
    std::vector<double> u2;      // ||u||_w^2
    std::vector<double> pen;     // weight of |c|^2 in ||psi_x||^2
    std::vector<double> e;       // ||W_m||_w^2 for all fibers
    double C = 0.0;

    std::vector<cd> coeffs(double mu) const {
        std::vector<cd> c(cut.size());
        for (size_t i = 0; i < cut.size(); ++i) c[i] = u2[i] > 0.0 ? a[i] / (u2[i] + mu * pen[i]) : 0.0;
        return c;
    }
    // (||V||, ||psi_x||) in the weighted fiber norm
    std::pair<double, double> norms(double mu) const {
        double v = 0.0, p = 0.0;
        for (double x : e) v += x;
        std::vector<cd> c = coeffs(mu);
        for (size_t i = 0; i < cut.size(); ++i) {
            v += -2.0 * std::real(std::conj(c[i]) * a[i]) + std::norm(c[i]) * u2[i];
            p += pen[i] * std::norm(c[i]);
        }
        return {std::sqrt(std::max(0.0, C * v)), std::sqrt(std::max(0.0, C * p))};
    }
};

CVec wave_derivative_fiber(const WaveProfile& wave, int M) {
    const int top = (M - 1) / 2;
    CVec u = CVec::Zero(wave.d * M);
    for (int c = 0; c < wave.d; ++c)
        for (int j = -top; j <= top; ++j)
            u(c * M + index_of_mode(j, M)) = kI * (kTwoPi * j) * wave.coeff(j, c);
    return u;
}

FiberProblem build_problem(const BlochField& G, const CVec& u, double xi_cut, double s) {
    FiberProblem fp;
    const int n = G.n_cells, M = G.pts_per_cell;
    fp.C = kTwoPi * kTwoPi / n;
    fp.e.resize(n);
    for (int m = 0; m < n; ++m) {
        const double xi = G.xi[m];
        RVec w(u.size());
        for (int c = 0; c < G.d; ++c)
            for (int idx = 0; idx < M; ++idx) {
                double kq = xi + kTwoPi * mode_of(idx, M);
                w(c * M + idx) = s == 0.0 ? 1.0 : std::pow(1.0 + kq * kq, s);
            }
        const CVec& f = G.fibers[m];
        fp.e[m] = (w.array() * f.array().abs2()).sum();
        if (std::abs(xi) <= xi_cut + 1e-14) {
            fp.cut.push_back(m);
            fp.a.push_back((u.conjugate().array() * w.array().cast<cd>() * f.array()).sum());
            fp.u2.push_back((w.array() * u.array().abs2()).sum());
            fp.pen.push_back(xi * xi * (s == 0.0 ? 1.0 : std::pow(1.0 + xi * xi, s)));
        }
    }
    return fp;
}

// minimise ||V|| + ||psi_x|| along mu by a log-scan followed by golden section
double best_mu(const FiberProblem& fp) {
    auto J = [&](double lm) {
        auto [v, p] = fp.norms(std::exp(lm));
        return v + p;
    };
    const double lo = std::log(1e-12), hi = std::log(1e12);
    const int ns = 97;
    int bi = 0;
    double bv = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ns; ++i) {
        double v = J(lo + (hi - lo) * i / (ns - 1));
        if (v < bv) {
            bv = v;
            bi = i;
        }
    }
    double a = lo + (hi - lo) * std::max(0, bi - 1) / (ns - 1), b = lo + (hi - lo) * std::min(ns - 1, bi + 1) / (ns - 1);
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - r * (b - a), x2 = a + r * (b - a), f1 = J(x1), f2 = J(x2);
    for (int it = 0; it < 100 && b - a > 1e-10; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = J(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = J(x2);
        }
    }
    return std::exp(0.5 * (a + b));
}

struct PsiBasis {
    std::vector<int> fibers;
    std::vector<double> xi;
    int n = 0, M = 0;
};

// Line samples of psi from fiber coefficients c_m (mode 0 of fiber m).
SampledLine psi_from_coeffs(const PsiBasis& B, const std::vector<cd>& c, bool derivative) {
    BlochField P = zero_field(B.n, B.M, 1);
    const int idx0 = index_of_mode(0, B.M);
    for (size_t i = 0; i < B.fibers.size(); ++i)
        P.fibers[B.fibers[i]](idx0) = derivative ? kI * B.xi[i] * c[i] : c[i];
    return inverse_bloch(P);
}

ModDecomposition decompose(const SampledLine& W, const SampledLine& Ux, const PsiBasis& B, const std::vector<cd>& c,
                           const NormSpec& X, int zero_pos) {
    ModDecomposition md;
    SampledLine psi = psi_from_coeffs(B, c, false);
    md.psi_x = psi_from_coeffs(B, c, true);
    md.shift = zero_pos >= 0 ? std::real(c[zero_pos]) * kTwoPi / B.n : 0.0;
    md.v_part = W;
    for (int cc = 0; cc < W.dim(); ++cc) md.v_part.values.col(cc) -= Ux.values.col(cc).cwiseProduct(psi.values.col(0));
    md.psi = psi;
    if (zero_pos >= 0) md.psi.values.array() -= c[zero_pos] * (kTwoPi / B.n);
    md.objective = line_norm(md.v_part, X) + line_norm(md.psi_x, X);
    return md;
}

struct BfgsData {
    const SampledLine* W;
    const SampledLine* Ux;
    const PsiBasis* B;
    CMat E;   // L x K basis e^{i xi x} * 2pi/N
    double p;  // smoothing exponent (L^p) or delta (L1)
    bool l1;
    int L, d, M;
};

// smoothed norm and its complex gradient field
double smooth_norm(const CMat& g, const BfgsData& D, CMat* grad) {
    const int L = static_cast<int>(g.rows());
    RVec s = g.rowwise().norm();
    if (D.l1) {
        const double delta = D.p;
        double v = 0.0;
        for (int i = 0; i < L; ++i) v += std::sqrt(s(i) * s(i) + delta * delta) - delta;
        v /= D.M;
        if (grad) {
            grad->resize(g.rows(), g.cols());
            for (int i = 0; i < L; ++i) grad->row(i) = g.row(i) / (D.M * std::sqrt(s(i) * s(i) + delta * delta));
        }
        return v;
    }
    const double p = D.p, smax = s.maxCoeff();
    if (smax == 0.0) {
        if (grad) *grad = CMat::Zero(g.rows(), g.cols());
        return 0.0;
    }
    double acc = 0.0;
    for (int i = 0; i < L; ++i) acc += std::pow(s(i) / smax, p);
    const double v = smax * std::pow(acc / D.M, 1.0 / p);
    if (grad) {
        grad->resize(g.rows(), g.cols());
        // d v / d g_i = (1/M) v^{1-p} s_i^{p-2} g_i
        for (int i = 0; i < L; ++i) {
            double f = s(i) > 0.0 ? std::pow(s(i) / smax, p - 2.0) * std::pow(smax / v, p - 1.0) / (D.M * smax) : 0.0;
            grad->row(i) = g.row(i) * (f * smax);
        }
    }
    return v;
}

double bfgs_eval(const gsl_vector* x, void* params, gsl_vector* g) {
    const BfgsData& D = *static_cast<BfgsData*>(params);
    const int K = static_cast<int>(D.E.cols());
    CVec c(K);
    for (int i = 0; i < K; ++i) c(i) = cd(gsl_vector_get(x, 2 * i), gsl_vector_get(x, 2 * i + 1));
    CVec psi = D.E * c;
    CVec xis(K);
    for (int i = 0; i < K; ++i) xis(i) = kI * D.B->xi[i];
    CVec psix = D.E * (xis.array() * c.array()).matrix();
    CMat V = D.W->values;
    for (int cc = 0; cc < D.d; ++cc) V.col(cc) -= D.Ux->values.col(cc).cwiseProduct(psi);
    CMat gv, gp;
    double val = smooth_norm(V, D, g ? &gv : nullptr) + smooth_norm(psix, D, g ? &gp : nullptr);
    if (g) {
        // dJ = Re sum conj(G) dg
        CVec t = CVec::Zero(D.L);
        for (int cc = 0; cc < D.d; ++cc) t -= gv.col(cc).conjugate().cwiseProduct(D.Ux->values.col(cc));
        CVec S = D.E.transpose() * t + (xis.array() * (D.E.transpose() * gp.col(0).conjugate()).array()).matrix();
        for (int i = 0; i < K; ++i) {
            gsl_vector_set(g, 2 * i, S(i).real());
            gsl_vector_set(g, 2 * i + 1, -S(i).imag());
        }
    }
    return val;
}

double bfgs_f(const gsl_vector* x, void* p) { return bfgs_eval(x, p, nullptr); }
void bfgs_df(const gsl_vector* x, void* p, gsl_vector* g) { bfgs_eval(x, p, g); }
void bfgs_fdf(const gsl_vector* x, void* p, double* f, gsl_vector* g) { *f = bfgs_eval(x, p, g); }

std::vector<cd> refine_bfgs(BfgsData& D, std::vector<cd> c, const std::vector<double>& stages, int max_iter, double tol) {
    const int K = static_cast<int>(c.size());
    gsl_multimin_function_fdf fn{bfgs_f, bfgs_df, bfgs_fdf, static_cast<size_t>(2 * K), &D};
    gsl_vector* x = gsl_vector_alloc(2 * K);
    gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, 2 * K);
    for (double st : stages) {
        D.p = st;
        for (int i = 0; i < K; ++i) {
            gsl_vector_set(x, 2 * i, c[i].real());
            gsl_vector_set(x, 2 * i + 1, c[i].imag());
        }
        double scale = 0.0;
        for (const cd& z : c) scale = std::max(scale, std::abs(z));
        gsl_multimin_fdfminimizer_set(s, &fn, x, 0.1 * std::max(scale, 1e-3), 0.1);
        for (int it = 0; it < max_iter; ++it) {
            if (gsl_multimin_fdfminimizer_iterate(s)) break;
            if (gsl_multimin_test_gradient(s->gradient, tol) == GSL_SUCCESS) break;
        }
        for (int i = 0; i < K; ++i) c[i] = cd(gsl_vector_get(s->x, 2 * i), gsl_vector_get(s->x, 2 * i + 1));
    }
    gsl_multimin_fdfminimizer_free(s);
    gsl_vector_free(x);
    return c;
}

SmNormResult sm_norm_impl(const SampledLine& W, const WaveProfile& wave, const NormSpec& X, const SmNormOptions& opt,
                          bool with_half) {
    if (!(opt.xi_cut >= 0.0) || opt.xi_cut > kPi) throw ConfigError("cutoff must lie in [0, pi]");
    const int n = W.n_cells, M = W.pts_per_cell;
    if (M % 2 == 0) throw ConfigError("pts_per_cell must be odd");
    if (W.dim() != wave.d) throw ConfigError("state and wave dimension differ");
    BlochField G = forward_bloch(W);
    CVec u = wave_derivative_fiber(wave, M);
    SampledLine Ux = wave_on_line(wave, n, M, 1);
    const double s = X.kind == NormKind::Hs ? X.s : 0.0;
    FiberProblem fp = build_problem(G, u, opt.xi_cut, s);
    PsiBasis B{fp.cut, {}, n, M};
    int zero_pos = -1;
    for (size_t i = 0; i < fp.cut.size(); ++i) {
        B.xi.push_back(G.xi[fp.cut[i]]);
        if (G.xi[fp.cut[i]] == 0.0) zero_pos = static_cast<int>(i);
    }
    const double mu = best_mu(fp);
    std::vector<cd> c = fp.coeffs(mu);

    SmNormResult res;
    res.trivial = line_norm(W, X);
    ModDecomposition quad = decompose(W, Ux, B, c, X, zero_pos);
    res.l2_projection = quad.objective;
    ModDecomposition best = quad;
    if (X.kind == NormKind::L1 || X.kind == NormKind::Linf) {
        BfgsData D{&W, &Ux, &B, CMat(n * M, B.fibers.size()), 0.0, X.kind == NormKind::L1, n * M, W.dim(), M};
        for (int i = 0; i < n * M; ++i)
            for (size_t q = 0; q < B.fibers.size(); ++q) D.E(i, q) = (kTwoPi / n) * std::exp(kI * (B.xi[q] * W.x(i)));
        std::vector<double> stages;
        if (X.kind == NormKind::L1) {
            double sc = std::max(res.trivial, 1e-300);
            stages = {1e-2 * sc, 1e-4 * sc, 1e-6 * sc};
        } else {
            stages = {8.0, 32.0, 128.0};
        }
        std::vector<cd> cb = refine_bfgs(D, c, stages, opt.max_iter, opt.tol * std::max(res.trivial, 1e-300));
        ModDecomposition md = decompose(W, Ux, B, cb, X, zero_pos);
        if (md.objective < best.objective) best = md;
    }
    // psi = 0 apart from the free uniform translation
    std::vector<cd> c0(c.size(), 0.0);
    if (zero_pos >= 0) c0[zero_pos] = c[zero_pos];
    ModDecomposition shift_only = decompose(W, Ux, B, c0, X, zero_pos);
    if (shift_only.objective < best.objective) best = shift_only;
    res.value = std::min(best.objective, res.trivial);
    if (res.trivial < best.objective) {
        std::vector<cd> z(c.size(), 0.0);
        best = decompose(W, Ux, B, z, X, zero_pos);
    }
    res.decomposition = best;
    if (with_half) {
        SmNormOptions h = opt;
        h.xi_cut = 0.5 * opt.xi_cut;
        res.value_half_cut = sm_norm_impl(W, wave, X, h, false).value;
    }
    return res;
}

}  // namespace

SmNormResult compute_sm_norm(const SampledLine& W, const WaveProfile& wave, const NormSpec& X, const SmNormOptions& opt) {
    return sm_norm_impl(W, wave, X, opt, true);
}

CMat evaluate_periodic(const SampledLine& U, const RVec& points, int deriv) {
    const int L = U.size(), n = U.n_cells, d = U.dim();
    const int qmin = -(L / 2);
    CMat coef(L, d);
    for (int c = 0; c < d; ++c) {
        CVec h = fft(U.values.col(c)) / static_cast<double>(L);
        for (int p = 0; p < L; ++p) {
            int q = qmin + p;
            cd v = h(pos_mod(q, L));
            // split the Nyquist mode so real data give real values
            if (L % 2 == 0 && q == qmin) v *= 0.5;
            coef(p, c) = v * std::pow(kI * (kTwoPi * q / n), deriv);
        }
    }
    CVec nyq(d);
    for (int c = 0; c < d; ++c) nyq(c) = (L % 2 == 0) ? coef(0, c) * std::pow(-1.0, deriv) : 0.0;
    CMat out(points.size(), d);
    parallel_for(static_cast<int>(points.size()), [&](int i) {
        const double y = points(i);
        const cd z = std::exp(kI * (kTwoPi * y / n));
        const cd zmin = std::exp(kI * (kTwoPi * qmin * y / n));
        for (int c = 0; c < d; ++c) {
            cd acc = 0.0;
            for (int p = L - 1; p >= 0; --p) acc = acc * z + coef(p, c);
            cd v = acc * zmin;
            if (L % 2 == 0) v += nyq(c) * std::exp(kI * (kTwoPi * (-qmin) * y / n));
            out(i, c) = v;
        }
    });
    return out;
}

double sm_distance_objective(const SampledLine& U, const WaveProfile& wave, const SampledLine& psi,
                             const SampledLine& psi_x, const NormSpec& X) {
    const int L = U.size();
    RVec pts(L);
    for (int i = 0; i < L; ++i) pts(i) = U.x(i) - psi.values(i, 0).real();
    SampledLine r = U;
    r.values = evaluate_periodic(U, pts) - wave_on_line(wave, U.n_cells, U.pts_per_cell).values;
    return line_norm(r, X) + line_norm(psi_x, X);
}

SmDistanceResult compute_sm_distance(const SampledLine& U, const WaveProfile& wave, const NormSpec& X,
                                     const SmDistanceOptions& opt) {
    if (!(opt.xi_cut >= 0.0) || opt.xi_cut > kPi) throw ConfigError("cutoff must lie in [0, pi]");
    if (U.dim() != wave.d) throw ConfigError("state and wave dimension differ");
    const int n = U.n_cells, M = U.pts_per_cell, L = U.size(), d = U.dim();
    SampledLine Ubar = wave_on_line(wave, n, M);
    SmDistanceResult res;
    {
        SampledLine diff = U;
        diff.values -= Ubar.values;
        res.unmodulated = line_norm(diff, X);
    }
    // real basis: 1, cos(xi x), sin(xi x) for 0 < xi <= xi_cut on the grid
    std::vector<double> freqs;
    for (int m = 1; m < n; ++m) {
        double xi = kTwoPi * m / n;
        if (xi <= opt.xi_cut + 1e-14 && xi < kPi) freqs.push_back(xi);
    }
    const int P = 1 + 2 * static_cast<int>(freqs.size());
    RMat phi(L, P), dphi(L, P);
    for (int i = 0; i < L; ++i) {
        const double x = U.x(i);
        phi(i, 0) = 1.0;
        dphi(i, 0) = 0.0;
        for (size_t q = 0; q < freqs.size(); ++q) {
            phi(i, 1 + 2 * q) = std::cos(freqs[q] * x);
            phi(i, 2 + 2 * q) = std::sin(freqs[q] * x);
            dphi(i, 1 + 2 * q) = -freqs[q] * std::sin(freqs[q] * x);
            dphi(i, 2 + 2 * q) = freqs[q] * std::cos(freqs[q] * x);
        }
    }
    const double w = 1.0 / std::sqrt(static_cast<double>(M));
    struct Eval {
        CMat r, Up;
        RVec psi, psix;
        double F = 0.0, J = 0.0;
    };
    auto evaluate = [&](const RVec& th, bool want_deriv) {
        Eval e;
        e.psi = phi * th;
        e.psix = dphi * th;
        RVec pts(L);
        for (int i = 0; i < L; ++i) pts(i) = U.x(i) - e.psi(i);
        e.r = evaluate_periodic(U, pts) - Ubar.values;
        if (want_deriv) e.Up = evaluate_periodic(U, pts, 1);
        e.F = w * w * (e.r.squaredNorm() + e.psix.squaredNorm());
        SampledLine rl = U, pl(n, M, 1);
        rl.values = e.r;
        pl.values.col(0) = e.psix.cast<cd>();
        e.J = line_norm(rl, X) + line_norm(pl, X);
        return e;
    };
    RVec th = RVec::Zero(P);
    Eval cur = evaluate(th, true);
    RVec best_th = th;
    double best_J = cur.J;
    double lambda = 1e-6;
    bool converged = false;
    for (int it = 0; it < opt.max_iter; ++it) {
        // real least squares: rows Re r, Im r per component, then psi_x
        RMat Jm(2 * L * d + L, P);
        RVec res_v(2 * L * d + L);
        for (int c = 0; c < d; ++c)
            for (int i = 0; i < L; ++i) {
                for (int p = 0; p < P; ++p) {
                    cd v = -cur.Up(i, c) * phi(i, p);
                    Jm(2 * (c * L + i), p) = w * v.real();
                    Jm(2 * (c * L + i) + 1, p) = w * v.imag();
                }
                res_v(2 * (c * L + i)) = w * cur.r(i, c).real();
                res_v(2 * (c * L + i) + 1) = w * cur.r(i, c).imag();
            }
        Jm.bottomRows(L) = w * dphi;
        res_v.tail(L) = w * cur.psix;
        RMat JtJ = Jm.transpose() * Jm;
        RVec g = Jm.transpose() * res_v;
        bool accepted = false;
        for (int tries = 0; tries < 12; ++tries) {
            RMat A = JtJ;
            A.diagonal().array() += lambda * (1.0 + JtJ.diagonal().array());
            RVec step = -A.ldlt().solve(g);
            RVec trial = th + step;
            if ((dphi * trial).cwiseAbs().maxCoeff() > 0.5) {
                lambda *= 10.0;
                continue;
            }
            Eval e = evaluate(trial, true);
            if (e.F < cur.F) {
                const double dec = cur.F - e.F;
                th = trial;
                cur = e;
                lambda = std::max(1e-12, lambda * 0.1);
                accepted = true;
                if (cur.J < best_J) {
                    best_J = cur.J;
                    best_th = th;
                }
                if (dec <= opt.tol * std::max(cur.F, 1e-300) || cur.F < 1e-30) converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            converged = converged || g.norm() < 1e-12;
            break;
        }
        if (converged) break;
    }
    Eval fin = evaluate(best_th, false);
    ModDecomposition md;
    md.v_part = U;
    md.v_part.values = fin.r;
    md.shift = best_th(0);
    md.psi = SampledLine(n, M, 1);
    md.psi.values.col(0) = (fin.psi.array() - best_th(0)).matrix().cast<cd>();
    md.psi_x = SampledLine(n, M, 1);
    md.psi_x.values.col(0) = fin.psix.cast<cd>();
    md.objective = fin.J;
    md.converged = converged;
    res.decomposition = md;
    res.value = std::min(fin.J, res.unmodulated);
    return res;
}

DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& values, double t0, double t1, double drift_tol) {
    if (t.size() != values.size()) throw ConfigError("time and value series differ in length");
    if (!(t0 > 0.0) || !(t1 > t0)) throw ConfigError("fit window must satisfy 0 < t0 < t1");
    std::vector<double> lx, ly;
    for (size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t0 * (1 - 1e-12) || t[i] > t1 * (1 + 1e-12)) continue;
        if (!(values[i] > 0.0)) throw ConfigError("decay fit needs positive values");
        lx.push_back(std::log(t[i]));
        ly.push_back(std::log(values[i]));
    }
    if (lx.size() < 10) throw ConfigError("decay fit needs at least 10 samples in the window");
    auto line = [](const std::vector<double>& x, const std::vector<double>& y, size_t a, size_t b, double* icpt) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double m = static_cast<double>(b - a);
        for (size_t i = a; i < b; ++i) {
            sx += x[i];
            sy += y[i];
            sxx += x[i] * x[i];
            sxy += x[i] * y[i];
        }
        double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        if (icpt) *icpt = (sy - slope * sx) / m;
        return slope;
    };
    DecayFit f;
    f.t0 = t0;
    f.t1 = t1;
    f.samples = static_cast<int>(lx.size());
    double b;
    f.exponent = line(lx, ly, 0, lx.size(), &b);
    f.prefactor = std::exp(b);
    double rr = 0.0;
    for (size_t i = 0; i < lx.size(); ++i) rr += std::pow(ly[i] - (b + f.exponent * lx[i]), 2);
    f.residual = std::sqrt(rr / lx.size());
    const double mid = 0.5 * (std::log(t0) + std::log(t1));
    size_t split = 0;
    while (split < lx.size() && lx[split] <= mid) ++split;
    // the midpoint sample belongs to both halves
    size_t a_end = split, b_start = split > 0 && std::abs(lx[split - 1] - mid) < 1e-12 ? split - 1 : split;
    if (a_end >= 2 && lx.size() - b_start >= 2) {
        f.exponent_first = line(lx, ly, 0, a_end, nullptr);
        f.exponent_second = line(lx, ly, b_start, lx.size(), nullptr);
        f.drift = std::abs(f.exponent_first - f.exponent_second);
    }
    f.power_law = f.drift < drift_tol;
    return f;
}

std::vector<double> geometric_times(double t0, double t1, int count) {
    if (!(t0 > 0.0) || !(t1 > t0) || count < 2) throw ConfigError("geometric times need 0 < t0 < t1 and count >= 2");
    std::vector<double> t(count);
    for (int i = 0; i < count; ++i) t[i] = t0 * std::pow(t1 / t0, static_cast<double>(i) / (count - 1));
    t.back() = t1;
    return t;
}

void write_norms_csv(const Trajectory& tr, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << std::setprecision(17) << "t,norm_name,value\n";
    for (const auto& [name, vals] : tr.norms)
        for (size_t i = 0; i < vals.size() && i < tr.times.size(); ++i) os << tr.times[i] << ',' << name << ',' << vals[i] << '\n';
}

void write_state_binary(const SampledLine& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path);
    const std::int64_t hdr[3] = {g.n_cells, g.pts_per_cell, g.dim()};
    os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    for (int i = 0; i < g.size(); ++i)
        for (int c = 0; c < g.dim(); ++c) {
            const double v[2] = {g.values(i, c).real(), g.values(i, c).imag()};
            os.write(reinterpret_cast<const char*>(v), sizeof(v));
        }
}

SampledLine read_state_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path);
    std::int64_t hdr[3];
    is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!is || hdr[0] < 1 || hdr[1] < 1 || hdr[2] < 1) throw ConfigError("bad state header in " + path);
    SampledLine g(static_cast<int>(hdr[0]), static_cast<int>(hdr[1]), static_cast<int>(hdr[2]));
    for (int i = 0; i < g.size(); ++i)
        for (int c = 0; c < g.dim(); ++c) {
            double v[2];
            is.read(reinterpret_cast<char*>(v), sizeof(v));
            if (!is) throw ConfigError("truncated state file " + path);
            g.values(i, c) = cd(v[0], v[1]);
        }
    return g;
}

}  // namespace mw
