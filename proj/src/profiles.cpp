#include "modwave/profiles.hpp"

#include <cmath>
#include <fstream>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_ellint.h>
#include <gsl/gsl_sf_elljac.h>

#include "modwave/fft.hpp"

namespace mw {

cd WaveProfile::coeff(int j, int c) const {
    if (std::abs(j) > n_modes) return 0.0;
    return coeffs(j + n_modes, c);
}

RMat WaveProfile::derivative_samples(int n, int order) const {
    if (n < 2 * n_modes + 1) throw ConfigError("too few sample points for the profile");
    RMat out(n, d);
    for (int c = 0; c < d; ++c) {
        CVec hat = CVec::Zero(n);
        for (int j = -n_modes; j <= n_modes; ++j)
            hat(pos_mod(j, n)) = coeffs(j + n_modes, c) * std::pow(kI * (kTwoPi * j), order);
        out.col(c) = ifft(hat).real();
    }
    return out;
}

RMat WaveProfile::samples(int n) const { return derivative_samples(n, 0); }

RVec WaveProfile::eval_derivative(double y, int order) const {
    RVec v(d);
    for (int c = 0; c < d; ++c) {
        cd s = 0.0;
        for (int j = -n_modes; j <= n_modes; ++j)
            s += coeffs(j + n_modes, c) * std::pow(kI * (kTwoPi * j), order) * std::exp(kI * (kTwoPi * j * y));
        v(c) = s.real();
    }
    return v;
}

RVec WaveProfile::eval(double y) const { return eval_derivative(y, 0); }

RVec WaveProfile::family_coords() const {
    RVec p(params.size() + 1);
    p.head(params.size()) = params;
    p(params.size()) = k;
    return p;
}

double WaveProfile::amplitude() const {
    double a = 0.0;
    for (int c = 0; c < d; ++c)
        for (int j = -n_modes; j <= n_modes; ++j)
            if (j != 0) a = std::max(a, std::abs(coeffs(j + n_modes, c)));
    return a;
}

namespace {

struct Elliptic {
    double K, E;
};

Elliptic complete_integrals(double m) {
    double kk = std::sqrt(m);
    return {gsl_sf_ellint_Kcomp(kk, GSL_PREC_DOUBLE), gsl_sf_ellint_Ecomp(kk, GSL_PREC_DOUBLE)};
}

CMat coeffs_from_samples(const RMat& s, int n_modes) {
    const int n = static_cast<int>(s.rows());
    CMat c(2 * n_modes + 1, s.cols());
    for (int col = 0; col < s.cols(); ++col) {
        CVec hat = fft(s.col(col).cast<cd>()) / static_cast<double>(n);
        for (int j = -n_modes; j <= n_modes; ++j) {
            cd v = hat(pos_mod(j, n));
            if (j != 0) v = 0.5 * (v + std::conj(hat(pos_mod(-j, n))));
            c(j + n_modes, col) = v;
        }
        c(n_modes, col) = c(n_modes, col).real();
    }
    return c;
}

void fill_kdv_invariants(WaveProfile& w) {
    double P = 0.0;
    for (int j = -w.n_modes; j <= w.n_modes; ++j) P += 0.5 * std::norm(w.coeffs(j + w.n_modes, 0));
    w.params.resize(2);
    w.params << w.coeffs(w.n_modes, 0).real(), P;
}

}  // namespace

WaveProfile cnoidal_closed_form(double m, double mean, double amplitude, int n_modes, CnoidalBounds bounds) {
    if (!(m >= bounds.m_min && m <= bounds.m_max))
        throw SolverError("elliptic parameter outside the well-conditioned range");
    if (!(amplitude > 0.0)) throw ConfigError("cnoidal amplitude must be positive");
    gsl_set_error_handler_off();
    const Elliptic el = complete_integrals(m);
    const double K = el.K, E = el.E;
    const double alpha = amplitude;
    const double k = std::sqrt(alpha / (48.0 * m * K * K));
    const double beta = mean - alpha * (E / K - 1.0 + m) / m;
    const double omega = -16.0 * k * k * k * K * K * (2.0 * m - 1.0) - k * beta;
    const double q = 8.0 * k * k * k * K * K * alpha * (1.0 - m) + 0.5 * k * beta * beta + omega * beta;

    const int n = 8 * n_modes + 8;
    RMat s(n, 1);
    for (int i = 0; i < n; ++i) {
        double sn, cn, dn;
        gsl_sf_elljac_e(2.0 * K * i / n, m, &sn, &cn, &dn);
        s(i, 0) = beta + alpha * cn * cn;
    }
    WaveProfile w;
    w.kind = SystemKind::KdV;
    w.d = 1;
    w.n_modes = n_modes;
    w.coeffs = coeffs_from_samples(s, n_modes);
    // drop pure round-off so derivatives of high modes stay clean
    const double cmax = w.coeffs.cwiseAbs().maxCoeff();
    for (int r = 0; r < w.coeffs.rows(); ++r)
        if (std::abs(w.coeffs(r, 0)) < 1e-15 * cmax) w.coeffs(r, 0) = 0.0;
    w.coeffs(n_modes, 0) = mean;
    w.k = k;
    w.omega = omega;
    w.constants = RVec::Constant(1, q);
    fill_kdv_invariants(w);
    w.params(0) = mean;
    w.residual = profile_residual(kdv_system(), w);
    return w;
}

WaveProfile cnoidal_with_k(double m, double mean, double k, int n_modes, CnoidalBounds bounds) {
    if (!(m >= bounds.m_min && m <= bounds.m_max))
        throw SolverError("elliptic parameter outside the well-conditioned range");
    const double K = complete_integrals(m).K;
    return cnoidal_closed_form(m, mean, 48.0 * m * K * K * k * k, n_modes, bounds);
}

WaveProfile cnoidal_from_invariants(double mean, double P, double k, int n_modes, CnoidalBounds bounds) {
    auto excess = [&](double m) { return cnoidal_with_k(m, mean, k, n_modes, bounds).params(1) - P; };
    double lo = bounds.m_min, hi = bounds.m_max;
    if (excess(lo) > 0.0 || excess(hi) < 0.0) throw SolverError("no cnoidal wave with the requested invariants");
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        double mid = 0.5 * (lo + hi);
        (excess(mid) > 0.0 ? hi : lo) = mid;
    }
    return cnoidal_with_k(0.5 * (lo + hi), mean, k, n_modes, bounds);
}

WaveProfile constant_state(const SystemSpec& sys, const RVec& M, double k, int n_modes) {
    if (M.size() != sys.d) throw ConfigError("mean vector has the wrong size");
    WaveProfile w;
    w.kind = sys.kind;
    w.d = sys.d;
    w.n_modes = n_modes;
    w.coeffs = CMat::Zero(2 * n_modes + 1, sys.d);
    for (int c = 0; c < sys.d; ++c) w.coeffs(n_modes, c) = M(c);
    w.k = k;
    w.omega = -k * sys.c_ref;
    w.degenerate = true;
    if (sys.kind == SystemKind::KdV) {
        w.params.resize(2);
        w.params << M(0), 0.5 * M(0) * M(0);
        w.constants = RVec::Constant(1, 0.5 * k * M(0) * M(0) + w.omega * M(0));
    } else {
        w.params = M;
        w.constants = k * sys.flux.eval(M) + w.omega * M;
    }
    w.residual = 0.0;
    return w;
}

namespace {

// Spectral differentiation matrix on n (odd) equispaced points of (0,1).
RMat diff_matrix(int n) {
    RMat D = RMat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            int s = i - j;
            double sign = (s % 2 == 0) ? 1.0 : -1.0;
            D(i, j) = kPi * sign / std::sin(kPi * s / n);
        }
    return D;
}

// Collocation Newton for the once-integrated profile system. The unknown vector is
// [U (component major), omega, q, sigma (KdV only)].
class ProfileNewton {
public:
    ProfileNewton(const SystemSpec& sys, int n_modes) : sys_(sys), nm_(n_modes), n_(2 * n_modes + 1), d_(sys.d) {
        D1_ = diff_matrix(n_);
        D2_ = D1_ * D1_;
        sinv_.resize(n_);
        for (int i = 0; i < n_; ++i) sinv_(i) = 2.0 * std::sin(kTwoPi * i / n_) / n_;
    }

    int size() const { return d_ * n_ + 1 + d_ + (kdv() ? 1 : 0); }
    int n() const { return n_; }

    RVec pack(const WaveProfile& w) const {
        RVec X = RVec::Zero(size());
        RMat s = w.samples(n_);
        for (int c = 0; c < d_; ++c) X.segment(c * n_, n_) = s.col(c);
        X(d_ * n_) = w.omega;
        for (int c = 0; c < d_; ++c) X(d_ * n_ + 1 + c) = w.constants.size() > c ? w.constants(c) : 0.0;
        return X;
    }

    WaveProfile unpack(const RVec& X, const RVec& targets) const {
        WaveProfile w;
        w.kind = sys_.kind;
        w.d = d_;
        w.n_modes = nm_;
        RMat s(n_, d_);
        for (int c = 0; c < d_; ++c) s.col(c) = X.segment(c * n_, n_);
        w.coeffs = coeffs_from_samples(s, nm_);
        w.k = targets(targets.size() - 1);
        w.omega = X(d_ * n_);
        w.constants = X.segment(d_ * n_ + 1, d_);
        if (kdv()) {
            fill_kdv_invariants(w);
        } else {
            w.params.resize(d_);
            for (int c = 0; c < d_; ++c) w.params(c) = w.coeffs(nm_, c).real();
        }
        return w;
    }

    RVec residual(const RVec& X, const RVec& t) const {
        RVec F(size());
        const double k = t(t.size() - 1);
        const double om = X(d_ * n_);
        if (kdv()) {
            RVec U = X.head(n_);
            const double q = X(n_ + 1), sig = X(n_ + 2);
            F.head(n_) = k * k * k * (D2_ * U) + 0.5 * k * U.cwiseProduct(U) + om * U - RVec::Constant(n_, q) + sig * (D1_ * U);
            F(n_) = U.mean() - t(0);
            F(n_ + 1) = 0.5 * U.squaredNorm() / n_ - t(1);
            F(n_ + 2) = sinv_.dot(U);
            return F;
        }
        RMat U(n_, d_), DU(n_, d_);
        for (int c = 0; c < d_; ++c) {
            U.col(c) = X.segment(c * n_, n_);
            DU.col(c) = D1_ * U.col(c);
        }
        for (int i = 0; i < n_; ++i) {
            RVec fi = sys_.flux.eval(U.row(i).transpose());
            for (int c = 0; c < d_; ++c) {
                double r = -om * U(i, c) - k * fi(c) + X(d_ * n_ + 1 + c);
                for (int cc = 0; cc < d_; ++cc) r += k * k * sys_.D(c, cc) * DU(i, cc);
                F(c * n_ + i) = r;
            }
        }
        for (int c = 0; c < d_; ++c) F(d_ * n_ + c) = U.col(c).mean() - t(c);
        F(d_ * n_ + d_) = sinv_.dot(U.col(0));
        return F;
    }

    RMat jacobian(const RVec& X, const RVec& t) const {
        const int S = size();
        RMat J = RMat::Zero(S, S);
        const double k = t(t.size() - 1);
        const double om = X(d_ * n_);
        if (kdv()) {
            RVec U = X.head(n_);
            const double sig = X(n_ + 2);
            J.topLeftCorner(n_, n_) = k * k * k * D2_ + sig * D1_;
            for (int i = 0; i < n_; ++i) J(i, i) += k * U(i) + om;
            J.block(0, n_, n_, 1) = U;
            J.block(0, n_ + 1, n_, 1).setConstant(-1.0);
            J.block(0, n_ + 2, n_, 1) = D1_ * U;
            J.block(n_, 0, 1, n_).setConstant(1.0 / n_);
            J.block(n_ + 1, 0, 1, n_) = U.transpose() / n_;
            J.block(n_ + 2, 0, 1, n_) = sinv_.transpose();
            return J;
        }
        for (int c = 0; c < d_; ++c)
            for (int cc = 0; cc < d_; ++cc) J.block(c * n_, cc * n_, n_, n_) = k * k * sys_.D(c, cc) * D1_;
        for (int i = 0; i < n_; ++i) {
            RVec ui(d_);
            for (int c = 0; c < d_; ++c) ui(c) = X(c * n_ + i);
            RMat df = sys_.flux.jacobian(ui);
            for (int c = 0; c < d_; ++c) {
                J(c * n_ + i, c * n_ + i) -= om;
                for (int cc = 0; cc < d_; ++cc) J(c * n_ + i, cc * n_ + i) -= k * df(c, cc);
                J(c * n_ + i, d_ * n_) = -ui(c);
                J(c * n_ + i, d_ * n_ + 1 + c) = 1.0;
            }
        }
        for (int c = 0; c < d_; ++c) J.block(d_ * n_ + c, c * n_, 1, n_).setConstant(1.0 / n_);
        J.block(d_ * n_ + d_, 0, 1, n_) = sinv_.transpose();
        return J;
    }

    // derivative of the residual with respect to family coordinate i
    RVec dparam(const RVec& X, const RVec& t, int i) const {
        RVec g = RVec::Zero(size());
        const int np = static_cast<int>(t.size());
        const double k = t(np - 1);
        if (i < np - 1) {
            g(d_ * n_ + i) = -1.0;
            return g;
        }
        if (kdv()) {
            RVec U = X.head(n_);
            g.head(n_) = 3.0 * k * k * (D2_ * U) + 0.5 * U.cwiseProduct(U);
            return g;
        }
        for (int p = 0; p < n_; ++p) {
            RVec ui(d_);
            for (int c = 0; c < d_; ++c) ui(c) = X(c * n_ + p);
            RVec fi = sys_.flux.eval(ui);
            for (int c = 0; c < d_; ++c) {
                double r = -fi(c);
                for (int cc = 0; cc < d_; ++cc) r += 2.0 * k * sys_.D(c, cc) * (D1_.row(p) * X.segment(cc * n_, n_))(0);
                g(c * n_ + p) = r;
            }
        }
        return g;
    }

    bool kdv() const { return sys_.kind == SystemKind::KdV; }

private:
    const SystemSpec& sys_;
    int nm_, n_, d_;
    RMat D1_, D2_;
    RVec sinv_;
};

double rcond_of(const RMat& J) {
    Eigen::JacobiSVD<RMat> svd(J);
    const RVec& s = svd.singularValues();
    return s(s.size() - 1) / s(0);
}

struct NewtonOutcome {
    RVec X;
    bool converged = false;
    double rcond = 1.0;
    std::string message;
};

NewtonOutcome run_newton(const ProfileNewton& pn, RVec X, const RVec& t, const ProfileOptions& opt) {
    NewtonOutcome out;
    // residual terms are quadratic in the unknowns, so round-off scales like |X|^2
    auto scale = [](const RVec& v) { return 1.0 + v.lpNorm<Eigen::Infinity>() * v.lpNorm<Eigen::Infinity>(); };
    RVec F = pn.residual(X, t);
    double fn = F.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < opt.max_iter; ++it) {
        if (fn < opt.tol_residual * scale(X)) {
            out.converged = true;
            break;
        }
        RMat J = pn.jacobian(X, t);
        RVec dx = J.fullPivLu().solve(-F);
        if (!dx.allFinite()) {
            out.message = "singular Newton Jacobian";
            break;
        }
        double lam = 1.0;
        RVec Xn;
        double fnn = 0.0;
        for (int ls = 0; ls < 12; ++ls) {
            Xn = X + lam * dx;
            fnn = pn.residual(Xn, t).lpNorm<Eigen::Infinity>();
            if (fnn < fn) break;
            lam *= 0.5;
        }
        if (!(fnn < fn)) {
            // no decrease possible: accept only if already at round-off level
            out.converged = fn < 1e3 * opt.tol_residual * scale(X);
            if (!out.converged) out.message = "Newton line search stalled";
            break;
        }
        X = Xn;
        F = pn.residual(X, t);
        fn = fnn;
        if (lam * dx.lpNorm<Eigen::Infinity>() < opt.tol_step * (1.0 + X.lpNorm<Eigen::Infinity>())) {
            out.converged = fn < 1e3 * opt.tol_residual * scale(X);
            break;
        }
    }
    out.X = X;
    out.rcond = rcond_of(pn.jacobian(X, t));
    if (!out.converged && out.message.empty()) out.message = "Newton did not converge";
    return out;
}

// A nonconstant solve that lands on (or numerically next to) the constant family.
bool collapsed(const WaveProfile& w) {
    double mean = 0.0;
    for (int c = 0; c < w.d; ++c) mean = std::max(mean, std::abs(w.coeff(0, c)));
    return w.amplitude() < 1e-6 * (1.0 + mean);
}

// Seed coefficients re-sampled to the requested number of modes.
WaveProfile resample(const WaveProfile& w, int n_modes) {
    if (w.n_modes == n_modes) return w;
    WaveProfile r = w;
    r.n_modes = n_modes;
    r.coeffs = CMat::Zero(2 * n_modes + 1, w.d);
    for (int j = -std::min(n_modes, w.n_modes); j <= std::min(n_modes, w.n_modes); ++j)
        r.coeffs.row(j + n_modes) = w.coeffs.row(j + w.n_modes);
    return r;
}

WaveProfile finish(const SystemSpec& sys, const ProfileNewton& pn, const NewtonOutcome& o, const RVec& t,
                   const ProfileOptions& opt) {
    if (!o.converged) throw SolverError("profile solve failed: " + o.message);
    if (o.rcond < opt.rcond_min)
        throw SolverError("profile Jacobian singular (rcond " + std::to_string(o.rcond) + "), likely a fold of the family");
    WaveProfile w = pn.unpack(o.X, t);
    if (collapsed(w)) throw SolverError("profile collapsed onto the constant family");
    w.residual = profile_residual(sys, w);
    if (!(w.residual < opt.report_tol)) throw SolverError("profile residual above tolerance: " + std::to_string(w.residual));
    return w;
}

}  // namespace

WaveProfile solve_profile(const SystemSpec& sys, const WaveProfile& seed, const RVec& targets, const ProfileOptions& opt) {
    validate(sys);
    const int np = sys.kind == SystemKind::KdV ? 3 : sys.d + 1;
    if (targets.size() != np) throw ConfigError("profile targets must be the family coordinates");
    if (!(targets(np - 1) > 0.0)) throw ConfigError("wavenumber must be positive");
    if (seed.d != sys.d) throw ConfigError("seed dimension mismatch");
    if (seed.amplitude() < 1e-14) {
        RVec M = sys.kind == SystemKind::KdV ? targets.head(1) : targets.head(sys.d);
        return constant_state(sys, M, targets(np - 1), opt.n_modes);
    }
    ProfileNewton pn(sys, opt.n_modes);
    WaveProfile s = resample(seed, opt.n_modes);
    NewtonOutcome o = run_newton(pn, pn.pack(s), targets, opt);
    return finish(sys, pn, o, targets, opt);
}

WaveProfile harmonic_seed(const SystemSpec& sys, const RVec& M, double k, double eps, double omega, int n_modes) {
    WaveProfile w = constant_state(sys, M, k, n_modes);
    w.degenerate = false;
    w.omega = omega;
    // cosine on component 0, and for d >= 2 a quarter-period shifted copy on component 1
    w.coeffs(n_modes + 1, 0) += 0.5 * eps;
    w.coeffs(n_modes - 1, 0) += 0.5 * eps;
    if (sys.d >= 2) {
        w.coeffs(n_modes + 1, 1) += 0.5 * kI * eps;
        w.coeffs(n_modes - 1, 1) += -0.5 * kI * eps;
    }
    const int n = 2 * n_modes + 1;
    RMat U = w.samples(n), DU = w.derivative_samples(n, 1);
    if (sys.kind == SystemKind::KdV) {
        RMat D2 = w.derivative_samples(n, 2);
        double q = 0.0;
        for (int i = 0; i < n; ++i) q += k * k * k * D2(i, 0) + 0.5 * k * U(i, 0) * U(i, 0) + omega * U(i, 0);
        w.constants = RVec::Constant(1, q / n);
        fill_kdv_invariants(w);
    } else {
        RVec q = RVec::Zero(sys.d);
        for (int i = 0; i < n; ++i) {
            RVec u = U.row(i).transpose();
            q += k * sys.flux.eval(u) + omega * u - k * k * sys.D * DU.row(i).transpose();
        }
        w.constants = q / n;
    }
    return w;
}

double profile_residual(const SystemSpec& sys, const WaveProfile& w, int n_points) {
    const int n = n_points > 0 ? n_points : 4 * (2 * w.n_modes + 1);
    RMat U = w.samples(n);
    double acc = 0.0;
    if (sys.kind == SystemKind::KdV) {
        RMat U2 = w.derivative_samples(n, 2);
        const double k = w.k, q = w.constants(0);
        for (int i = 0; i < n; ++i) {
            double r = k * k * k * U2(i, 0) + 0.5 * k * U(i, 0) * U(i, 0) + w.omega * U(i, 0) - q;
            acc += r * r;
        }
        return std::sqrt(acc / n);
    }
    RMat U1 = w.derivative_samples(n, 1);
    for (int i = 0; i < n; ++i) {
        RVec u = U.row(i).transpose();
        RVec r = w.k * w.k * sys.D * U1.row(i).transpose() - w.omega * u - w.k * sys.flux.eval(u) + w.constants;
        acc += r.squaredNorm();
    }
    return std::sqrt(acc / n);
}

double spectral_tail(const WaveProfile& w) {
    double top = 0.0, tail = 0.0;
    for (int c = 0; c < w.d; ++c)
        for (int j = 1; j <= w.n_modes; ++j) {
            double a = std::max(std::abs(w.coeff(j, c)), std::abs(w.coeff(-j, c)));
            top = std::max(top, a);
            if (4 * j > 3 * w.n_modes) tail = std::max(tail, a);
        }
    return top > 0.0 ? tail / top : 0.0;
}

ContinuationResult continue_family(const SystemSpec& sys, const WaveProfile& start, int direction, int steps,
                                   double step_size, const ProfileOptions& opt) {
    ContinuationResult res;
    res.family.push_back(start);
    RVec p = start.family_coords();
    if (direction < 0 || direction >= p.size()) throw ConfigError("continuation direction out of range");
    if (steps <= 0) return res;
    ProfileNewton pn(sys, opt.n_modes);
    std::vector<RVec> Xs{pn.pack(resample(start, opt.n_modes))};
    std::vector<RVec> ps{p};
    const int S = pn.size();

    for (int step = 0; step < steps; ++step) {
        bool ok = false;
        double h = step_size;
        for (int halving = 0; halving <= 8 && !ok; ++halving, h *= 0.5) {
            RVec t = ps.back();
            t(direction) += h;
            RVec seed = Xs.back();
            if (Xs.size() >= 2) {
                double prev = ps.back()(direction) - ps[ps.size() - 2](direction);
                if (prev != 0.0) seed += (h / prev) * (Xs.back() - Xs[Xs.size() - 2]);
            }
            NewtonOutcome o = run_newton(pn, seed, t, opt);
            if (!o.converged || o.rcond < opt.rcond_min) continue;
            WaveProfile w = pn.unpack(o.X, t);
            w.residual = profile_residual(sys, w);
            if (collapsed(w) || !(w.residual < opt.report_tol)) continue;
            Xs.push_back(o.X);
            ps.push_back(t);
            res.family.push_back(w);
            ok = true;
        }
        if (ok) continue;

        // Pseudo-arclength fallback in (X, p_direction).
        RVec t = ps.back();
        RMat J = pn.jacobian(Xs.back(), t);
        RVec g = pn.dparam(Xs.back(), t, direction);
        RVec tan(S + 1);
        tan.head(S) = J.fullPivLu().solve(-g);
        tan(S) = 1.0;
        if (!tan.allFinite()) {
            res.fold = true;
            res.message = "singular Jacobian at the last converged member";
            break;
        }
        tan.normalize();
        if (tan(S) * step_size < 0) tan = -tan;
        const double ds = std::abs(step_size) * std::sqrt(1.0 + tan.head(S).squaredNorm() / (tan(S) * tan(S) + 1e-300));
        RVec Z0(S + 1);
        Z0.head(S) = Xs.back();
        Z0(S) = t(direction);
        RVec Z = Z0 + ds * tan;
        bool conv = false;
        for (int it = 0; it < opt.max_iter; ++it) {
            RVec tt = t;
            tt(direction) = Z(S);
            RVec F(S + 1);
            F.head(S) = pn.residual(Z.head(S), tt);
            F(S) = tan.dot(Z - Z0) - ds;
            if (F.lpNorm<Eigen::Infinity>() < opt.tol_residual) {
                conv = true;
                break;
            }
            RMat JJ(S + 1, S + 1);
            JJ.topLeftCorner(S, S) = pn.jacobian(Z.head(S), tt);
            JJ.block(0, S, S, 1) = pn.dparam(Z.head(S), tt, direction);
            JJ.row(S) = tan.transpose();
            RVec dz = JJ.fullPivLu().solve(-F);
            if (!dz.allFinite()) break;
            Z += dz;
        }
        RVec tt = t;
        tt(direction) = Z(S);
        const bool advanced = (Z(S) - t(direction)) * step_size > 0;
        if (conv && advanced) {
            NewtonOutcome o;
            o.X = Z.head(S);
            o.rcond = rcond_of(pn.jacobian(o.X, tt));
            WaveProfile w = pn.unpack(o.X, tt);
            w.residual = profile_residual(sys, w);
            if (o.rcond >= opt.rcond_min && !collapsed(w) && w.residual < opt.report_tol) {
                Xs.push_back(o.X);
                ps.push_back(tt);
                res.family.push_back(w);
                continue;
            }
        }
        res.fold = true;
        res.message = conv ? "parameter turned back along the arclength (fold)" : "step halving exhausted (fold or singular Jacobian)";
        break;
    }
    return res;
}

WaveFamily family_derivatives(const SystemSpec& sys, const WaveProfile& center, double fd_step, const ProfileOptions& opt) {
    WaveFamily fam;
    fam.center = center;
    const RVec p = center.family_coords();
    const int np = static_cast<int>(p.size());
    ProfileOptions o = opt;
    o.n_modes = center.n_modes;
    auto partial = [&](int i, double h, CMat& dU, double& dom) {
        RVec tp = p, tm = p;
        tp(i) += h;
        tm(i) -= h;
        WaveProfile a = solve_profile(sys, center, tp, o);
        WaveProfile b = solve_profile(sys, center, tm, o);
        dU = (a.coeffs - b.coeffs) / (2.0 * h);
        dom = (a.omega - b.omega) / (2.0 * h);
    };
    fam.freq_partials.resize(np);
    for (int i = 0; i < np; ++i) {
        const double h = fd_step * std::max(1.0, std::abs(p(i)));
        CMat d1, d2;
        double o1, o2;
        partial(i, h, d1, o1);
        partial(i, 0.5 * h, d2, o2);
        // Richardson combination of the two central differences
        fam.partials.push_back((4.0 * d2 - d1) / 3.0);
        fam.freq_partials(i) = (4.0 * o2 - o1) / 3.0;
        fam.richardson_change = std::max(fam.richardson_change, (d1 - d2).cwiseAbs().maxCoeff());
    }
    fam.phase_partial = center.coeffs;
    for (int j = -center.n_modes; j <= center.n_modes; ++j)
        fam.phase_partial.row(j + center.n_modes) *= kI * (kTwoPi * j);
    return fam;
}

nlohmann::json profile_to_json(const WaveProfile& w) {
    nlohmann::json j;
    j["kind"] = w.kind == SystemKind::KdV ? "kdv" : "parabolic";
    j["d"] = w.d;
    j["n_modes"] = w.n_modes;
    j["k"] = w.k;
    j["omega"] = w.omega;
    j["params"] = std::vector<double>(w.params.data(), w.params.data() + w.params.size());
    j["constants"] = std::vector<double>(w.constants.data(), w.constants.data() + w.constants.size());
    nlohmann::json c = nlohmann::json::array();
    for (int col = 0; col < w.d; ++col)
        for (int r = 0; r < w.coeffs.rows(); ++r) c.push_back({w.coeffs(r, col).real(), w.coeffs(r, col).imag()});
    j["coeffs"] = c;
    j["residual"] = w.residual;
    j["degenerate"] = w.degenerate;
    return j;
}

WaveProfile profile_from_json(const nlohmann::json& j) {
    try {
        WaveProfile w;
        std::string kind = j.at("kind").get<std::string>();
        if (kind != "kdv" && kind != "parabolic") throw ConfigError("unknown profile kind " + kind);
        w.kind = kind == "kdv" ? SystemKind::KdV : SystemKind::Parabolic;
        w.d = j.at("d").get<int>();
        auto params = j.at("params").get<std::vector<double>>();
        auto constants = j.at("constants").get<std::vector<double>>();
        const auto& c = j.at("coeffs");
        if (c.size() % w.d != 0) throw ConfigError("coefficient count not divisible by d");
        const int rows = static_cast<int>(c.size()) / w.d;
        if (rows % 2 == 0) throw ConfigError("coefficient count per component must be odd");
        w.n_modes = (rows - 1) / 2;
        w.coeffs.resize(rows, w.d);
        for (int col = 0; col < w.d; ++col)
            for (int r = 0; r < rows; ++r) {
                const auto& e = c[col * rows + r];
                w.coeffs(r, col) = cd(e.at(0).get<double>(), e.at(1).get<double>());
            }
        w.k = j.at("k").get<double>();
        w.omega = j.at("omega").get<double>();
        w.params = Eigen::Map<RVec>(params.data(), params.size());
        w.constants = Eigen::Map<RVec>(constants.data(), constants.size());
        w.residual = j.value("residual", 0.0);
        w.degenerate = j.value("degenerate", false);
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("profile json: ") + e.what());
    }
}

void save_profile(const WaveProfile& w, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << profile_to_json(w).dump(2) << '\n';
}

WaveProfile load_profile(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("profile json: ") + e.what());
    }
    return profile_from_json(j);
}

}  // namespace mw
