#pragma once

#include <optional>
#include <string>

#include "modwave/system.hpp"

namespace mw {

// Periodic profile on (0,1). coeffs has 2*n_modes+1 rows (mode j at row j+n_modes)
// and one column per component.
struct WaveProfile {
    SystemKind kind = SystemKind::KdV;
    int d = 1;
    int n_modes = 0;
    CMat coeffs;
    double k = 1.0;
    double omega = 0.0;
    // parabolic: cell means M; KdV: (mean, mean of U^2/2)
    RVec params;
    RVec constants;
    double residual = 0.0;
    bool degenerate = false;

    double speed() const { return -omega / k; }
    cd coeff(int j, int c = 0) const;
    // component values at y_i = i/n
    RMat samples(int n) const;
    RMat derivative_samples(int n, int order) const;
    RVec eval(double y) const;
    RVec eval_derivative(double y, int order) const;
    // parameter vector followed by k
    RVec family_coords() const;
    double amplitude() const;
};

struct WaveFamily {
    WaveProfile center;
    // one column block per family coordinate: d(U)/d(coord) as Fourier coefficients
    std::vector<CMat> partials;
    RVec freq_partials;
    CMat phase_partial;
    // max change of the partials when the step is halved
    double richardson_change = 0.0;
};

struct ProfileOptions {
    int n_modes = 64;
    int max_iter = 50;
    double tol_residual = 1e-12;
    double tol_step = 1e-13;
    double report_tol = 1e-10;
    double rcond_min = 1e-13;
};

struct CnoidalBounds {
    double m_min = 1e-4;
    double m_max = 0.999;
};

WaveProfile cnoidal_closed_form(double m, double mean, double amplitude, int n_modes = 64,
                                CnoidalBounds bounds = {});
// Same family member selected by wavenumber instead of amplitude.
WaveProfile cnoidal_with_k(double m, double mean, double k, int n_modes = 64, CnoidalBounds bounds = {});
// Member with prescribed mean, mean of U^2/2 and wavenumber (bisection in m).
WaveProfile cnoidal_from_invariants(double mean, double P, double k, int n_modes = 64, CnoidalBounds bounds = {});

// Newton on the once-integrated profile system. targets = family coordinates
// (parameters followed by k).
WaveProfile solve_profile(const SystemSpec& sys, const WaveProfile& seed, const RVec& targets,
                          const ProfileOptions& opt = {});

// Constant state M with wavenumber k (omega = -k c_ref).
WaveProfile constant_state(const SystemSpec& sys, const RVec& M, double k, int n_modes = 64);

// Small harmonic ansatz M + eps cos(2 pi y) e_c, omega and q from the linearization.
WaveProfile harmonic_seed(const SystemSpec& sys, const RVec& M, double k, double eps, double omega,
                          int n_modes = 64);

struct ContinuationResult {
    std::vector<WaveProfile> family;
    bool fold = false;
    std::string message;
};

ContinuationResult continue_family(const SystemSpec& sys, const WaveProfile& start, int direction, int steps,
                                   double step_size, const ProfileOptions& opt = {});

WaveFamily family_derivatives(const SystemSpec& sys, const WaveProfile& center, double fd_step,
                              const ProfileOptions& opt = {});

// Profile-equation residual (L2 over one period) from pointwise evaluation on a
// fine grid, independent of the Newton linear algebra.
double profile_residual(const SystemSpec& sys, const WaveProfile& w, int n_points = 0);

// Largest Fourier magnitude among the top quarter of the modes relative to the largest mode.
double spectral_tail(const WaveProfile& w);

nlohmann::json profile_to_json(const WaveProfile& w);
WaveProfile profile_from_json(const nlohmann::json& j);
void save_profile(const WaveProfile& w, const std::string& path);
WaveProfile load_profile(const std::string& path);

}  // namespace mw
