#pragma once

#include <map>
#include <string>

#include "modwave/bloch.hpp"
#include "modwave/profiles.hpp"

namespace mw {

struct Trajectory {
    std::vector<double> times;
    std::vector<SampledLine> states;
    std::map<std::string, std::vector<double>> norms;
    // set when a blow-up cut the run short; states stop at the last good time
    bool truncated = false;
    std::string note;
};

struct ModDecomposition {
    SampledLine v_part;
    // mean-zero phase; the uniform translation is kept apart in shift
    SampledLine psi;
    SampledLine psi_x;
    double shift = 0.0;
    double objective = 0.0;
    bool converged = true;
};

struct DecayFit {
    double exponent = 0.0;
    double prefactor = 0.0;
    double t0 = 0.0;
    double t1 = 0.0;
    double residual = 0.0;
    int samples = 0;
    double exponent_first = 0.0;
    double exponent_second = 0.0;
    double drift = 0.0;
    bool power_law = true;
};

struct LinearOptions {
    // relative energy allowed in the top third of each fiber
    double tail_tol = 1e-8;
    // eigenvector condition number above which a fiber falls back to expm
    double cond_max = 1e8;
};

// Samples of the wave (or of its derivative) repeated over n_cells cells.
SampledLine wave_on_line(const WaveProfile& wave, int n_cells, int pts_per_cell, int deriv = 0);

// Fiber-exponential propagation of the linearization about the wave. pts_per_cell
// must be odd; the fiber truncation is (pts_per_cell - 1) / 2.
Trajectory evolve_linear(const SystemSpec& sys, const WaveProfile& wave, const SampledLine& W0,
                         const std::vector<double>& times, const LinearOptions& opt = {});

struct NonlinearOptions {
    double dt = 1e-3;
    // local error tolerance for the step-halving control, relative to max|U|
    double step_tol = 1e-8;
    int max_halvings = 6;
    // blow-up when max|U - Ubar| exceeds this multiple of (1 + max|Ubar|)
    double blowup_factor = 1e3;
};

// Second-order IMEX (ARS(2,2,2)): diffusion and advection implicit, flux explicit.
Trajectory evolve_parabolic_nonlinear(const SystemSpec& sys, const WaveProfile& wave, const SampledLine& U0,
                                      const std::vector<double>& times, const NonlinearOptions& opt = {});

// Largest growth exponent of the crude energy bound, (k/2) max(-Ubar')_+.
double crude_growth_rate(const WaveProfile& wave);

enum class NormKind { L1, L2, Linf, Hs };
struct NormSpec {
    NormKind kind = NormKind::L2;
    double s = 1.0;
};
NormSpec norm_from_string(const std::string& name);
std::string to_string(const NormSpec& n);
double line_norm(const SampledLine& g, const NormSpec& X);

struct SmNormOptions {
    double xi_cut = kPi / 8;
    int max_iter = 200;
    double tol = 1e-8;
};

struct SmNormResult {
    double value = 0.0;
    // psi = 0
    double trivial = 0.0;
    // per-fiber L2 projection at the L2-optimal weight, evaluated in X
    double l2_projection = 0.0;
    // same problem at half the cutoff (sensitivity)
    double value_half_cut = 0.0;
    ModDecomposition decomposition;
};

// Upper bound for inf ||V||_X + ||psi_x||_X over W = V + Ubar' psi with psi band-limited to |xi| <= xi_cut.
SmNormResult compute_sm_norm(const SampledLine& W, const WaveProfile& wave, const NormSpec& X,
                             const SmNormOptions& opt = {});

struct SmDistanceOptions {
    double xi_cut = kPi / 8;
    int max_iter = 30;
    double tol = 1e-12;
};

struct SmDistanceResult {
    double value = 0.0;
    double unmodulated = 0.0;
    ModDecomposition decomposition;
};

// ||U o (Id - psi) - Ubar||_X + ||psi_x||_X for a given phase (sampled on the line).
double sm_distance_objective(const SampledLine& U, const WaveProfile& wave, const SampledLine& psi,
                             const SampledLine& psi_x, const NormSpec& X);

// Gauss-Newton over band-limited psi (constant mode included), |psi_x| <= 1/2.
SmDistanceResult compute_sm_distance(const SampledLine& U, const WaveProfile& wave, const NormSpec& X,
                                     const SmDistanceOptions& opt = {});

// Evaluate the trigonometric interpolant of U (period n_cells) at arbitrary points.
CMat evaluate_periodic(const SampledLine& U, const RVec& points, int deriv = 0);

DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& values, double t0, double t1,
                   double drift_tol = 0.05);

std::vector<double> geometric_times(double t0, double t1, int count);

void write_norms_csv(const Trajectory& tr, const std::string& path);
// Layout: int64 N, int64 M_pts, int64 d, then N*M_pts rows of d complex doubles (re, im), row-major.
void write_state_binary(const SampledLine& g, const std::string& path);
SampledLine read_state_binary(const std::string& path);

}  // namespace mw
