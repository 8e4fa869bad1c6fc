#pragma once

#include <functional>
#include <string>

#include <json.hpp>

#include "modwave/dynamics.hpp"
#include "modwave/floquet.hpp"

namespace mw {

// Averaged flux F and frequency omega tabulated on a tensor patch of family
// coordinates (parameters followed by k) around a center wave.
struct AveragedMaps {
    SystemSpec sys;
    bool constant_family = false;
    RVec center;
    // nodes[a] are the abscissae along coordinate a
    std::vector<std::vector<double>> nodes;
    // row-major over the node tensor, one row per node: F then omega
    RMat values;
    // omega + k c from the stored profiles at the nodes
    double omega_identity = 0.0;
    // leave-one-out interpolation error along the axes through the center
    double loo_error = 0.0;
    int n_coords() const { return static_cast<int>(nodes.size()); }
    int n_flux() const { return static_cast<int>(values.cols()) - 1; }
    bool inside(const RVec& q) const;
    // F followed by omega
    RVec eval(const RVec& q) const;
    // rows F then omega, columns d/dq
    RMat jacobian(const RVec& q) const;
};

struct TabulationOptions {
    int points_per_axis = 5;
    // node spacing relative to max(|q_a|, 1)
    double rel_step = 1e-2;
    ProfileOptions profile;
};

// Averaged densities: U for parabolic systems, (U, U^2/2) for KdV.
RMat conserved_densities(const SystemSpec& sys, const RMat& U);
// F(q) and omega of one solved profile.
RVec averaged_flux(const SystemSpec& sys, const WaveProfile& w);

AveragedMaps tabulate_averages(const SystemSpec& sys, const WaveProfile& center, const TabulationOptions& opt = {});

struct CharacteristicResult {
    RMat matrix;
    CVec speeds;
    bool hyperbolic = false;
    double min_gap = 0.0;
};

// First-order part d(F, -omega)/d(M, k); speeds sorted by real part.
CharacteristicResult characteristic_matrix(const AveragedMaps& A, const RVec& q);

struct SpeedComparison {
    // k s + omega from the averaged system, i lambda'(0) from the critical expansion, both sorted
    std::vector<double> averaged;
    std::vector<cd> spectral;
    double max_rel_error = 0.0;
};

// Constant families compare only the flux speeds, since the wavenumber
// transport speed has no critical curve.
SpeedComparison compare_speeds(const AveragedMaps& A, const WaveProfile& wave, const CriticalExpansion& E);

// Slow fields on the cell grid: cell averages of the densities and of kappa,
// and the phase Psi - Id at the cell centers.
struct ModulationField {
    int n_cells = 0;
    RMat M;
    RVec kappa;
    RVec phase;
    RVec psi;
};

using ScalarFn = std::function<double(double)>;

// (Id - psi)^{-1} at x by Newton; ConfigError when |psi_x| >= 1 is met.
double invert_phase(const ScalarFn& psi, const ScalarFn& psi_x, double x);

// Pointwise effective density and kappa at x (unaveraged), U0 given as a callable.
std::pair<RVec, double> effective_point(const SystemSpec& sys, const WaveProfile& wave, const RVec& u0,
                                        const ScalarFn& psi0, const ScalarFn& psi0_x, double x);

// Effective data, cell-averaged by the composite trapezoid rule on the samples of U0.
ModulationField effective_data(const SystemSpec& sys, const WaveProfile& wave, const SampledLine& U0,
                               const ScalarFn& psi0, const ScalarFn& psi0_x);

struct WhithamOptions {
    double nu_art = 0.5;
    double cfl = 0.4;
    // truncate when the largest slope exceeds this multiple of the initial one plus the floor
    double shock_factor = 50.0;
    double shock_floor = 1e-6;
};

struct WhithamTrajectory {
    std::vector<double> times;
    std::vector<ModulationField> fields;
    bool truncated = false;
    std::string note;
};

// Conservative finite volumes in the comoving cell variable:
// Q_t + (k0 Phi(Q) + omega0 Q)_y = nu Q_yy with Phi = (F, -omega), phase_t = omega(Q) - omega0 kappa / k0.
WhithamTrajectory solve_whitham(const AveragedMaps& A, const ModulationField& init, double k0, double omega0,
                                const std::vector<double>& times, const WhithamOptions& opt = {});

struct ExtractOptions {
    NormSpec norm{NormKind::L2, 0.0};
    SmDistanceOptions distance;
};

std::vector<ModulationField> extract_modulation(const SystemSpec& sys, const Trajectory& tr, const WaveProfile& wave,
                                                const ExtractOptions& opt = {});

struct GapRow {
    double t = 0.0;
    std::string quantity;
    double p = 2.0;
    double gap = 0.0;
};

struct Comparison {
    std::vector<GapRow> rows;
    // fitted exponents keyed by quantity, present when the window holds enough samples
    std::map<std::string, DecayFit> fits;
};

// Gaps ||(M, kappa) - (M_W, kappa_W)||_p and ||Psi - Psi_W||_p per time, with cell weight 1.
// A nonempty background (M, k) adds the deviation of the full fields from it as the scale.
Comparison compare(const std::vector<double>& times, const std::vector<ModulationField>& full,
                   const std::vector<ModulationField>& reduced, double p, const RVec& background = RVec(),
                   double fit_t0 = 0.0, double fit_t1 = 0.0);

void write_comparison_csv(const Comparison& c, const std::string& path);
nlohmann::json averaged_maps_to_json(const AveragedMaps& A);
AveragedMaps averaged_maps_from_json(const nlohmann::json& j);

}  // namespace mw
