#pragma once

#include <array>
#include <map>
#include <string>

#include "modwave/profiles.hpp"

namespace mw {

struct FiberMatrix {
    double xi = 0.0;
    int n_f = 0;
    int d = 1;
    CMat matrix;
};

// The fiber matrix is a cubic polynomial in xi: A0 + xi A1 + xi^2 A2 + xi^3 A3.
struct FiberPencil {
    int n_f = 0;
    int d = 1;
    std::array<CMat, 4> A;
    CMat at(double xi) const;
    CMat derivative(double xi, int order) const;
};

FiberPencil fiber_pencil(const SystemSpec& sys, const WaveProfile& wave, int n_f);
FiberMatrix assemble_fiber(const SystemSpec& sys, const WaveProfile& wave, double xi, int n_f);

// Largest j with |c_j| above 1e-13 of the largest nonzero mode.
int active_modes(const WaveProfile& wave);

struct EigPair {
    cd lambda;
    CVec vec;
};

// LAPACK zgeev; sorted by imaginary then real part.
CVec eigenvalues(const CMat& A);
std::vector<EigPair> eig_fiber(const FiberMatrix& F);

struct FloquetEig {
    cd lambda;
    bool resolved = false;
};

struct SweepOptions {
    double tol_abs = 1e-6;
    double tol_rel = 1e-6;
    // clusters closer than cluster_factor * sqrt(eps * |A|) are replaced by their centroid
    double cluster_factor = 10.0;
};

struct FloquetSpectrum {
    std::vector<double> xi;
    std::vector<std::vector<FloquetEig>> eigs;
    int n_f = 0;
    int n_f2 = 0;
    double tol_abs = 1e-6;
    double tol_rel = 1e-6;
    std::vector<double> cluster_radius;
};

int second_truncation(int n_f);
std::vector<double> uniform_xi_grid(int count);

FloquetSpectrum sweep(const SystemSpec& sys, const WaveProfile& wave, const std::vector<double>& xi_grid, int n_f,
                      int n_f2 = 0, const SweepOptions& opt = {});

enum class CurveClass { Critical, Line, Loop, Other };
std::string to_string(CurveClass c);

struct SpectralCurve {
    int id = 0;
    std::vector<int> xi_index;
    std::vector<double> xi;
    std::vector<cd> lambda;
    CurveClass cls = CurveClass::Other;
    // passes through the zero cluster at xi = 0
    bool critical = false;
    // glued chain this band belongs to and its position in it
    int chain = -1;
    int chain_pos = 0;
    std::map<std::string, double> derivatives;
};

struct TrackOptions {
    // ambiguity when the runner-up candidate is within this factor of the best match
    double ambiguity_ratio = 3.0;
    // matches closer than this never count as ambiguous
    double abs_floor = 1e-7;
    bool require_unambiguous = true;
};

struct Chain {
    std::vector<int> bands;
    bool closed = false;
    CurveClass cls = CurveClass::Other;
};

struct TrackResult {
    std::vector<SpectralCurve> curves;
    std::vector<Chain> chains;
    int n_critical = 0;
    int n_line_chains = 0;
    int n_loops = 0;
};

TrackResult track_curves(const FloquetSpectrum& S, const TrackOptions& opt = {});

struct CriticalExpansion {
    int multiplicity = 0;
    int geometric_multiplicity = 0;
    // |lambda| of the last eigenvalue in the zero cluster over the first one outside it
    double gap = 0.0;
    std::vector<int> jordan_ranks;
    std::vector<cd> slopes;
    std::vector<cd> fd_slopes;
    std::vector<cd> curvatures;
    std::vector<cd> third;
    // Richardson error estimates per branch
    std::vector<double> curvature_err;
    std::vector<double> third_err;
    double slope_consistency = 0.0;
    bool degenerate_slopes = false;
    std::string note;
};

struct ExpansionOptions {
    // raised to the profile's active mode count when smaller
    int n_f = 24;
    double h1 = 1e-2;
    double h2 = 5e-3;
    double rank_tol = 1e-8;
};

CriticalExpansion critical_expansion(const SystemSpec& sys, const WaveProfile& wave, const ExpansionOptions& opt = {});

struct BandAsymptotics {
    int band = 0;
    double third = 0.0;
    double mean_im = 0.0;
};

struct LargeBranchResult {
    std::vector<BandAsymptotics> bands;
    double limit_k = 0.0;
    double limit_k3 = 0.0;
};

LargeBranchResult large_branch_asymptotics(const TrackResult& tr, double k);

// Third derivative of Im lambda by a least-squares cubic in the glued parameter.
double cubic_fit_third(const std::vector<double>& x, const std::vector<double>& y);

void write_spectrum_csv(const FloquetSpectrum& S, const TrackResult& tr, const std::string& path);
void write_figure1_csv(const TrackResult& tr, const std::string& path);

}  // namespace mw
