#pragma once

#include <string>

#include "modwave/common.hpp"

namespace mw {

// Samples at x = n / pts_per_cell, n = 0 .. N*M-1, one column per component.
struct SampledLine {
    int n_cells = 0;
    int pts_per_cell = 0;
    CMat values;

    SampledLine() = default;
    SampledLine(int n, int m, int d = 1);
    int size() const { return n_cells * pts_per_cell; }
    int dim() const { return static_cast<int>(values.cols()); }
    double x(int n) const { return static_cast<double>(n) / pts_per_cell; }
};

// Fiber m holds Fourier coefficients of the periodic part at xi_m, component
// major; coefficient idx of a component is periodic mode j = idx - M/2.
struct BlochField {
    int n_cells = 0;
    int pts_per_cell = 0;
    int d = 1;
    std::vector<double> xi;
    std::vector<CVec> fibers;
};

double xi_of(int m, int n_cells);
int mode_of(int idx, int pts_per_cell);
int index_of_mode(int j, int pts_per_cell);
int center_fiber(int n_cells);

BlochField forward_bloch(const SampledLine& g);
SampledLine inverse_bloch(const BlochField& G);
BlochField apply_fiberwise(const BlochField& G, const std::function<CMat(double)>& fiber_op);
BlochField zero_field(int n_cells, int pts_per_cell, int d = 1);

// p = INFINITY selects the sup norm; inner norm is over x in (0,1), outer over xi.
double mixed_norm(const BlochField& G, double p_outer, double p_inner);

// Discrete L^p norm on the line with cell-normalized weight 1/M per sample.
double lp_norm(const SampledLine& g, double p);
SampledLine line_derivative(const SampledLine& g, int order = 1);

// Periodic part of a fiber evaluated on the M sample points of one cell.
CMat fiber_samples(const CVec& fiber, int pts_per_cell, int d);

void write_bloch_csv(const BlochField& G, const std::string& path);

}  // namespace mw
