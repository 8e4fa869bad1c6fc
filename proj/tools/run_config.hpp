#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "modwave/dynamics.hpp"
#include "modwave/stability.hpp"
#include "modwave/whitham.hpp"

namespace mw::cli {

using nlohmann::json;

// Unknown keys are configuration errors, so typos never fall back to defaults silently.
void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where);

struct WaveSpec {
    json source;
    WaveProfile wave;
};

ProfileOptions profile_options_from_json(const json& j);
json profile_options_to_json(const ProfileOptions& o);

// Builds the wave and returns the materialized description (defaults filled in).
WaveSpec wave_from_json(const SystemSpec& sys, const json& j, const ProfileOptions& popt, const std::string& base_dir);

struct TimeGrid {
    std::vector<double> times;
    json source;
};
TimeGrid times_from_json(const json& j);

struct DataSpec {
    std::string shape = "gaussian";
    double amplitude = 1.0;
    double center = -1.0;  // negative: middle of the domain
    double width = 2.0;
    int component = 0;
    int modes = 6;
};
DataSpec data_from_json(const json& j);
json data_to_json(const DataSpec& d);
// Perturbation W0 on the line; random shapes draw from the seed.
SampledLine make_data(const DataSpec& d, int n_cells, int pts, int dim, std::uint64_t seed);

struct SimulateConfig {
    std::string mode = "linear";
    int n_cells = 64;
    int pts_per_cell = 33;
    TimeGrid times;
    DataSpec data;
    LinearOptions linear;
    NonlinearOptions nonlinear;
    std::vector<std::string> sm_norms;
    double sm_xi_cut = kPi / 8;
    std::string fit_series;
    double fit_t0 = 0.0;
    double fit_t1 = 0.0;
    double drift_tol = 0.05;
    bool has_expect = false;
    double expect_min = 0.0;
    double expect_max = 0.0;
    std::string save_states = "final";
};
SimulateConfig simulate_from_json(const json& j);
json simulate_to_json(const SimulateConfig& c);

struct WhithamConfig {
    TabulationOptions tabulation;
    bool spectral_check = true;
    double speed_tol = 1e-3;
    int n_cells = 32;
    int pts_per_cell = 33;
    std::string psi_shape = "none";
    double psi_amplitude = 0.25;
    double psi_sharpness = 3.0;
    DataSpec bump;
    bool solve = false;
    TimeGrid times;
    WhithamOptions solver;
    bool compare = false;
    double p = 2.0;
    double fit_t0 = 0.0;
    double fit_t1 = 0.0;
};
WhithamConfig whitham_from_json(const json& j);
json whitham_to_json(const WhithamConfig& c);

}  // namespace mw::cli
