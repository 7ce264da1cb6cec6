#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "chiplet/grid.hpp"
#include "chiplet/meanfield.hpp"
#include "chiplet/model.hpp"
#include "chiplet/particles.hpp"

namespace chiplet {

struct CapacitanceConfig {
    int terms = 3;
    std::uint64_t seed = 1;
    // Explicit parameters; when non-empty they replace sampling and must have
    // `terms` entries each.
    std::vector<double> amplitudes;
    std::vector<double> length_scales;
};

struct RunConfig {
    double x_min = -4.0, x_max = 4.0, y_min = -4.0, y_max = 4.0;  // mm
    int nx = 20, ny = 20;
    double beta = 1.0;  // +inf for the deterministic limit ("inf" in JSON)
    Scheme scheme = Scheme::Jko;

    // flow
    double tau = 0.1;
    double dt = 0.0;  // explicit step; 0 = half the stability bound at t = 0
    int steps = 100;
    double jko_eps = 0.0;  // 0 = default rule
    double jko_tol = 1e-9;
    long jko_max_iter = 100000;
    int snapshot_every = 10;

    ControlPolicy control{8.5e-3, -1e-2, -400.0, 400.0, 0.0};
    double delta = 0.01;  // mm
    CapacitanceConfig cc{3, 1, {}, {}};
    CapacitanceConfig ce{3, 2, {}, {}};

    Gaussian2D initial{{0.5, 0.5}, 0.1, 0.0, 0.1};

    // particles
    int particles_n = 1000;
    double particles_dt = 0.01;
    int particles_steps = 100;
    DriftMode drift_mode = DriftMode::MeanField;
    double fd_step = 1e-3;
    std::vector<int> n_sweep;  // empty: just particles_n
    int seeds = 1;             // replicate seeds master, master + 1, ...
    int record_every = 10;
    double metric_eps = 0.0;  // 0 = h^2 / 4

    std::uint64_t seed = 0;  // master seed
    std::string output = "out";

    Grid2D grid() const;
    CapacitanceModel ccap() const;
    CapacitanceModel ecap() const;
    std::shared_ptr<const InteractionKernels> kernels() const;

    // Checks every numeric constraint; throws ConfigError naming the field.
    void validate() const;
};

// Parses and validates a JSON config. Unknown keys are rejected. A run
// manifest is also accepted; its resolved config is used.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& json_text);

// Fully materialized config as JSON text; parse_config_text round-trips it.
std::string config_to_json(const RunConfig& cfg, int indent = 2);

}  // namespace chiplet
