#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chiplet/grid.hpp"
#include "chiplet/model.hpp"
#include "chiplet/particles.hpp"

namespace chiplet {

// Throughout, beta = +inf is the deterministic limit: no entropy term and no
// diffusion.

struct EnergyBreakdown {
    double phi_cc = 0.0;
    double phi_ce = 0.0;
    double internal = 0.0;  // beta^-1 * sum p_i log rho_i
    double total = 0.0;
};

enum class Scheme { Jko, ExplicitFd };

std::string to_string(Scheme s);
// Accepts "jko" and "explicit_fd"; throws ConfigError otherwise.
Scheme parse_scheme(const std::string& name);

// Per-step solver report.
struct StepDiagnostics {
    double t = 0.0;
    long iterations = 0;           // JKO inner iterations (0 for explicit)
    double marginal_error = 0.0;   // JKO row-marginal L1 violation
    double eps = 0.0;              // JKO regularization
    double diffusion = 0.0;        // JKO temperature actually used in the inner problem
    double clipped_mass = 0.0;     // explicit: mass removed by clipping negatives
};

struct FlowState {
    DensityField density;
    double t = 0.0;
    std::vector<std::pair<double, EnergyBreakdown>> energy_history;
    Scheme scheme = Scheme::Jko;
    std::vector<StepDiagnostics> steps;
    // JKO warm start: log dual field of the last step (empty before the first).
    std::vector<double> jko_dual;
};

// Phi(rho) with double node quadrature. ctx supplies ubar and the control, so
// pass a context built from `density` to get Phi(density) itself.
EnergyBreakdown energy(const DensityField& density, const InteractionContext& ctx, double beta);

// rho * phi + beta^-1 (1 + log rho), with rho floored at 1e-300.
ScalarField free_energy_derivative(const DensityField& density, const InteractionContext& ctx, double beta);

struct ExplicitOptions {
    // Negative control: reverses every face flux (drift and diffusion).
    bool flip_flux_sign = false;
};

// Largest stable explicit step h^2 / (4 beta^-1 + h max|f|), h = min(hx, hy).
double explicit_stable_dt(const InteractionContext& ctx, double beta);

// Conservative node-centred finite-volume step with no-flux boundaries:
// central drift flux from face potential differences, 5-point diffusion.
// Negative values are clipped (mass recorded in the diagnostics) and the
// result renormalized. Throws ConfigError("dt") above explicit_stable_dt.
FlowState explicit_fd_step(const FlowState& state, const InteractionContext& ctx, double beta, double dt,
                           const ExplicitOptions& options = {});

struct JkoOptions {
    double eps = 0.0;  // <= 0 selects default_jko_eps
    double tol = 1e-9;
    long max_iter = 100000;
    // Lower the inner temperature by the kernel's own spreading per step.
    bool compensate_blur = true;
};

// Default regularization max(3.6 tau beta^-1, h^2), h = max(hx, hy).
double default_jko_eps(const Grid2D& grid, double beta, double tau);

// Temperature used in the inner problem: beta^-1 - v/(2 tau), v the per-axis
// variance of the lattice kernel exp(-|x-y|^2/eps), floored at 0.
double jko_inner_diffusion(const Grid2D& grid, double beta, double tau, double eps, bool compensate);

struct JkoResult {
    DensityField density;
    StepDiagnostics diagnostics;
    std::vector<double> dual;  // log scaling field, reusable as a warm start
};

// One proximal step: minimizes over rho the objective
//   1/2 min_P (<C,P> + eps sum P (log P - 1)) + tau sum_j p_j (V_j + D log rho_j),
// P coupling prev to rho, V = prev * phi frozen, D from jko_inner_diffusion.
// Throws ConvergenceError if the row marginals do not reach tol.
JkoResult jko_step(const DensityField& prev, const InteractionContext& ctx, double beta, double tau,
                   const JkoOptions& options = {}, std::span<const double> warm_dual = {});
DensityField jko_step(const DensityField& prev, const InteractionContext& ctx, double beta, double tau, double eps,
                      double tol);

// The objective minimized by jko_step, evaluated at a candidate density.
double jko_objective(const DensityField& candidate, const DensityField& prev, const InteractionContext& ctx,
                     double beta, double tau, const JkoOptions& options = {});

struct FlowOptions {
    JkoOptions jko;
    ExplicitOptions explicit_fd;
};

using FlowRecorder = std::function<void(std::size_t step, const FlowState& state)>;

// Steps the flow `steps` times with tau (JKO) or dt (explicit). A fresh
// context is built from the current density for every step; the energy of
// each new density is recorded with its own context.
FlowState run_flow(const DensityField& initial, std::shared_ptr<const InteractionKernels> kernels,
                   const ControlPolicy& policy, double beta, Scheme scheme, double tau_or_dt, std::size_t steps,
                   const FlowOptions& options = {}, const FlowRecorder& recorder = {});

struct LyapunovReport {
    bool pass = true;
    std::vector<std::size_t> violations;  // indices k with Phi_k > Phi_{k-1} + tol
    double max_increase = 0.0;
};

// Flags Phi_k > Phi_{k-1} + 1e-8 (1 + |Phi_{k-1}|). Needs >= 2 entries.
LyapunovReport lyapunov_check(const FlowState& state);
LyapunovReport lyapunov_check(std::span<const double> totals);

// Weighted L1 over interior nodes of (rho_k - rho_{k-1})/dt - div(rho_{k-1} grad dPhi/drho),
// with central differences and dPhi/drho taken at rho_{k-1}.
double gradient_flow_residual(const DensityField& prev, const DensityField& next, double dt,
                              const InteractionContext& ctx_prev, double beta);

// Entropic W2 between the particle histogram and the PDE node masses.
double particle_consistency_metric(const ParticleEnsemble& ensemble, const DensityField& pde_density,
                                   const Grid2D& grid, double eps);

// CSV `step,t,phi_cc,phi_ce,internal,total`.
void write_energy_csv(std::ostream& out, const FlowState& state);

}  // namespace chiplet
