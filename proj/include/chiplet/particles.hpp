#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "chiplet/grid.hpp"
#include "chiplet/model.hpp"

namespace chiplet {

enum class DriftMode { Empirical, MeanField };

struct ParticleEnsemble {
    std::vector<Point> positions;  // mm
    double t = 0.0;                // s
    std::uint64_t step = 0;        // steps taken; selects the noise stream

    std::size_t size() const { return positions.size(); }
    // n >= 1 and all positions finite.
    void validate() const;
};

struct SdeConfig {
    double dt = 0.01;
    double beta = 1.0;  // +inf switches the noise off
    std::uint64_t seed = 0;
    DriftMode drift_mode = DriftMode::MeanField;
    double fd_step = 1e-3;  // mm, empirical-mode differencing

    void validate() const;
};

// n i.i.d. draws from the Gaussian; particle i uses its own stream, so the
// first k particles do not depend on n.
ParticleEnsemble init_ensemble(const Gaussian2D& sampler, std::size_t n, std::uint64_t seed);

// Empirical potential V(x) = (1/n) sum_j [phi_cc(x, x_j) + phi_ce(x, x_j)],
// with ubar taken from the ensemble instead of a grid density.
double empirical_potential(Point x, const ParticleEnsemble& ens, const ControlPolicy& policy,
                           const CapacitanceModel& ccap, const CapacitanceModel& ecap);

// Empirical capacitance-weighted control average at x.
double empirical_ubar(Point x, const ParticleEnsemble& ens, const ControlPolicy& policy,
                      const CapacitanceModel& ecap);

// -grad V at x by central differences of step fd_step.
Point empirical_drift(Point x, const ParticleEnsemble& ens, const ControlPolicy& policy, const CapacitanceModel& ccap,
                      const CapacitanceModel& ecap, double fd_step);

// One Euler-Maruyama step with mirror reflection at the domain boundary.
// Meanfield mode interpolates drift_field(*ctx); empirical mode uses ctx only
// for its policy and capacitance models. A null ctx means zero drift.
// Throws NumericalBlowup naming the first particle that becomes non-finite.
ParticleEnsemble euler_maruyama_step(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain,
                                     const InteractionContext* ctx);

// Same, with a precomputed grid drift (meanfield mode).
ParticleEnsemble euler_maruyama_step(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain,
                                     const VectorField& drift);

// Mirror a coordinate into [lo, hi].
double reflect(double v, double lo, double hi);

// Mirrors every particle into the domain (e.g. Gaussian tails of a fresh sample).
ParticleEnsemble reflect_into(ParticleEnsemble ens, const Grid2D& domain);

struct EnsembleMoments {
    std::uint64_t step = 0;
    double t = 0.0;
    Point mean;
    double cxx = 0.0, cxy = 0.0, cyy = 0.0;
};

EnsembleMoments moments(const ParticleEnsemble& ens);

// Supplies the interaction context used for the step that starts from `ens`
// (nullptr for zero drift).
using ContextProvider = std::function<std::shared_ptr<const InteractionContext>(const ParticleEnsemble& ens)>;
using EnsembleRecorder = std::function<void(const ParticleEnsemble& ens)>;

struct SimulationResult {
    ParticleEnsemble final;
    std::vector<EnsembleMoments> snapshots;
};

// Runs `steps` steps, calling `recorder` (if set) and storing moments at step
// 0 and every `record_every` steps, and after the last step.
SimulationResult simulate(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain, std::size_t steps,
                          const ContextProvider& context, const EnsembleRecorder& recorder = {},
                          std::size_t record_every = 1);

// Cloud-in-cell deposit: each particle spreads unit/n mass over the four
// nodes of its cell with bilinear weights; node density = mass / node weight.
// Throws DomainError for particles outside the grid.
DensityField histogram_density(const ParticleEnsemble& ens, const Grid2D& grid);

// CSV `step,t,particle_id,x,y`.
void write_particles_header(std::ostream& out);
void write_particles_rows(std::ostream& out, const ParticleEnsemble& ens);

}  // namespace chiplet
