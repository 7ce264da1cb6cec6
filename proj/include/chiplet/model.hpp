#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include "chiplet/grid.hpp"

namespace chiplet {

enum class CouplingRole { ChipletChiplet, ChipletElectrode };

struct CapacitanceTerm {
    double amplitude = 1.0;     // a_i, dimensionless
    double length_scale = 1.0;  // c_i, mm
};

// Sum of error-function windows
//   C(r) = sum_i a_i [erf((r + delta)/c_i) - erf((r - delta)/c_i)],
// i.e. Gaussian profiles of width c_i averaged over an electrode half pitch delta.
class CapacitanceModel {
public:
    CapacitanceModel(std::vector<CapacitanceTerm> terms, double delta, CouplingRole role);

    // `count` terms with a_i, c_i drawn uniformly from [0, 1) (c_i = 0 is redrawn).
    static CapacitanceModel sample(int count, double delta, CouplingRole role, std::uint64_t seed);

    double operator()(double r) const;
    // log C(r), accurate where C(r) itself underflows to zero.
    double log_value(double r) const;

    const std::vector<CapacitanceTerm>& terms() const { return terms_; }
    double delta() const { return delta_; }
    CouplingRole role() const { return role_; }
    double max_length_scale() const;

private:
    std::vector<CapacitanceTerm> terms_;
    double delta_;
    CouplingRole role_;
};

// Throws DomainError for r < 0.
double capacitance(const CapacitanceModel& model, double r);

// CSV `r,value` sampled at `samples` evenly spaced radii in [0, r_max].
void write_capacitance_csv(std::ostream& out, const CapacitanceModel& model, double r_max, int samples);

// Linear electrode voltage u(x) = clamp(<k, x>, u_min, u_max) in volts; x in mm.
struct ControlPolicy {
    double kx = 0.0;
    double ky = 0.0;
    double u_min = -400.0;
    double u_max = 400.0;
    // Uniform offset; with zero gains gives the constant policy u = offset.
    double offset = 0.0;

    void validate() const;
    bool is_constant() const { return kx == 0.0 && ky == 0.0; }
};

double eval_control(const ControlPolicy& policy, Point x, double t);

// Node-to-node kernel values on a uniform grid. Distances depend only on the
// index offset, so each kernel is tabulated over (|dix|, |diy|).
class KernelTable {
public:
    KernelTable(const Grid2D& grid, const CapacitanceModel& model);

    double value(int dix, int diy) const { return value_[offset(dix, diy)]; }
    double log_value(int dix, int diy) const { return log_value_[offset(dix, diy)]; }

private:
    std::size_t offset(int dix, int diy) const {
        return static_cast<std::size_t>(diy < 0 ? -diy : diy) * nx_ + static_cast<std::size_t>(dix < 0 ? -dix : dix);
    }
    int nx_;
    std::vector<double> value_;
    std::vector<double> log_value_;
};

// Capacitance models bound to a grid, with their tables. Built once per run
// and shared by every InteractionContext on that grid.
class InteractionKernels {
public:
    InteractionKernels(Grid2D grid, CapacitanceModel ccap, CapacitanceModel ecap);

    const Grid2D& grid() const { return grid_; }
    const CapacitanceModel& ccap() const { return ccap_; }
    const CapacitanceModel& ecap() const { return ecap_; }
    const KernelTable& cc() const { return cc_; }
    const KernelTable& ce() const { return ce_; }

private:
    Grid2D grid_;
    CapacitanceModel ccap_;
    CapacitanceModel ecap_;
    KernelTable cc_;
    KernelTable ce_;
};

// Capacitance-weighted average voltage seen at every node,
//   ubar(x) = int C_ce(|x-y|) u(y) rho(y) dy / int C_ce(|x-y|) rho(y) dy,
// by node quadrature. Always inside [u_min, u_max].
ScalarField compute_ubar(const DensityField& density, const ControlPolicy& policy, const InteractionKernels& kernels,
                         double t);
ScalarField compute_ubar(const DensityField& density, const ControlPolicy& policy, const CapacitanceModel& ecap,
                         double t);

// Everything needed to evaluate the controlled interaction potentials for one
// density snapshot. Immutable; ubar is built eagerly.
class InteractionContext {
public:
    InteractionContext(std::shared_ptr<const InteractionKernels> kernels, DensityField density, ControlPolicy policy,
                       double t);
    // Convenience: builds private kernel tables.
    InteractionContext(DensityField density, ControlPolicy policy, CapacitanceModel ccap, CapacitanceModel ecap,
                       double t);

    const DensityField& density() const { return density_; }
    const ControlPolicy& policy() const { return policy_; }
    const CapacitanceModel& ccap() const { return kernels_->ccap(); }
    const CapacitanceModel& ecap() const { return kernels_->ecap(); }
    const InteractionKernels& kernels() const { return *kernels_; }
    std::shared_ptr<const InteractionKernels> kernels_ptr() const { return kernels_; }
    const Grid2D& grid() const { return density_.grid(); }
    double t() const { return t_; }
    const ScalarField& ubar() const { return ubar_; }
    // Control voltage at each node.
    const std::vector<double>& node_control() const { return node_control_; }

    double ubar_at(Point x) const { return interpolate(ubar_, x); }

private:
    std::shared_ptr<const InteractionKernels> kernels_;
    DensityField density_;
    ControlPolicy policy_;
    double t_;
    ScalarField ubar_;
    std::vector<double> node_control_;
};

// Chiplet-to-chiplet potential, 1/2 C_cc(|x-y|) (ubar(y) - ubar(x))^2. Symmetric.
double phi_cc(Point x, Point y, double t, const InteractionContext& ctx);
// Chiplet-to-electrode potential, 1/2 C_ce(|x-y|) (u(y) - ubar(x))^2. Not symmetric.
double phi_ce(Point x, Point y, double t, const InteractionContext& ctx);

// (rho * phi)(x) = int (phi_cc + phi_ce)(x, y) rho(y) dy at every node.
ScalarField convolve_potential(const InteractionContext& ctx);

struct PotentialParts {
    ScalarField cc;
    ScalarField ce;
};

// The two convolution terms separately, against arbitrary node masses (the
// context still supplies ubar and the control).
PotentialParts convolve_potential_parts(const InteractionContext& ctx, std::span<const double> masses);

// f = -grad (rho * phi), by finite differences of the node potential.
VectorField drift_field(const InteractionContext& ctx);

// max over nodes of the sup-norm of the drift.
double drift_bound_report(const InteractionContext& ctx);

}  // namespace chiplet
