#include "chiplet/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"
#include "chiplet/parallel.hpp"
#include "chiplet/transport.hpp"

namespace chiplet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kDensityFloor = 1e-300;

double diffusion_of(double beta) {
    if (!(beta > 0.0)) throw ConfigError("beta", "must be positive");
    return std::isinf(beta) ? 0.0 : 1.0 / beta;
}

void require_same_grid(const DensityField& d, const InteractionContext& ctx) {
    if (!(d.grid() == ctx.grid())) throw ValidationError("density and context use different grids");
}

double face_length(int i, int n, double h) { return (i == 0 || i == n - 1) ? 0.5 * h : h; }

double max_face_velocity(const Grid2D& g, std::span<const double> v) {
    double m = 0.0;
    for (int iy = 0; iy < g.ny(); ++iy)
        for (int ix = 0; ix + 1 < g.nx(); ++ix)
            m = std::max(m, std::abs(v[g.index(ix + 1, iy)] - v[g.index(ix, iy)]) / g.hx());
    for (int iy = 0; iy + 1 < g.ny(); ++iy)
        for (int ix = 0; ix < g.nx(); ++ix)
            m = std::max(m, std::abs(v[g.index(ix, iy + 1)] - v[g.index(ix, iy)]) / g.hy());
    return m;
}

double stable_dt(const Grid2D& g, std::span<const double> v, double diffusion) {
    const double h = std::min(g.hx(), g.hy());
    const double denom = 4.0 * diffusion + h * max_face_velocity(g, v);
    return denom > 0.0 ? h * h / denom : std::numeric_limits<double>::infinity();
}

struct ExplicitUpdate {
    DensityField density;
    double clipped_mass;
};

ExplicitUpdate explicit_update(const DensityField& rho, const InteractionContext& ctx, double beta, double dt,
                               const ExplicitOptions& options) {
    require_same_grid(rho, ctx);
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt", "must be positive");
    const double diff = diffusion_of(beta);
    const Grid2D& g = rho.grid();
    const ScalarField potential = convolve_potential(ctx);
    const auto v = potential.values();
    const double bound = stable_dt(g, v, diff);
    if (dt > bound * (1.0 + 1e-12)) {
        throw ConfigError("dt", "explicit step " + format_double(dt) + " exceeds the stability bound " +
                                    format_double(bound));
    }
    const double sign = options.flip_flux_sign ? -1.0 : 1.0;
    const auto r = rho.values();
    std::vector<double> net(g.size(), 0.0);  // inflow minus outflow
    for (int iy = 0; iy < g.ny(); ++iy) {
        const double len = face_length(iy, g.ny(), g.hy());
        for (int ix = 0; ix + 1 < g.nx(); ++ix) {
            const std::size_t i = g.index(ix, iy);
            const std::size_t j = g.index(ix + 1, iy);
            const double vel = -(v[j] - v[i]) / g.hx();
            const double flux = sign * len * (0.5 * (r[i] + r[j]) * vel - diff * (r[j] - r[i]) / g.hx());
            net[i] -= flux;
            net[j] += flux;
        }
    }
    for (int iy = 0; iy + 1 < g.ny(); ++iy) {
        for (int ix = 0; ix < g.nx(); ++ix) {
            const double len = face_length(ix, g.nx(), g.hx());
            const std::size_t i = g.index(ix, iy);
            const std::size_t j = g.index(ix, iy + 1);
            const double vel = -(v[j] - v[i]) / g.hy();
            const double flux = sign * len * (0.5 * (r[i] + r[j]) * vel - diff * (r[j] - r[i]) / g.hy());
            net[i] -= flux;
            net[j] += flux;
        }
    }
    ScalarField next(g);
    double clipped = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        next[i] = r[i] + dt * net[i] / g.weight(i);
        if (next[i] < 0.0) {
            clipped -= next[i] * g.weight(i);
            next[i] = 0.0;
        }
    }
    return {normalize(next), clipped};
}

}  // namespace

std::string to_string(Scheme s) { return s == Scheme::Jko ? "jko" : "explicit_fd"; }

Scheme parse_scheme(const std::string& name) {
    if (name == "jko") return Scheme::Jko;
    if (name == "explicit_fd") return Scheme::ExplicitFd;
    throw ConfigError("scheme", "unknown scheme '" + name + "' (expected jko or explicit_fd)");
}

EnergyBreakdown energy(const DensityField& density, const InteractionContext& ctx, double beta) {
    require_same_grid(density, ctx);
    const double diff = diffusion_of(beta);
    const std::vector<double> p = density.masses();
    const PotentialParts parts = convolve_potential_parts(ctx, p);
    EnergyBreakdown e;
    for (std::size_t i = 0; i < p.size(); ++i) {
        e.phi_cc += p[i] * parts.cc[i];
        e.phi_ce += p[i] * parts.ce[i];
        if (diff > 0.0 && p[i] > 0.0) e.internal += p[i] * std::log(density[i]);
    }
    e.internal *= diff;
    e.total = e.phi_cc + e.phi_ce + e.internal;
    return e;
}

ScalarField free_energy_derivative(const DensityField& density, const InteractionContext& ctx, double beta) {
    require_same_grid(density, ctx);
    const double diff = diffusion_of(beta);
    const std::vector<double> p = density.masses();
    const PotentialParts parts = convolve_potential_parts(ctx, p);
    ScalarField out(density.grid());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = parts.cc[i] + parts.ce[i];
        if (diff > 0.0) out[i] += diff * (1.0 + std::log(std::max(density[i], kDensityFloor)));
    }
    return out;
}

double explicit_stable_dt(const InteractionContext& ctx, double beta) {
    const ScalarField v = convolve_potential(ctx);
    return stable_dt(ctx.grid(), v.values(), diffusion_of(beta));
}

FlowState explicit_fd_step(const FlowState& state, const InteractionContext& ctx, double beta, double dt,
                           const ExplicitOptions& options) {
    ExplicitUpdate u = explicit_update(state.density, ctx, beta, dt, options);
    FlowState out = state;
    out.density = std::move(u.density);
    out.t = state.t + dt;
    out.scheme = Scheme::ExplicitFd;
    StepDiagnostics d;
    d.t = out.t;
    d.clipped_mass = u.clipped_mass;
    out.steps.push_back(d);
    return out;
}

double default_jko_eps(const Grid2D& grid, double beta, double tau) {
    const double h = std::max(grid.hx(), grid.hy());
    return std::max(3.6 * tau * diffusion_of(beta), h * h);
}

double jko_inner_diffusion(const Grid2D& grid, double beta, double tau, double eps, bool compensate) {
    const double diff = diffusion_of(beta);
    if (!compensate || diff == 0.0) return diff;
    const GridLogKernel kernel(grid, eps);
    const double v = 0.5 * (kernel.lattice_variance_x() + kernel.lattice_variance_y());
    return std::max(0.0, diff - v / (2.0 * tau));
}

JkoResult jko_step(const DensityField& prev, const InteractionContext& ctx, double beta, double tau,
                   const JkoOptions& options, std::span<const double> warm_dual) {
    require_same_grid(prev, ctx);
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau", "must be positive");
    if (!(options.tol > 0.0)) throw ConfigError("tol", "must be positive");
    const Grid2D& g = prev.grid();
    const std::size_t n = g.size();
    const double eps = options.eps > 0.0 ? options.eps : default_jko_eps(g, beta, tau);
    const double diff = jko_inner_diffusion(g, beta, tau, eps, options.compensate_blur);
    const GridLogKernel kernel(g, eps);
    const ScalarField potential = convolve_potential(ctx);

    // Stationarity of the objective gives P_ij = a_i K_ij b_j with
    //   log b = (-s (V + D) + s D (log A - log K^T a)) / (1 + s D),  s = 2 tau / eps,
    // and a fixed by the row marginal P 1 = q.
    const double s = 2.0 * tau / eps;
    const double gain = s * diff;
    const std::vector<double> q = prev.masses();
    std::vector<double> lq(n), lxi(n), la_weights(n), la(n), lb(n, 0.0), lk(n), kta(n);
    for (std::size_t i = 0; i < n; ++i) {
        lq[i] = q[i] > 0.0 ? std::log(q[i]) : kNegInf;
        lxi[i] = -s * (potential[i] + diff);
        la_weights[i] = std::log(g.weight(i));
    }
    if (warm_dual.size() == n) std::copy(warm_dual.begin(), warm_dual.end(), lb.begin());

    double err = std::numeric_limits<double>::infinity();
    long it = 0;
    for (; it < options.max_iter; ++it) {
        kernel.apply(lb, lk);
        if (it > 0) {
            err = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (q[i] > 0.0) err += std::abs(std::exp(la[i] + lk[i]) - q[i]);
            if (err <= options.tol) break;
        }
        for (std::size_t i = 0; i < n; ++i) la[i] = lq[i] - lk[i];
        kernel.apply(la, kta);
        for (std::size_t j = 0; j < n; ++j) lb[j] = (lxi[j] + gain * (la_weights[j] - kta[j])) / (1.0 + gain);
    }
    if (it == options.max_iter) throw ConvergenceError("JKO inner iteration did not converge", err, it);

    std::vector<double> p(n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        p[j] = std::exp(lb[j] + kta[j]);
        total += p[j];
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw ConvergenceError("JKO step produced no mass", err, it);
    for (auto& v : p) v /= total;

    JkoResult res{density_from_masses(g, p), {}, std::move(lb)};
    res.diagnostics.t = ctx.t() + tau;
    res.diagnostics.iterations = it;
    res.diagnostics.marginal_error = err;
    res.diagnostics.eps = eps;
    res.diagnostics.diffusion = diff;
    return res;
}

DensityField jko_step(const DensityField& prev, const InteractionContext& ctx, double beta, double tau, double eps,
                      double tol) {
    JkoOptions o;
    o.eps = eps;
    o.tol = tol;
    return jko_step(prev, ctx, beta, tau, o).density;
}

double jko_objective(const DensityField& candidate, const DensityField& prev, const InteractionContext& ctx,
                     double beta, double tau, const JkoOptions& options) {
    require_same_grid(prev, ctx);
    require_same_grid(candidate, ctx);
    const Grid2D& g = prev.grid();
    const double eps = options.eps > 0.0 ? options.eps : default_jko_eps(g, beta, tau);
    const double diff = jko_inner_diffusion(g, beta, tau, eps, options.compensate_blur);
    const ScalarField potential = convolve_potential(ctx);
    const std::vector<double> q = prev.masses();
    const std::vector<double> p = candidate.masses();
    SinkhornOptions so;
    so.eps = eps;
    so.tol = 1e-12;
    const GridSinkhornResult ot = sinkhorn_grid(g, q, p, so);
    double inner = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] <= 0.0) continue;
        inner += p[j] * (potential[j] + diff * std::log(candidate[j]));
    }
    return 0.5 * ot.objective + tau * inner;
}

FlowState run_flow(const DensityField& initial, std::shared_ptr<const InteractionKernels> kernels,
                   const ControlPolicy& policy, double beta, Scheme scheme, double tau_or_dt, std::size_t steps,
                   const FlowOptions& options, const FlowRecorder& recorder) {
    if (!(tau_or_dt > 0.0) || !std::isfinite(tau_or_dt)) {
        throw ConfigError(scheme == Scheme::Jko ? "tau" : "dt", "must be positive");
    }
    FlowState state{initial, 0.0, {}, scheme, {}, {}};
    auto ctx = std::make_shared<const InteractionContext>(kernels, state.density, policy, state.t);
    state.energy_history.emplace_back(state.t, energy(state.density, *ctx, beta));
    if (recorder) recorder(0, state);
    for (std::size_t k = 1; k <= steps; ++k) {
        if (scheme == Scheme::Jko) {
            JkoResult r = jko_step(state.density, *ctx, beta, tau_or_dt, options.jko, state.jko_dual);
            state.density = std::move(r.density);
            state.jko_dual = std::move(r.dual);
            state.steps.push_back(r.diagnostics);
        } else {
            ExplicitUpdate u = explicit_update(state.density, *ctx, beta, tau_or_dt, options.explicit_fd);
            state.density = std::move(u.density);
            StepDiagnostics d;
            d.t = state.t + tau_or_dt;
            d.clipped_mass = u.clipped_mass;
            state.steps.push_back(d);
        }
        // Accumulate from the step count to keep t free of summation drift.
        state.t = static_cast<double>(k) * tau_or_dt;
        ctx = std::make_shared<const InteractionContext>(kernels, state.density, policy, state.t);
        state.energy_history.emplace_back(state.t, energy(state.density, *ctx, beta));
        if (recorder) recorder(k, state);
    }
    return state;
}

LyapunovReport lyapunov_check(std::span<const double> totals) {
    if (totals.size() < 2) throw ValidationError("Lyapunov check needs at least two energy values");
    LyapunovReport r;
    r.max_increase = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < totals.size(); ++k) {
        const double inc = totals[k] - totals[k - 1];
        r.max_increase = std::max(r.max_increase, inc);
        if (!(inc <= 1e-8 * (1.0 + std::abs(totals[k - 1])))) r.violations.push_back(k);
    }
    r.pass = r.violations.empty();
    return r;
}

LyapunovReport lyapunov_check(const FlowState& state) {
    std::vector<double> totals;
    totals.reserve(state.energy_history.size());
    for (const auto& [t, e] : state.energy_history) totals.push_back(e.total);
    return lyapunov_check(totals);
}

double gradient_flow_residual(const DensityField& prev, const DensityField& next, double dt,
                              const InteractionContext& ctx_prev, double beta) {
    require_same_grid(prev, ctx_prev);
    if (!(prev.grid() == next.grid())) throw ValidationError("densities use different grids");
    if (!(dt > 0.0)) throw ConfigError("dt", "must be positive");
    const Grid2D& g = prev.grid();
    const VectorField grad = gradient(free_energy_derivative(prev, ctx_prev, beta));
    VectorField flux(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        flux.vx[i] = prev[i] * grad.vx[i];
        flux.vy[i] = prev[i] * grad.vy[i];
    }
    const ScalarField div = divergence(flux);
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!g.is_interior(i)) continue;
        r += g.weight(i) * std::abs((next[i] - prev[i]) / dt - div[i]);
    }
    return r;
}

double particle_consistency_metric(const ParticleEnsemble& ensemble, const DensityField& pde_density,
                                   const Grid2D& grid, double eps) {
    if (!(pde_density.grid() == grid)) throw ValidationError("PDE density uses a different grid");
    const std::vector<double> a = histogram_density(ensemble, grid).masses();
    const std::vector<double> b = pde_density.masses();
    SinkhornOptions o;
    o.eps = eps;
    return sinkhorn_grid(grid, a, b, o).distance;
}

void write_energy_csv(std::ostream& out, const FlowState& state) {
    out << "step,t,phi_cc,phi_ce,internal,total\n";
    for (std::size_t k = 0; k < state.energy_history.size(); ++k) {
        const auto& [t, e] = state.energy_history[k];
        out << k << ',' << format_double(t) << ',' << format_double(e.phi_cc) << ',' << format_double(e.phi_ce)
            << ',' << format_double(e.internal) << ',' << format_double(e.total) << '\n';
    }
}

}  // namespace chiplet
