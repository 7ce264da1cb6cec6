#include "chiplet/validate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "chiplet/config.hpp"
#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"
#include "chiplet/meanfield.hpp"
#include "chiplet/rng.hpp"
#include "chiplet/transport.hpp"
#include "json.hpp"

namespace chiplet {

namespace {

struct Check {
    bool pass;
    std::string detail;
};

double uniform(StreamRng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

DiscreteMeasure random_measure(StreamRng& rng, std::size_t m) {
    DiscreteMeasure d;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        d.support.push_back({uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0)});
        d.weights.push_back(0.05 + rng.uniform());
        total += d.weights.back();
    }
    for (auto& w : d.weights) w /= total;
    return d;
}

double variance_x(const DensityField& d) {
    const auto p = d.masses();
    double m = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) m += p[i] * d.grid().node(i).x;
    double v = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) v += p[i] * (d.grid().node(i).x - m) * (d.grid().node(i).x - m);
    return v;
}

Check capacitance_value() {
    const CapacitanceModel m({{1.0, 1.0}}, 1.0, CouplingRole::ChipletChiplet);
    const double got = m(0.0);
    const double want = 2.0 * std::erf(1.0);
    return {std::abs(got - want) <= 1e-12, "C(0) = " + format_double(got) + ", 2 erf(1) = " + format_double(want)};
}

Check phi_symmetry_and_sign() {
    const RunConfig cfg;
    const Grid2D g = cfg.grid();
    const InteractionContext ctx(cfg.kernels(), project_on_nodes(g, cfg.initial), cfg.control, 0.0);
    StreamRng rng(7, 0, 0);
    double worst = 0.0;
    double min_value = 0.0;
    for (int k = 0; k < 200; ++k) {
        const Point x{uniform(rng, -4.0, 4.0), uniform(rng, -4.0, 4.0)};
        const Point y{uniform(rng, -4.0, 4.0), uniform(rng, -4.0, 4.0)};
        const double a = phi_cc(x, y, 0.0, ctx);
        worst = std::max(worst, std::abs(a - phi_cc(y, x, 0.0, ctx)));
        min_value = std::min({min_value, a, phi_ce(x, y, 0.0, ctx)});
    }
    return {worst <= 1e-12 && min_value >= 0.0,
            "max |phi_cc(x,y) - phi_cc(y,x)| = " + format_double(worst) + ", min potential " + format_double(min_value)};
}

Check constant_control_zero() {
    RunConfig cfg;
    cfg.control = ControlPolicy{0.0, 0.0, -400.0, 400.0, 37.0};
    const Grid2D g = cfg.grid();
    const DensityField rho = project_on_nodes(g, cfg.initial);
    const InteractionContext ctx(cfg.kernels(), rho, cfg.control, 0.0);
    const VectorField f = drift_field(ctx);
    bool zero = true;
    for (std::size_t i = 0; i < g.size(); ++i) zero = zero && f.vx[i] == 0.0 && f.vy[i] == 0.0;
    const EnergyBreakdown e = energy(rho, ctx, cfg.beta);
    return {zero && e.phi_cc == 0.0 && e.phi_ce == 0.0,
            "drift identically zero: " + std::string(zero ? "yes" : "no") + ", interaction energy " +
                format_double(e.phi_cc + e.phi_ce)};
}

Check ubar_bounds() {
    const RunConfig base;
    const Grid2D g = Grid2D::square(4.0, 9);
    StreamRng rng(11, 0, 0);
    for (int k = 0; k < 20; ++k) {
        ControlPolicy p{uniform(rng, -200.0, 200.0), uniform(rng, -200.0, 200.0), -400.0, 400.0,
                        uniform(rng, -100.0, 100.0)};
        std::vector<double> m(g.size());
        double total = 0.0;
        for (auto& v : m) total += (v = rng.uniform());
        for (auto& v : m) v /= total;
        const auto ccap = CapacitanceModel::sample(3, base.delta, CouplingRole::ChipletElectrode, 100 + k);
        const ScalarField ub = compute_ubar(density_from_masses(g, m), p, ccap, 0.0);
        for (double v : ub.values()) {
            if (!(v >= p.u_min && v <= p.u_max)) return {false, "ubar " + format_double(v) + " escapes the bounds"};
        }
    }
    return {true, "20 random configurations stay within [u_min, u_max]"};
}

Check drift_bound() {
    const RunConfig cfg;
    const InteractionContext ctx(cfg.kernels(), project_on_nodes(cfg.grid(), cfg.initial), cfg.control, 0.0);
    const double b = drift_bound_report(ctx);
    return {std::isfinite(b), "max |f| = " + format_double(b)};
}

Check exact_vs_sinkhorn() {
    StreamRng rng(13, 0, 0);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const DiscreteMeasure a = random_measure(rng, 2 + k % 7);
        const DiscreteMeasure b = random_measure(rng, 2 + (k * 3) % 7);
        const double exact = exact_w2(a, b).plan.cost;
        const Matrix c = cost_matrix(a.support, b.support);
        const double max_cost = *std::max_element(c.data.begin(), c.data.end());
        const double approx = sinkhorn_w2(a, b, 1e-4 * max_cost).plan.cost;
        worst = std::max(worst, std::abs(approx - exact) / (1.0 + exact));
    }
    return {worst <= 1e-3, "max relative error " + format_double(worst)};
}

Check metric_axioms() {
    StreamRng rng(17, 0, 0);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const DiscreteMeasure a = random_measure(rng, 4);
        const DiscreteMeasure b = random_measure(rng, 4);
        const DiscreteMeasure c = random_measure(rng, 4);
        const double ab = exact_w2(a, b).distance;
        const double ba = exact_w2(b, a).distance;
        const double bc = exact_w2(b, c).distance;
        const double ac = exact_w2(a, c).distance;
        worst = std::max({worst, std::abs(ab - ba), exact_w2(a, a).distance, ac - ab - bc});
    }
    return {worst <= 1e-8, "worst axiom violation " + format_double(worst)};
}

Check heat_variance(Scheme scheme) {
    const Grid2D g = Grid2D::square(4.0, 31);
    const ControlPolicy constant{0.0, 0.0, -400.0, 400.0, 0.0};
    const RunConfig cfg;
    auto kernels = std::make_shared<const InteractionKernels>(g, cfg.ccap(), cfg.ecap());
    const Gaussian2D g0{{0.0, 0.0}, 0.3, 0.0, 0.3};
    const DensityField rho0 = sample_on_nodes(g, g0);
    const double horizon = 0.2;
    double step = 0.025;
    if (scheme == Scheme::ExplicitFd) {
        const InteractionContext ctx(kernels, rho0, constant, 0.0);
        step = horizon / std::ceil(horizon / (0.5 * explicit_stable_dt(ctx, 1.0)));
    }
    const auto steps = static_cast<std::size_t>(std::lround(horizon / step));
    const FlowState s = run_flow(rho0, kernels, constant, 1.0, scheme, step, steps);
    const double want = 0.3 + 2.0 * horizon;
    const double rel = std::abs(variance_x(s.density) / want - 1.0);
    return {rel <= 1e-2, to_string(scheme) + " variance relative error " + format_double(rel)};
}

Check mass_conservation() {
    const RunConfig cfg;
    const Grid2D g = cfg.grid();
    double worst = 0.0;
    for (Scheme s : {Scheme::Jko, Scheme::ExplicitFd}) {
        const double step = s == Scheme::Jko ? cfg.tau : 0.02;
        run_flow(project_on_nodes(g, cfg.initial), cfg.kernels(), cfg.control, cfg.beta, s, step, 10, {},
                 [&](std::size_t, const FlowState& st) { worst = std::max(worst, std::abs(integrate(st.density.field()) - 1.0)); });
    }
    return {worst <= 1e-9, "max |mass - 1| = " + format_double(worst)};
}

Check lyapunov(Scheme scheme, bool flip) {
    const RunConfig cfg;
    FlowOptions opts;
    opts.explicit_fd.flip_flux_sign = flip;
    const double step = scheme == Scheme::Jko ? cfg.tau : 0.02;
    const FlowState s =
        run_flow(project_on_nodes(cfg.grid(), cfg.initial), cfg.kernels(), cfg.control, cfg.beta, scheme, step, 20, opts);
    const LyapunovReport r = lyapunov_check(s);
    std::string detail = to_string(scheme) + ": " + std::to_string(r.violations.size()) + " increasing steps";
    if (!r.violations.empty()) detail += ", first at step " + std::to_string(r.violations.front());
    return {r.pass, detail};
}

Check uniform_residual() {
    const RunConfig cfg;
    const Grid2D g = cfg.grid();
    const ControlPolicy constant{0.0, 0.0, -400.0, 400.0, 0.0};
    const DensityField u = normalize(ScalarField(g, std::vector<double>(g.size(), 1.0)));
    const InteractionContext ctx(cfg.kernels(), u, constant, 0.0);
    const double r = gradient_flow_residual(u, u, 0.01, ctx, 1.0);
    return {r <= 1e-8, "residual " + format_double(r)};
}

Check particle_determinism() {
    const RunConfig cfg;
    const Grid2D g = cfg.grid();
    const InteractionContext ctx(cfg.kernels(), project_on_nodes(g, cfg.initial), cfg.control, 0.0);
    SdeConfig sde;
    sde.seed = 5;
    auto run = [&] {
        ParticleEnsemble e = reflect_into(init_ensemble(cfg.initial, 200, 5), g);
        for (int k = 0; k < 10; ++k) e = euler_maruyama_step(e, sde, g, &ctx);
        return e;
    };
    const ParticleEnsemble a = run();
    const ParticleEnsemble b = run();
    bool same = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        same = same && a.positions[i].x == b.positions[i].x && a.positions[i].y == b.positions[i].y;
    }
    return {same, same ? "bitwise identical" : "trajectories differ"};
}

Check histogram_mass() {
    const RunConfig cfg;
    const Grid2D g = cfg.grid();
    const ParticleEnsemble e = reflect_into(init_ensemble(cfg.initial, 1000, 3), g);
    const double m = integrate(histogram_density(e, g).field());
    return {std::abs(m - 1.0) <= 1e-9, "histogram mass " + format_double(m)};
}

}  // namespace

std::vector<InvariantResult> run_validation_suite(const ValidationOptions& options) {
    const std::vector<std::pair<std::string, std::function<Check()>>> suite = {
        {"model.capacitance_value", capacitance_value},
        {"model.phi_symmetry_nonnegative", phi_symmetry_and_sign},
        {"model.constant_control_zero_drift", constant_control_zero},
        {"model.ubar_within_bounds", ubar_bounds},
        {"model.drift_bound_finite", drift_bound},
        {"transport.exact_matches_sinkhorn", exact_vs_sinkhorn},
        {"transport.metric_axioms", metric_axioms},
        {"meanfield.heat_variance_jko", [] { return heat_variance(Scheme::Jko); }},
        {"meanfield.heat_variance_explicit", [] { return heat_variance(Scheme::ExplicitFd); }},
        {"meanfield.mass_conservation", mass_conservation},
        {"meanfield.lyapunov_jko", [] { return lyapunov(Scheme::Jko, false); }},
        {"meanfield.lyapunov_explicit", [&] { return lyapunov(Scheme::ExplicitFd, options.flip_flux_sign); }},
        {"meanfield.uniform_residual_zero", uniform_residual},
        {"particles.determinism", particle_determinism},
        {"particles.histogram_mass", histogram_mass},
    };
    std::vector<InvariantResult> out;
    for (const auto& [id, fn] : suite) {
        InvariantResult r{id, false, ""};
        try {
            const Check c = fn();
            r.pass = c.pass;
            r.detail = c.detail;
        } catch (const std::exception& e) {
            r.detail = std::string("threw: ") + e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string validation_report_json(const std::vector<InvariantResult>& results) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    bool all = true;
    for (const auto& r : results) {
        all = all && r.pass;
        list.push_back({{"id", r.id}, {"pass", r.pass}, {"detail", r.detail}});
    }
    nlohmann::ordered_json out;
    out["pass"] = all;
    out["invariants"] = std::move(list);
    return out.dump(2);
}

}  // namespace chiplet
