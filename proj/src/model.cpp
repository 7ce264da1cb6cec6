#include "chiplet/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"
#include "chiplet/parallel.hpp"

namespace chiplet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log erfc(z); switches to the asymptotic series before erfc underflows.
double log_erfc(double z) {
    if (z < 26.0) return std::log(std::erfc(z));
    const double z2 = z * z;
    const double inv = 1.0 / (2.0 * z2);
    // 1 - 1/(2z^2) + 3/(4z^4) - 15/(8z^6) + 105/(16z^8)
    const double series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    return -z2 - std::log(z * std::sqrt(std::numbers::pi)) + std::log(series);
}

// log[erf((r+delta)/c) - erf((r-delta)/c)]
double log_window(double r, double delta, double c) {
    const double lo = (r - delta) / c;
    const double hi = (r + delta) / c;
    if (lo <= 0.0) return std::log(std::erf(hi) - std::erf(lo));
    const double a = log_erfc(lo);
    const double b = log_erfc(hi);
    return a + std::log1p(-std::exp(b - a));
}

double canonical(std::mt19937_64& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

}  // namespace

CapacitanceModel::CapacitanceModel(std::vector<CapacitanceTerm> terms, double delta, CouplingRole role)
    : terms_(std::move(terms)), delta_(delta), role_(role) {
    if (terms_.empty()) throw ValidationError("capacitance model needs at least one term");
    if (!(delta_ > 0.0) || !std::isfinite(delta_)) throw ValidationError("capacitance delta must be positive");
    bool any_positive = false;
    for (const auto& t : terms_) {
        if (!(t.amplitude >= 0.0) || !std::isfinite(t.amplitude)) {
            throw ValidationError("capacitance amplitudes must be finite and nonnegative");
        }
        if (!(t.length_scale > 0.0) || !std::isfinite(t.length_scale)) {
            throw ValidationError("capacitance length scales must be positive");
        }
        any_positive = any_positive || t.amplitude > 0.0;
    }
    if (!any_positive) throw ValidationError("capacitance model needs a positive amplitude");
}

CapacitanceModel CapacitanceModel::sample(int count, double delta, CouplingRole role, std::uint64_t seed) {
    if (count < 1) throw ValidationError("capacitance term count must be at least 1");
    std::mt19937_64 eng(seed);
    std::vector<CapacitanceTerm> terms;
    for (int i = 0; i < count; ++i) {
        CapacitanceTerm t;
        t.amplitude = canonical(eng);
        do {
            t.length_scale = canonical(eng);
        } while (t.length_scale == 0.0);
        terms.push_back(t);
    }
    if (std::none_of(terms.begin(), terms.end(), [](const auto& t) { return t.amplitude > 0.0; })) {
        terms.front().amplitude = 1.0;
    }
    return CapacitanceModel(std::move(terms), delta, role);
}

double CapacitanceModel::log_value(double r) const {
    if (!(r >= 0.0)) throw DomainError("capacitance is defined for r >= 0");
    double m = kNegInf;
    std::vector<double> parts;
    parts.reserve(terms_.size());
    for (const auto& t : terms_) {
        if (t.amplitude == 0.0) continue;
        parts.push_back(std::log(t.amplitude) + log_window(r, delta_, t.length_scale));
        m = std::max(m, parts.back());
    }
    if (m == kNegInf) return m;
    double s = 0.0;
    for (double p : parts) s += std::exp(p - m);
    return m + std::log(s);
}

double CapacitanceModel::operator()(double r) const { return std::exp(log_value(r)); }

double CapacitanceModel::max_length_scale() const {
    double m = 0.0;
    for (const auto& t : terms_) m = std::max(m, t.length_scale);
    return m;
}

double capacitance(const CapacitanceModel& model, double r) { return model(r); }

void write_capacitance_csv(std::ostream& out, const CapacitanceModel& model, double r_max, int samples) {
    if (samples < 2 || !(r_max > 0.0)) throw ValidationError("capacitance dump needs r_max > 0 and >= 2 samples");
    out << "r,value\n";
    for (int k = 0; k < samples; ++k) {
        const double r = r_max * k / (samples - 1);
        out << format_double(r) << ',' << format_double(model(r)) << '\n';
    }
}

void ControlPolicy::validate() const {
    if (!std::isfinite(kx) || !std::isfinite(ky) || !std::isfinite(offset)) {
        throw ValidationError("control gains must be finite");
    }
    if (!(u_min < u_max)) throw ValidationError("control bounds must satisfy u_min < u_max");
}

double eval_control(const ControlPolicy& policy, Point x, double /*t*/) {
    return std::clamp(policy.kx * x.x + policy.ky * x.y + policy.offset, policy.u_min, policy.u_max);
}

KernelTable::KernelTable(const Grid2D& grid, const CapacitanceModel& model)
    : nx_(grid.nx()), value_(grid.size()), log_value_(grid.size()) {
    for (int dy = 0; dy < grid.ny(); ++dy) {
        for (int dx = 0; dx < grid.nx(); ++dx) {
            const double r = std::hypot(dx * grid.hx(), dy * grid.hy());
            const std::size_t k = offset(dx, dy);
            log_value_[k] = model.log_value(r);
            value_[k] = std::exp(log_value_[k]);
        }
    }
}

InteractionKernels::InteractionKernels(Grid2D grid, CapacitanceModel ccap, CapacitanceModel ecap)
    : grid_(std::move(grid)),
      ccap_(std::move(ccap)),
      ecap_(std::move(ecap)),
      cc_(grid_, ccap_),
      ce_(grid_, ecap_) {}

namespace {

std::vector<double> control_at_nodes(const Grid2D& g, const ControlPolicy& policy, double t) {
    std::vector<double> u(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) u[i] = eval_control(policy, g.node(i), t);
    return u;
}

// Weighted average of u with weights C_ce(|x_i - x_j|) p_j, computed with a
// max shift so that far-field weights never underflow to an empty sum.
ScalarField ubar_from_table(const DensityField& density, const std::vector<double>& u, const ControlPolicy& policy,
                            const KernelTable& ce) {
    const Grid2D& g = density.grid();
    // A uniform voltage averages to itself; return it exactly.
    if (policy.is_constant()) {
        return ScalarField(g, std::vector<double>(g.size(), std::clamp(policy.offset, policy.u_min, policy.u_max)));
    }
    const std::vector<double> p = density.masses();
    std::vector<double> logp(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) logp[j] = p[j] > 0.0 ? std::log(p[j]) : kNegInf;

    ScalarField out(g);
    const long n = static_cast<long>(g.size());
    CHIPLET_PARALLEL_FOR
    for (long i = 0; i < n; ++i) {
        const int ix = g.ix_of(i);
        const int iy = g.iy_of(i);
        double m = kNegInf;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (p[j] <= 0.0) continue;
            m = std::max(m, ce.log_value(g.ix_of(j) - ix, g.iy_of(j) - iy) + logp[j]);
        }
        double num = 0.0;
        double den = 0.0;
        if (m != kNegInf) {
            for (std::size_t j = 0; j < p.size(); ++j) {
                if (p[j] <= 0.0) continue;
                const double w = std::exp(ce.log_value(g.ix_of(j) - ix, g.iy_of(j) - iy) + logp[j] - m);
                num += w * u[j];
                den += w;
            }
        }
        out[i] = std::clamp(num / std::max(den, 1e-15), policy.u_min, policy.u_max);
    }
    return out;
}

}  // namespace

ScalarField compute_ubar(const DensityField& density, const ControlPolicy& policy, const InteractionKernels& kernels,
                         double t) {
    policy.validate();
    if (!(kernels.grid() == density.grid())) throw ValidationError("kernels and density use different grids");
    return ubar_from_table(density, control_at_nodes(density.grid(), policy, t), policy, kernels.ce());
}

ScalarField compute_ubar(const DensityField& density, const ControlPolicy& policy, const CapacitanceModel& ecap,
                         double t) {
    policy.validate();
    const KernelTable ce(density.grid(), ecap);
    return ubar_from_table(density, control_at_nodes(density.grid(), policy, t), policy, ce);
}

InteractionContext::InteractionContext(std::shared_ptr<const InteractionKernels> kernels, DensityField density,
                                       ControlPolicy policy, double t)
    : kernels_(std::move(kernels)),
      density_(std::move(density)),
      policy_(policy),
      t_(t),
      ubar_(density_.grid()),
      node_control_(control_at_nodes(density_.grid(), policy, t)) {
    policy_.validate();
    if (!(kernels_->grid() == density_.grid())) throw ValidationError("kernels and density use different grids");
    ubar_ = ubar_from_table(density_, node_control_, policy_, kernels_->ce());
}

InteractionContext::InteractionContext(DensityField density, ControlPolicy policy, CapacitanceModel ccap,
                                       CapacitanceModel ecap, double t)
    : InteractionContext(std::make_shared<const InteractionKernels>(density.grid(), std::move(ccap), std::move(ecap)),
                         density, policy, t) {}

double phi_cc(Point x, Point y, double /*t*/, const InteractionContext& ctx) {
    const double du = ctx.ubar_at(y) - ctx.ubar_at(x);
    return 0.5 * ctx.ccap()(norm(x - y)) * du * du;
}

double phi_ce(Point x, Point y, double t, const InteractionContext& ctx) {
    const double du = eval_control(ctx.policy(), y, t) - ctx.ubar_at(x);
    return 0.5 * ctx.ecap()(norm(x - y)) * du * du;
}

PotentialParts convolve_potential_parts(const InteractionContext& ctx, std::span<const double> masses) {
    const Grid2D& g = ctx.grid();
    if (masses.size() != g.size()) throw ValidationError("masses do not match the context grid");
    const auto ub = ctx.ubar().values();
    const auto& u = ctx.node_control();
    const KernelTable& cc = ctx.kernels().cc();
    const KernelTable& ce = ctx.kernels().ce();
    PotentialParts out{ScalarField(g), ScalarField(g)};
    if (ctx.policy().is_constant()) return out;
    const long n = static_cast<long>(g.size());
    CHIPLET_PARALLEL_FOR
    for (long i = 0; i < n; ++i) {
        const int ix = g.ix_of(i);
        const int iy = g.iy_of(i);
        double scc = 0.0;
        double sce = 0.0;
        for (std::size_t j = 0; j < masses.size(); ++j) {
            if (masses[j] == 0.0) continue;
            const int dx = g.ix_of(j) - ix;
            const int dy = g.iy_of(j) - iy;
            const double a = ub[j] - ub[i];
            const double b = u[j] - ub[i];
            scc += masses[j] * 0.5 * cc.value(dx, dy) * a * a;
            sce += masses[j] * 0.5 * ce.value(dx, dy) * b * b;
        }
        out.cc[i] = scc;
        out.ce[i] = sce;
    }
    return out;
}

ScalarField convolve_potential(const InteractionContext& ctx) {
    const std::vector<double> p = ctx.density().masses();
    PotentialParts parts = convolve_potential_parts(ctx, p);
    for (std::size_t i = 0; i < parts.cc.size(); ++i) parts.cc[i] += parts.ce[i];
    return parts.cc;
}

VectorField drift_field(const InteractionContext& ctx) {
    VectorField f = gradient(convolve_potential(ctx));
    for (auto& v : f.vx) v = -v;
    for (auto& v : f.vy) v = -v;
    return f;
}

double drift_bound_report(const InteractionContext& ctx) {
    const VectorField f = drift_field(ctx);
    double m = 0.0;
    for (std::size_t i = 0; i < f.vx.size(); ++i) m = std::max({m, std::abs(f.vx[i]), std::abs(f.vy[i])});
    return m;
}

}  // namespace chiplet
