#include "chiplet/particles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"
#include "chiplet/parallel.hpp"
#include "chiplet/rng.hpp"

namespace chiplet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Capacitance-weighted average of u_j over particle positions, max-shifted in
// log space so that far-away evaluation points still get a convex combination.
double weighted_control(Point z, const std::vector<Point>& pos, const std::vector<double>& u,
                        const ControlPolicy& policy, const CapacitanceModel& ecap) {
    if (policy.is_constant()) return std::clamp(policy.offset, policy.u_min, policy.u_max);
    std::vector<double> lw(pos.size());
    double m = kNegInf;
    for (std::size_t j = 0; j < pos.size(); ++j) {
        lw[j] = ecap.log_value(norm(z - pos[j]));
        m = std::max(m, lw[j]);
    }
    if (m == kNegInf) return std::clamp(0.0, policy.u_min, policy.u_max);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t j = 0; j < pos.size(); ++j) {
        const double w = std::exp(lw[j] - m);
        num += w * u[j];
        den += w;
    }
    return std::clamp(num / den, policy.u_min, policy.u_max);
}

// ubar at particle positions and the machinery to evaluate V anywhere.
class EmpiricalField {
public:
    EmpiricalField(const ParticleEnsemble& ens, const ControlPolicy& policy, const CapacitanceModel& ccap,
                   const CapacitanceModel& ecap)
        : ens_(ens), policy_(policy), ccap_(ccap), ecap_(ecap), u_(ens.size()), ubar_(ens.size()) {
        for (std::size_t j = 0; j < ens.size(); ++j) u_[j] = eval_control(policy, ens.positions[j], ens.t);
        const long n = static_cast<long>(ens.size());
        CHIPLET_PARALLEL_FOR
        for (long j = 0; j < n; ++j) ubar_[j] = ubar(ens_.positions[j]);
    }

    double ubar(Point z) const { return weighted_control(z, ens_.positions, u_, policy_, ecap_); }

    double potential(Point x) const {
        if (policy_.is_constant()) return 0.0;
        const double ux = ubar(x);
        double s = 0.0;
        for (std::size_t j = 0; j < ens_.size(); ++j) {
            const double r = norm(x - ens_.positions[j]);
            const double a = ubar_[j] - ux;
            const double b = u_[j] - ux;
            s += 0.5 * (ccap_(r) * a * a + ecap_(r) * b * b);
        }
        return s / static_cast<double>(ens_.size());
    }

    Point drift(Point x, double h) const {
        const double fx = (potential({x.x + h, x.y}) - potential({x.x - h, x.y})) / (2.0 * h);
        const double fy = (potential({x.x, x.y + h}) - potential({x.x, x.y - h})) / (2.0 * h);
        return {-fx, -fy};
    }

private:
    const ParticleEnsemble& ens_;
    const ControlPolicy& policy_;
    const CapacitanceModel& ccap_;
    const CapacitanceModel& ecap_;
    std::vector<double> u_;
    std::vector<double> ubar_;
};

template <typename DriftAt>
ParticleEnsemble advance(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain, DriftAt&& drift_at) {
    cfg.validate();
    ens.validate();
    const double sigma = std::isinf(cfg.beta) ? 0.0 : std::sqrt(2.0 * cfg.dt / cfg.beta);
    ParticleEnsemble out = ens;
    const long n = static_cast<long>(ens.size());
    std::vector<char> bad(ens.size(), 0);
    CHIPLET_PARALLEL_FOR
    for (long i = 0; i < n; ++i) {
        const Point x = ens.positions[i];
        const Point f = drift_at(x);
        double zx = 0.0;
        double zy = 0.0;
        if (sigma > 0.0) {
            StreamRng rng(cfg.seed, static_cast<std::uint64_t>(i), ens.step);
            std::tie(zx, zy) = rng.normal_pair();
        }
        Point y{x.x + f.x * cfg.dt + sigma * zx, x.y + f.y * cfg.dt + sigma * zy};
        if (!std::isfinite(y.x) || !std::isfinite(y.y)) {
            bad[i] = 1;
            continue;
        }
        y.x = reflect(y.x, domain.x_min(), domain.x_max());
        y.y = reflect(y.y, domain.y_min(), domain.y_max());
        out.positions[i] = y;
    }
    for (std::size_t i = 0; i < bad.size(); ++i) {
        if (bad[i]) throw NumericalBlowup(i, "particle " + std::to_string(i) + " position became non-finite");
    }
    out.t = ens.t + cfg.dt;
    out.step = ens.step + 1;
    return out;
}

}  // namespace

void ParticleEnsemble::validate() const {
    if (positions.empty()) throw ValidationError("ensemble must contain at least one particle");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (!std::isfinite(positions[i].x) || !std::isfinite(positions[i].y)) {
            throw ValidationError("particle " + std::to_string(i) + " has a non-finite position");
        }
    }
}

void SdeConfig::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt", "must be positive");
    if (!(beta > 0.0)) throw ConfigError("beta", "must be positive");
    if (!(fd_step > 0.0) || !std::isfinite(fd_step)) throw ConfigError("fd_step", "must be positive");
}

ParticleEnsemble init_ensemble(const Gaussian2D& sampler, std::size_t n, std::uint64_t seed) {
    sampler.validate();
    if (n == 0) throw ValidationError("ensemble size must be at least 1");
    const auto [l11, l21, l22] = sampler.cholesky();
    ParticleEnsemble ens;
    ens.positions.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        StreamRng rng(seed, i, kInitStream);
        const auto [z1, z2] = rng.normal_pair();
        ens.positions[i] = {sampler.mean.x + l11 * z1, sampler.mean.y + l21 * z1 + l22 * z2};
    }
    return ens;
}

double empirical_ubar(Point x, const ParticleEnsemble& ens, const ControlPolicy& policy,
                      const CapacitanceModel& ecap) {
    ens.validate();
    policy.validate();
    std::vector<double> u(ens.size());
    for (std::size_t j = 0; j < ens.size(); ++j) u[j] = eval_control(policy, ens.positions[j], ens.t);
    return weighted_control(x, ens.positions, u, policy, ecap);
}

double empirical_potential(Point x, const ParticleEnsemble& ens, const ControlPolicy& policy,
                           const CapacitanceModel& ccap, const CapacitanceModel& ecap) {
    ens.validate();
    policy.validate();
    return EmpiricalField(ens, policy, ccap, ecap).potential(x);
}

Point empirical_drift(Point x, const ParticleEnsemble& ens, const ControlPolicy& policy, const CapacitanceModel& ccap,
                      const CapacitanceModel& ecap, double fd_step) {
    ens.validate();
    policy.validate();
    if (!(fd_step > 0.0)) throw ConfigError("fd_step", "must be positive");
    return EmpiricalField(ens, policy, ccap, ecap).drift(x, fd_step);
}

double reflect(double v, double lo, double hi) {
    if (v >= lo && v <= hi) return v;
    const double span = hi - lo;
    // Fold into one period of length 2*span, then mirror the upper half.
    double r = std::fmod(v - lo, 2.0 * span);
    if (r < 0.0) r += 2.0 * span;
    return r <= span ? lo + r : hi - (r - span);
}

ParticleEnsemble reflect_into(ParticleEnsemble ens, const Grid2D& domain) {
    for (Point& p : ens.positions) {
        p.x = reflect(p.x, domain.x_min(), domain.x_max());
        p.y = reflect(p.y, domain.y_min(), domain.y_max());
    }
    return ens;
}

ParticleEnsemble euler_maruyama_step(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain,
                                     const VectorField& drift) {
    if (!(drift.grid == domain)) throw ValidationError("drift field and domain use different grids");
    return advance(ens, cfg, domain, [&](Point x) { return interpolate(drift, x); });
}

ParticleEnsemble euler_maruyama_step(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain,
                                     const InteractionContext* ctx) {
    if (ctx == nullptr) return advance(ens, cfg, domain, [](Point) { return Point{}; });
    if (cfg.drift_mode == DriftMode::MeanField) return euler_maruyama_step(ens, cfg, domain, drift_field(*ctx));
    ens.validate();
    const EmpiricalField field(ens, ctx->policy(), ctx->ccap(), ctx->ecap());
    return advance(ens, cfg, domain, [&](Point x) { return field.drift(x, cfg.fd_step); });
}

EnsembleMoments moments(const ParticleEnsemble& ens) {
    ens.validate();
    EnsembleMoments m;
    m.step = ens.step;
    m.t = ens.t;
    const double n = static_cast<double>(ens.size());
    for (const Point& p : ens.positions) {
        m.mean.x += p.x;
        m.mean.y += p.y;
    }
    m.mean.x /= n;
    m.mean.y /= n;
    for (const Point& p : ens.positions) {
        const double dx = p.x - m.mean.x;
        const double dy = p.y - m.mean.y;
        m.cxx += dx * dx;
        m.cxy += dx * dy;
        m.cyy += dy * dy;
    }
    m.cxx /= n;
    m.cxy /= n;
    m.cyy /= n;
    return m;
}

SimulationResult simulate(const ParticleEnsemble& ens, const SdeConfig& cfg, const Grid2D& domain, std::size_t steps,
                          const ContextProvider& context, const EnsembleRecorder& recorder, std::size_t record_every) {
    cfg.validate();
    ens.validate();
    if (record_every == 0) throw ConfigError("record_every", "must be at least 1");
    SimulationResult res;
    res.final = ens;
    auto record = [&](const ParticleEnsemble& e) {
        res.snapshots.push_back(moments(e));
        if (recorder) recorder(e);
    };
    record(res.final);
    for (std::size_t k = 1; k <= steps; ++k) {
        const auto ctx = context ? context(res.final) : nullptr;
        res.final = euler_maruyama_step(res.final, cfg, domain, ctx.get());
        if (k % record_every == 0 || k == steps) record(res.final);
    }
    return res;
}

DensityField histogram_density(const ParticleEnsemble& ens, const Grid2D& grid) {
    ens.validate();
    std::vector<double> mass(grid.size(), 0.0);
    const double share = 1.0 / static_cast<double>(ens.size());
    for (std::size_t k = 0; k < ens.size(); ++k) {
        const Point p = ens.positions[k];
        if (!grid.contains(p)) throw DomainError("particle " + std::to_string(k) + " lies outside the grid");
        const double sx = std::clamp((p.x - grid.x_min()) / grid.hx(), 0.0, static_cast<double>(grid.nx() - 1));
        const double sy = std::clamp((p.y - grid.y_min()) / grid.hy(), 0.0, static_cast<double>(grid.ny() - 1));
        const int ix = std::min(static_cast<int>(sx), grid.nx() - 2);
        const int iy = std::min(static_cast<int>(sy), grid.ny() - 2);
        const double fx = sx - ix;
        const double fy = sy - iy;
        mass[grid.index(ix, iy)] += share * (1.0 - fx) * (1.0 - fy);
        mass[grid.index(ix + 1, iy)] += share * fx * (1.0 - fy);
        mass[grid.index(ix, iy + 1)] += share * (1.0 - fx) * fy;
        mass[grid.index(ix + 1, iy + 1)] += share * fx * fy;
    }
    return density_from_masses(grid, mass);
}

void write_particles_header(std::ostream& out) { out << "step,t,particle_id,x,y\n"; }

void write_particles_rows(std::ostream& out, const ParticleEnsemble& ens) {
    const std::string step = std::to_string(ens.step);
    const std::string t = format_double(ens.t);
    for (std::size_t i = 0; i < ens.size(); ++i) {
        out << step << ',' << t << ',' << i << ',' << format_double(ens.positions[i].x) << ','
            << format_double(ens.positions[i].y) << '\n';
    }
}

}  // namespace chiplet
