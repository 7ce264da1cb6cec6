#include "chiplet/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"
#include "chiplet/parallel.hpp"

namespace chiplet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_or_neg_inf(double v) { return v > 0.0 ? std::log(v) : -kInf; }

template <typename F>
double logsumexp(std::size_t n, F&& term) {
    double m = -kInf;
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, term(k));
    if (m == -kInf) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += std::exp(term(k) - m);
    return m + std::log(s);
}

std::vector<double> eps_schedule(double max_cost, const SinkhornOptions& o) {
    std::vector<double> out;
    if (o.eps_scaling) {
        if (!(o.scaling_factor > 0.0 && o.scaling_factor < 1.0)) {
            throw ConfigError("scaling_factor", "must lie in (0, 1)");
        }
        for (double e = max_cost / 10.0; e > o.eps; e *= o.scaling_factor) out.push_back(e);
    }
    out.push_back(o.eps);
    return out;
}

void check_options(const SinkhornOptions& o) {
    if (!(o.eps > 0.0) || !std::isfinite(o.eps)) throw ConfigError("eps", "must be positive");
    if (!(o.tol > 0.0)) throw ConfigError("tol", "must be positive");
    if (o.max_iter < 1) throw ConfigError("max_iter", "must be at least 1");
}

// Looser target for warm-up stages; only the last stage must meet `tol`.
double stage_tol(const SinkhornOptions& o, bool last) { return last ? o.tol : std::max(o.tol, 1e-6); }

}  // namespace

void DiscreteMeasure::validate() const {
    if (support.empty()) throw ValidationError("measure has no support points");
    if (support.size() != weights.size()) throw ValidationError("measure support and weights differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!std::isfinite(support[i].x) || !std::isfinite(support[i].y)) {
            throw ValidationError("measure support must be finite");
        }
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
            throw ValidationError("measure weights must be finite and nonnegative");
        }
        total += weights[i];
    }
    if (std::abs(total - 1.0) > 1e-12) throw ValidationError("measure weights must sum to 1");
}

DiscreteMeasure to_measure(const DensityField& density) {
    DiscreteMeasure m;
    const auto p = density.masses();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        m.support.push_back(density.grid().node(i));
        m.weights.push_back(p[i]);
        total += p[i];
    }
    for (auto& w : m.weights) w /= total;
    return m;
}

std::vector<double> TransportPlan::row_sums() const {
    std::vector<double> r(coupling.rows, 0.0);
    for (std::size_t i = 0; i < coupling.rows; ++i)
        for (std::size_t j = 0; j < coupling.cols; ++j) r[i] += coupling(i, j);
    return r;
}

std::vector<double> TransportPlan::col_sums() const {
    std::vector<double> c(coupling.cols, 0.0);
    for (std::size_t i = 0; i < coupling.rows; ++i)
        for (std::size_t j = 0; j < coupling.cols; ++j) c[j] += coupling(i, j);
    return c;
}

Matrix cost_matrix(std::span<const Point> a, std::span<const Point> b) {
    Matrix c(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            const double dx = a[i].x - b[j].x;
            const double dy = a[i].y - b[j].y;
            c(i, j) = dx * dx + dy * dy;
        }
    }
    return c;
}

TransportResult exact_w2(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    a.validate();
    b.validate();
    const std::size_t n1 = a.size();
    const std::size_t n2 = b.size();
    if (n1 * n2 > 64) throw CapacityError("exact transport is limited to 64 plan entries");

    const Matrix c = cost_matrix(a.support, b.support);
    Matrix p(n1, n2);
    std::vector<double> supply = a.weights;
    std::vector<double> demand = b.weights;
    constexpr double thr = 1e-15;

    // Residual graph: sources 0..n1-1, sinks n1..n1+n2-1. Forward arcs i->j are
    // uncapacitated with cost C_ij; backward arcs j->i carry the current plan.
    const std::size_t nv = n1 + n2;
    std::vector<double> dist(nv);
    std::vector<long> pred(nv);
    for (int guard = 0;; ++guard) {
        if (guard > 10000) throw ConvergenceError("exact transport did not terminate", 0.0, guard);
        const bool any_supply = std::any_of(supply.begin(), supply.end(), [](double s) { return s > thr; });
        const bool any_demand = std::any_of(demand.begin(), demand.end(), [](double d) { return d > thr; });
        if (!any_supply || !any_demand) break;

        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(pred.begin(), pred.end(), -1);
        for (std::size_t i = 0; i < n1; ++i)
            if (supply[i] > thr) dist[i] = 0.0;
        for (std::size_t pass = 0; pass < nv; ++pass) {
            bool changed = false;
            for (std::size_t i = 0; i < n1; ++i) {
                if (dist[i] == kInf) continue;
                for (std::size_t j = 0; j < n2; ++j) {
                    const double nd = dist[i] + c(i, j);
                    if (nd < dist[n1 + j] - 1e-14) {
                        dist[n1 + j] = nd;
                        pred[n1 + j] = static_cast<long>(i);
                        changed = true;
                    }
                }
            }
            for (std::size_t j = 0; j < n2; ++j) {
                if (dist[n1 + j] == kInf) continue;
                for (std::size_t i = 0; i < n1; ++i) {
                    if (p(i, j) <= thr) continue;
                    const double nd = dist[n1 + j] - c(i, j);
                    if (nd < dist[i] - 1e-14) {
                        dist[i] = nd;
                        pred[i] = static_cast<long>(n1 + j);
                        changed = true;
                    }
                }
            }
            if (!changed) break;
        }

        std::size_t sink = n2;
        for (std::size_t j = 0; j < n2; ++j) {
            if (demand[j] > thr && dist[n1 + j] < kInf && (sink == n2 || dist[n1 + j] < dist[n1 + sink])) sink = j;
        }
        if (sink == n2) break;

        // Walk back to the source, collecting the bottleneck.
        std::vector<std::size_t> path{n1 + sink};
        while (pred[path.back()] >= 0) {
            path.push_back(static_cast<std::size_t>(pred[path.back()]));
            if (path.size() > nv + 1) throw ConvergenceError("exact transport found a cycle", 0.0, guard);
        }
        const std::size_t src = path.back();
        double amount = std::min(supply[src], demand[sink]);
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
            const std::size_t to = path[k];
            const std::size_t from = path[k + 1];
            if (from >= n1) amount = std::min(amount, p(to, from - n1));
        }
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
            const std::size_t to = path[k];
            const std::size_t from = path[k + 1];
            if (from < n1) {
                p(from, to - n1) += amount;
            } else {
                p(to, from - n1) = std::max(0.0, p(to, from - n1) - amount);
            }
        }
        supply[src] -= amount;
        demand[sink] -= amount;
    }

    TransportResult r;
    r.plan.coupling = std::move(p);
    for (std::size_t k = 0; k < c.data.size(); ++k) r.plan.cost += r.plan.coupling.data[k] * c.data[k];
    r.distance = std::sqrt(std::max(0.0, r.plan.cost));
    return r;
}

TransportResult sinkhorn_w2(const DiscreteMeasure& a, const DiscreteMeasure& b, const SinkhornOptions& options) {
    a.validate();
    b.validate();
    check_options(options);
    const std::size_t n1 = a.size();
    const std::size_t n2 = b.size();
    const Matrix c = cost_matrix(a.support, b.support);
    const double max_cost = *std::max_element(c.data.begin(), c.data.end());

    std::vector<double> log_a(n1), log_b(n2);
    for (std::size_t i = 0; i < n1; ++i) log_a[i] = log_or_neg_inf(a.weights[i]);
    for (std::size_t j = 0; j < n2; ++j) log_b[j] = log_or_neg_inf(b.weights[j]);

    // Dual potentials f, g in cost units; P_ij = exp((f_i + g_j - C_ij) / eps).
    std::vector<double> f(n1, 0.0), g(n2, 0.0);
    const std::vector<double> schedule = eps_schedule(max_cost, options);
    double eps = schedule.front();
    for (std::size_t s = 0; s < schedule.size(); ++s) {
        eps = schedule[s];
        const bool last = s + 1 == schedule.size();
        const double target = stage_tol(options, last);
        double err = kInf;
        long it = 0;
        for (; it < options.max_iter; ++it) {
            // Row log-sums with the current (g-exact) plan give the violation.
            std::vector<double> lse(n1);
            err = 0.0;
            for (std::size_t i = 0; i < n1; ++i) {
                lse[i] = logsumexp(n2, [&](std::size_t j) { return (g[j] - c(i, j)) / eps; });
                if (a.weights[i] > 0.0) err += std::abs(std::exp(f[i] / eps + lse[i]) - a.weights[i]);
            }
            if (it > 0 && err <= target) break;
            for (std::size_t i = 0; i < n1; ++i) f[i] = eps * (log_a[i] - lse[i]);
            for (std::size_t j = 0; j < n2; ++j) {
                g[j] = eps * (log_b[j] - logsumexp(n1, [&](std::size_t i) { return (f[i] - c(i, j)) / eps; }));
            }
        }
        if (it == options.max_iter) throw ConvergenceError("sinkhorn did not reach the marginal tolerance", err, it);
    }

    TransportResult r;
    r.plan.coupling = Matrix(n1, n2);
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n2; ++j) {
            const double v = std::exp((f[i] + g[j] - c(i, j)) / eps);
            r.plan.coupling(i, j) = std::isfinite(v) ? v : 0.0;
            r.plan.cost += r.plan.coupling(i, j) * c(i, j);
        }
    }
    r.distance = std::sqrt(std::max(0.0, r.plan.cost));
    return r;
}

TransportResult sinkhorn_w2(const DiscreteMeasure& a, const DiscreteMeasure& b, double eps, double tol,
                            long max_iter) {
    SinkhornOptions o;
    o.eps = eps;
    o.tol = tol;
    o.max_iter = max_iter;
    return sinkhorn_w2(a, b, o);
}

double entropic_objective(const TransportPlan& plan, const Matrix& cost, double eps) {
    if (plan.coupling.rows != cost.rows || plan.coupling.cols != cost.cols) {
        throw ValidationError("plan and cost matrix differ in shape");
    }
    double s = 0.0;
    for (std::size_t k = 0; k < cost.data.size(); ++k) {
        const double p = plan.coupling.data[k];
        s += p * cost.data[k];
        if (p > 0.0) s += eps * p * (std::log(p) - 1.0);
    }
    return s;
}

namespace {

std::vector<double> axis_log_kernel(int n, double h, double eps) {
    std::vector<double> k(static_cast<std::size_t>(n));
    for (int d = 0; d < n; ++d) k[d] = -(d * h) * (d * h) / eps;
    return k;
}

// Variance of the normalized weights exp(-(k h)^2 / eps) over all integers k.
double lattice_variance(double h, double eps) {
    double z = 1.0;
    double m2 = 0.0;
    for (int k = 1; k < 100000; ++k) {
        const double w = std::exp(-(k * h) * (k * h) / eps);
        if (w < 1e-300) break;
        z += 2.0 * w;
        m2 += 2.0 * w * (k * h) * (k * h);
    }
    return m2 / z;
}

}  // namespace

GridLogKernel::GridLogKernel(const Grid2D& grid, double eps)
    : grid_(grid),
      eps_(eps),
      kx_(axis_log_kernel(grid.nx(), grid.hx(), eps)),
      ky_(axis_log_kernel(grid.ny(), grid.hy(), eps)),
      var_x_(lattice_variance(grid.hx(), eps)),
      var_y_(lattice_variance(grid.hy(), eps)) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("eps", "must be positive");
}

void GridLogKernel::apply(std::span<const double> in, std::span<double> out) const {
    const int nx = grid_.nx();
    const int ny = grid_.ny();
    if (in.size() != grid_.size() || out.size() != grid_.size()) {
        throw ValidationError("kernel input does not match the grid");
    }
    std::vector<double> t(grid_.size());
    CHIPLET_PARALLEL_FOR
    for (long r = 0; r < static_cast<long>(ny); ++r) {
        const double* row = in.data() + r * nx;
        for (int ix = 0; ix < nx; ++ix) {
            t[r * nx + ix] = logsumexp(static_cast<std::size_t>(nx), [&](std::size_t jx) {
                return row[jx] + kx_[std::abs(ix - static_cast<int>(jx))];
            });
        }
    }
    CHIPLET_PARALLEL_FOR
    for (long iy = 0; iy < static_cast<long>(ny); ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            out[iy * nx + ix] = logsumexp(static_cast<std::size_t>(ny), [&](std::size_t jy) {
                return t[jy * nx + ix] + ky_[std::abs(static_cast<int>(iy) - static_cast<int>(jy))];
            });
        }
    }
}

GridSinkhornResult sinkhorn_grid(const Grid2D& grid, std::span<const double> a, std::span<const double> b,
                                 const SinkhornOptions& options) {
    check_options(options);
    const std::size_t n = grid.size();
    if (a.size() != n || b.size() != n) throw ValidationError("node masses do not match the grid");
    std::vector<double> log_a(n), log_b(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(a[i] >= 0.0) || !(b[i] >= 0.0)) throw ValidationError("node masses must be nonnegative");
        log_a[i] = log_or_neg_inf(a[i]);
        log_b[i] = log_or_neg_inf(b[i]);
    }
    const double lx = grid.x_max() - grid.x_min();
    const double ly = grid.y_max() - grid.y_min();
    const std::vector<double> schedule = eps_schedule(lx * lx + ly * ly, options);

    // Potentials in cost units, as in sinkhorn_w2.
    std::vector<double> f(n, 0.0), g(n, 0.0), la(n), lb(n), lk(n);
    GridSinkhornResult res;
    double eps = schedule.front();
    for (std::size_t s = 0; s < schedule.size(); ++s) {
        eps = schedule[s];
        const GridLogKernel kernel(grid, eps);
        const double target = stage_tol(options, s + 1 == schedule.size());
        double err = kInf;
        long it = 0;
        for (; it < options.max_iter; ++it) {
            for (std::size_t j = 0; j < n; ++j) lb[j] = g[j] / eps;
            kernel.apply(lb, lk);
            err = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (a[i] > 0.0) err += std::abs(std::exp(f[i] / eps + lk[i]) - a[i]);
            }
            if (it > 0 && err <= target) break;
            for (std::size_t i = 0; i < n; ++i) {
                f[i] = eps * (log_a[i] - lk[i]);
                la[i] = f[i] / eps;
            }
            kernel.apply(la, lk);
            for (std::size_t j = 0; j < n; ++j) g[j] = eps * (log_b[j] - lk[j]);
        }
        res.iterations += it;
        res.marginal_error = err;
        if (it == options.max_iter) throw ConvergenceError("sinkhorn did not reach the marginal tolerance", err, it);
    }

    std::vector<double> partial(n, 0.0), partial_h(n, 0.0);
    CHIPLET_PARALLEL_FOR
    for (long i = 0; i < static_cast<long>(n); ++i) {
        if (a[i] <= 0.0) continue;
        const Point xi = grid.node(i);
        double s = 0.0;
        double h = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (b[j] <= 0.0) continue;
            const Point xj = grid.node(j);
            const double c = (xi.x - xj.x) * (xi.x - xj.x) + (xi.y - xj.y) * (xi.y - xj.y);
            const double lp = (f[i] + g[j] - c) / eps;
            const double p = std::exp(lp);
            s += p * c;
            if (p > 0.0) h += p * (lp - 1.0);
        }
        partial[i] = s;
        partial_h[i] = h;
    }
    for (std::size_t i = 0; i < n; ++i) {
        res.cost += partial[i];
        res.objective += partial[i] + eps * partial_h[i];
    }
    res.distance = std::sqrt(std::max(0.0, res.cost));
    return res;
}

void write_plan_csv(std::ostream& out, const TransportPlan& plan) {
    out << "i,j,mass\n";
    for (std::size_t i = 0; i < plan.coupling.rows; ++i) {
        for (std::size_t j = 0; j < plan.coupling.cols; ++j) {
            const double m = plan.coupling(i, j);
            if (m > 0.0) out << i << ',' << j << ',' << format_double(m) << '\n';
        }
    }
}

}  // namespace chiplet
