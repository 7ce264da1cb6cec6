#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "chiplet/errors.hpp"
#include "chiplet/model.hpp"

using namespace chiplet;

namespace {

CapacitanceModel one_term(double a, double c, double delta, CouplingRole role) {
    return CapacitanceModel({{a, c}}, delta, role);
}

// Straight evaluation of the erf-window kernel, independent of the library.
double erf_window(double a, double c, double delta, double r) {
    return a * (std::erf((r + delta) / c) - std::erf((r - delta) / c));
}

DensityField random_density(const Grid2D& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.05, 1.0);
    ScalarField f(g);
    for (std::size_t i = 0; i < g.size(); ++i) f[i] = U(rng);
    return normalize(f);
}

// Brute-force potentials on a small grid: node quadrature with masses m_j.
struct Oracle {
    std::vector<double> ubar, v_cc, v_ce;
    double e_cc = 0.0, e_ce = 0.0;
};

Oracle brute_force(const DensityField& rho, const ControlPolicy& pol, double acc, double ccc, double ace, double cce,
                   double delta) {
    const Grid2D& g = rho.grid();
    const auto m = rho.masses();
    const std::size_t n = g.size();
    auto u = [&](Point p) { return std::clamp(pol.kx * p.x + pol.ky * p.y + pol.offset, pol.u_min, pol.u_max); };
    Oracle o;
    o.ubar.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double r = std::hypot(g.node(i).x - g.node(j).x, g.node(i).y - g.node(j).y);
            const double w = erf_window(ace, cce, delta, r) * m[j];
            num += w * u(g.node(j));
            den += w;
        }
        o.ubar[i] = num / den;
    }
    o.v_cc.assign(n, 0.0);
    o.v_ce.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double r = std::hypot(g.node(i).x - g.node(j).x, g.node(i).y - g.node(j).y);
            const double dcc = o.ubar[j] - o.ubar[i];
            const double dce = u(g.node(j)) - o.ubar[i];
            o.v_cc[i] += 0.5 * erf_window(acc, ccc, delta, r) * dcc * dcc * m[j];
            o.v_ce[i] += 0.5 * erf_window(ace, cce, delta, r) * dce * dce * m[j];
        }
        o.e_cc += m[i] * o.v_cc[i];
        o.e_ce += m[i] * o.v_ce[i];
    }
    return o;
}

}  // namespace

TEST_CASE("capacitance values") {
    const auto c = one_term(1.0, 1.0, 1.0, CouplingRole::ChipletChiplet);
    CHECK(capacitance(c, 0.0) == doctest::Approx(2 * 0.8427007929497149).epsilon(1e-14));
    CHECK(capacitance(c, 0.0) == doctest::Approx(1.685401).epsilon(1e-6));
    CHECK_THROWS_AS(capacitance(c, -0.1), DomainError);

    const auto s = CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletElectrode, 2);
    const double far = s.delta() + 10.0 * s.max_length_scale();
    CHECK(capacitance(s, far + 0.01) < 1e-12);
    double prev = capacitance(s, 0.0);
    for (int k = 1; k <= 2000; ++k) {
        const double r = 0.005 * k;
        const double v = capacitance(s, r);
        CHECK(v <= prev);
        prev = v;
        if (v > 1e-300) CHECK(v > 0.0);
    }
}

TEST_CASE("capacitance log value stays accurate past underflow") {
    const auto c = CapacitanceModel({{0.6, 0.3}, {0.2, 0.1}}, 0.01, CouplingRole::ChipletChiplet);
    for (double r : {0.0, 0.5, 1.0, 2.0, 4.0}) CHECK(c.log_value(r) == doctest::Approx(std::log(c(r))).epsilon(1e-10));
    // Far field: erfc((r - d)/c) - erfc((r + d)/c) ~ exp(-z^2)/(z sqrt(pi)) (1 - e^{-4 r d / c^2}) for the widest term.
    const double r = 12.0, a = 0.6, w = 0.3, d = 0.01;
    const double z = (r - d) / w;
    const double asym = std::log(a) - z * z - std::log(z * std::sqrt(M_PI)) + std::log1p(-std::exp(-4 * r * d / (w * w)));
    CHECK(std::isfinite(c.log_value(r)));
    CHECK(c.log_value(r) == doctest::Approx(asym).epsilon(1e-2));
    CHECK(c.log_value(r + 1.0) < c.log_value(r));
}

TEST_CASE("sampled capacitance is reproducible and in range") {
    const auto a = CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletChiplet, 1);
    const auto b = CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletChiplet, 1);
    REQUIRE(a.terms().size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.terms()[i].amplitude == b.terms()[i].amplitude);
        CHECK(a.terms()[i].length_scale == b.terms()[i].length_scale);
        CHECK(a.terms()[i].amplitude >= 0.0);
        CHECK(a.terms()[i].amplitude < 1.0);
        CHECK(a.terms()[i].length_scale > 0.0);
        CHECK(a.terms()[i].length_scale < 1.0);
    }
    CHECK_THROWS(CapacitanceModel({{1.0, 0.0}}, 0.01, CouplingRole::ChipletChiplet));
    CHECK_THROWS(CapacitanceModel({{1.0, 1.0}}, 0.0, CouplingRole::ChipletChiplet));
    CHECK_THROWS(CapacitanceModel({{0.0, 1.0}}, 0.01, CouplingRole::ChipletChiplet));
}

TEST_CASE("capacitance csv") {
    std::ostringstream out;
    write_capacitance_csv(out, one_term(1.0, 1.0, 1.0, CouplingRole::ChipletChiplet), 2.0, 3);
    CHECK(out.str().rfind("r,value\n0,", 0) == 0);
}

TEST_CASE("linear control") {
    ControlPolicy p{8.5e-3, -1e-2, -400.0, 400.0, 0.0};
    CHECK(eval_control(p, {0, 0}, 0) == 0.0);
    CHECK(eval_control(p, {4, -4}, 0) == doctest::Approx(8.5e-3 * 4 + 1e-2 * 4).epsilon(1e-14));
    CHECK(eval_control(p, {4, -4}, 0) == doctest::Approx(0.074));
    ControlPolicy big{1.0, 0.0, -400.0, 400.0, 0.0};
    CHECK(eval_control(big, {1e6, 0}, 0) == 400.0);
    CHECK(eval_control(big, {-1e6, 0}, 0) == -400.0);
    CHECK_THROWS((ControlPolicy{0, 0, 1.0, -1.0, 0.0}.validate()));
}

TEST_CASE("weighted control average") {
    const Grid2D g(-1, 1, -1, 1, 5, 5);
    const auto ce = one_term(1.0, 0.7, 0.01, CouplingRole::ChipletElectrode);
    std::mt19937_64 rng(11);
    const DensityField rho = random_density(g, rng);

    const ScalarField constant = compute_ubar(rho, ControlPolicy{0, 0, -400, 400, 37.5}, ce, 0.0);
    for (double v : constant.values()) CHECK(v == 37.5);

    const ControlPolicy lin{20.0, -7.0, -400, 400, 3.0};
    std::vector<double> spike(g.size(), 0.0);
    const std::size_t y0 = g.index(3, 1);
    spike[y0] = 1.0;
    const ScalarField one = compute_ubar(density_from_masses(g, spike), lin, ce, 0.0);
    for (double v : one.values()) CHECK(v == doctest::Approx(eval_control(lin, g.node(y0), 0.0)).epsilon(1e-13));

    // Two equal masses at (-0.5, 0) and (0.5, 0); nodes with x = 0 are equidistant.
    std::vector<double> pair(g.size(), 0.0);
    pair[g.index(1, 2)] = 0.5;
    pair[g.index(3, 2)] = 0.5;
    const ScalarField two = compute_ubar(density_from_masses(g, pair), lin, ce, 0.0);
    const double mid = 0.5 * (eval_control(lin, {-0.5, 0}, 0) + eval_control(lin, {0.5, 0}, 0));
    for (int iy = 0; iy < 5; ++iy) CHECK(two.at(2, iy) == doctest::Approx(mid).epsilon(1e-13));
}

TEST_CASE("potentials and energy against a brute-force oracle") {
    const Grid2D g(-1, 1, -1, 1, 3, 3);
    std::mt19937_64 rng(5);
    const DensityField rho = random_density(g, rng);
    const ControlPolicy pol{50.0, -30.0, -400, 400, 10.0};
    const InteractionContext ctx(rho, pol, one_term(1.0, 0.8, 0.01, CouplingRole::ChipletChiplet),
                                 one_term(0.7, 1.3, 0.01, CouplingRole::ChipletElectrode), 0.0);
    const Oracle o = brute_force(rho, pol, 1.0, 0.8, 0.7, 1.3, 0.01);

    for (std::size_t i = 0; i < g.size(); ++i) CHECK(ctx.ubar()[i] == doctest::Approx(o.ubar[i]).epsilon(1e-12));
    const ScalarField v = convolve_potential(ctx);
    const PotentialParts parts = convolve_potential_parts(ctx, rho.masses());
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(parts.cc[i] == doctest::Approx(o.v_cc[i]).epsilon(1e-12));
        CHECK(parts.ce[i] == doctest::Approx(o.v_ce[i]).epsilon(1e-12));
        CHECK(v[i] == doctest::Approx(o.v_cc[i] + o.v_ce[i]).epsilon(1e-12));
    }
    // Pointwise potentials at node pairs reproduce the same numbers.
    const Point x = g.node(0), y = g.node(7);
    const double r = std::hypot(x.x - y.x, x.y - y.y);
    CHECK(phi_cc(x, y, 0, ctx) == doctest::Approx(0.5 * erf_window(1.0, 0.8, 0.01, r) *
                                                  std::pow(o.ubar[7] - o.ubar[0], 2)).epsilon(1e-12));
    CHECK(phi_cc(x, x, 0, ctx) == 0.0);

    // Drift at the centre node: central difference of the oracle potential.
    const VectorField f = drift_field(ctx);
    const double h = g.hx();
    const auto V = [&](int ix, int iy) { return o.v_cc[g.index(ix, iy)] + o.v_ce[g.index(ix, iy)]; };
    CHECK(f.vx[4] == doctest::Approx(-(V(2, 1) - V(0, 1)) / (2 * h)).epsilon(1e-11));
    CHECK(f.vy[4] == doctest::Approx(-(V(1, 2) - V(1, 0)) / (2 * h)).epsilon(1e-11));
}

TEST_CASE("constant control gives zero potential and drift") {
    const Grid2D g = Grid2D::square(4.0, 12);
    std::mt19937_64 rng(8);
    const InteractionContext ctx(random_density(g, rng), ControlPolicy{0, 0, -400, 400, 120.0},
                                 CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletChiplet, 1),
                                 CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletElectrode, 2), 0.0);
    const ScalarField v = convolve_potential(ctx);
    const VectorField f = drift_field(ctx);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(v[i] == 0.0);
        CHECK(f.vx[i] == 0.0);
        CHECK(f.vy[i] == 0.0);
    }
    CHECK(drift_bound_report(ctx) == 0.0);
    CHECK(phi_ce(g.node(3), g.node(50), 0, ctx) == 0.0);
}

TEST_CASE("phi_cc symmetric, potentials nonnegative") {
    const Grid2D g = Grid2D::square(4.0, 10);
    std::mt19937_64 rng(21);
    const InteractionContext ctx(random_density(g, rng), ControlPolicy{30.0, -12.0, -400, 400, 0.0},
                                 CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletChiplet, 1),
                                 CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletElectrode, 2), 0.0);
    std::uniform_real_distribution<double> U(-4.0, 4.0);
    for (int k = 0; k < 1000; ++k) {
        const Point x{U(rng), U(rng)}, y{U(rng), U(rng)};
        const double a = phi_cc(x, y, 0, ctx), b = phi_cc(y, x, 0, ctx);
        CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
        CHECK(a >= 0.0);
        CHECK(phi_ce(x, y, 0, ctx) >= 0.0);
    }
}

TEST_CASE("weighted control stays within the voltage bounds") {
    const Grid2D g = Grid2D::square(4.0, 8);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> gain(-500.0, 500.0), off(-600.0, 600.0);
    for (int k = 0; k < 100; ++k) {
        const ControlPolicy pol{gain(rng), gain(rng), -400, 400, off(rng)};
        const auto ce = CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletElectrode, 100 + k);
        const ScalarField ub = compute_ubar(random_density(g, rng), pol, ce, 0.0);
        for (double v : ub.values()) {
            CHECK(v >= -400.0);
            CHECK(v <= 400.0);
        }
    }
}

TEST_CASE("drift of an x-even potential is odd in x") {
    const Grid2D g = Grid2D::square(2.0, 9);
    const DensityField rho = sample_on_nodes(g, Gaussian2D{{0, 0}, 0.5, 0.0, 0.5});
    const InteractionContext ctx(rho, ControlPolicy{0.0, 40.0, -400, 400, 0.0},
                                 one_term(1.0, 0.9, 0.01, CouplingRole::ChipletChiplet),
                                 one_term(0.5, 1.1, 0.01, CouplingRole::ChipletElectrode), 0.0);
    const VectorField f = drift_field(ctx);
    double scale = 0.0;
    for (double v : f.vx) scale = std::max(scale, std::abs(v));
    for (double v : f.vy) scale = std::max(scale, std::abs(v));
    REQUIRE(scale > 0.0);
    for (int iy = 0; iy < 9; ++iy)
        for (int ix = 0; ix < 9; ++ix) {
            CHECK(std::abs(f.vx[g.index(ix, iy)] + f.vx[g.index(8 - ix, iy)]) <= 1e-10 * scale);
            CHECK(std::abs(f.vy[g.index(ix, iy)] - f.vy[g.index(8 - ix, iy)]) <= 1e-10 * scale);
        }
}

TEST_CASE("drift ignores constant shifts and the bound is finite") {
    const Grid2D g = Grid2D::square(4.0, 10);
    std::mt19937_64 rng(4);
    const DensityField rho = random_density(g, rng);
    const InteractionContext ctx(rho, ControlPolicy{25.0, 10.0, -400, 400, 0.0},
                                 CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletChiplet, 1),
                                 CapacitanceModel::sample(3, 0.01, CouplingRole::ChipletElectrode, 2), 0.0);
    ScalarField v = convolve_potential(ctx);
    const VectorField f = drift_field(ctx);
    for (double& x : v.values()) x += 123.0;
    const VectorField shifted = gradient(v);
    double bound = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(-shifted.vx[i] == doctest::Approx(f.vx[i]).epsilon(1e-8).scale(1e-6));
        CHECK(-shifted.vy[i] == doctest::Approx(f.vy[i]).epsilon(1e-8).scale(1e-6));
        bound = std::max({bound, std::abs(f.vx[i]), std::abs(f.vy[i])});
    }
    CHECK(std::isfinite(drift_bound_report(ctx)));
    CHECK(drift_bound_report(ctx) == bound);

    // The same shape at another overall scale normalizes to the same density.
    ScalarField scaled(g);
    for (std::size_t i = 0; i < g.size(); ++i) scaled[i] = 4.0 * rho[i];
    const InteractionContext again(normalize(scaled), ctx.policy(), ctx.ccap(), ctx.ecap(), 0.0);
    CHECK(drift_bound_report(again) == doctest::Approx(bound).epsilon(1e-12));
}
