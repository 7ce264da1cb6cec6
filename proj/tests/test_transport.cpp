#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "chiplet/errors.hpp"
#include "chiplet/transport.hpp"

using namespace chiplet;

namespace {

DiscreteMeasure random_measure(std::size_t m, std::mt19937_64& rng, bool uniform = false) {
    std::uniform_real_distribution<double> pos(-2.0, 2.0), w(0.1, 1.0);
    DiscreteMeasure mu;
    for (std::size_t i = 0; i < m; ++i) {
        mu.support.push_back({pos(rng), pos(rng)});
        mu.weights.push_back(uniform ? 1.0 : w(rng));
    }
    const double s = std::accumulate(mu.weights.begin(), mu.weights.end(), 0.0);
    for (double& x : mu.weights) x /= s;
    return mu;
}

// Uniform weights, equal sizes: an optimal plan is a permutation.
double permutation_oracle(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    std::vector<std::size_t> perm(a.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            const Point d = a.support[i] - b.support[perm[i]];
            c += (d.x * d.x + d.y * d.y) / static_cast<double>(perm.size());
        }
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// On a line, W2^2 = int_0^1 |F^-1(t) - G^-1(t)|^2 dt (monotone coupling).
double quantile_oracle(std::vector<std::pair<double, double>> a, std::vector<std::pair<double, double>> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double ra = a[0].second, rb = b[0].second, total = 0.0;
    while (i < a.size() && j < b.size()) {
        const double m = std::min(ra, rb);
        total += m * (a[i].first - b[j].first) * (a[i].first - b[j].first);
        ra -= m;
        rb -= m;
        if (ra <= 1e-15 && ++i < a.size()) ra = a[i].second;
        if (rb <= 1e-15 && ++j < b.size()) rb = b[j].second;
    }
    return total;
}

void check_marginals(const TransportPlan& plan, const DiscreteMeasure& a, const DiscreteMeasure& b, double tol) {
    const auto r = plan.row_sums();
    const auto c = plan.col_sums();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(r[i] - a.weights[i]) <= tol);
    for (std::size_t j = 0; j < b.size(); ++j) CHECK(std::abs(c[j] - b.weights[j]) <= tol);
}

}  // namespace

TEST_CASE("cost matrix") {
    const std::vector<Point> o{{0, 0}}, t{{3, 4}};
    CHECK(cost_matrix(o, o)(0, 0) == 0.0);
    CHECK(cost_matrix(o, t)(0, 0) == 25.0);
    const std::vector<Point> a{{0, 0}, {1, 0}}, b{{0, 1}, {2, 2}};
    const Matrix c = cost_matrix(a, b);
    CHECK(c(0, 0) == 1.0);
    CHECK(c(0, 1) == 8.0);
    CHECK(c(1, 0) == 2.0);
    CHECK(c(1, 1) == 5.0);
}

TEST_CASE("exact solver on forced and trivial cases") {
    const DiscreteMeasure a{{{1, 2}}, {1.0}}, b{{{4, 6}}, {1.0}};
    CHECK(exact_w2(a, b).distance == doctest::Approx(5.0).epsilon(1e-14));
    std::mt19937_64 rng(1);
    const DiscreteMeasure mu = random_measure(6, rng);
    const TransportResult self = exact_w2(mu, mu);
    CHECK(self.distance <= 1e-12);
    check_marginals(self.plan, mu, mu, 1e-12);

    const DiscreteMeasure two{{{0, 0}, {1, 0}}, {0.5, 0.5}}, other{{{0, 1}, {2, 2}}, {0.5, 0.5}};
    const double c = exact_w2(two, other).plan.cost;
    CHECK(c == doctest::Approx(std::min(0.5 * (1 + 5), 0.5 * (8 + 2))).epsilon(1e-14));
    CHECK_THROWS_AS(exact_w2(random_measure(9, rng), random_measure(8, rng)), CapacityError);
}

TEST_CASE("exact solver matches permutation enumeration") {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 30; ++k) {
        const std::size_t m = 2 + k % 4;
        const DiscreteMeasure a = random_measure(m, rng, true), b = random_measure(m, rng, true);
        const TransportResult r = exact_w2(a, b);
        CHECK(r.plan.cost == doctest::Approx(permutation_oracle(a, b)).epsilon(1e-12));
        check_marginals(r.plan, a, b, 1e-12);
    }
}

TEST_CASE("exact solver matches the one-dimensional quantile formula") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pos(-3.0, 3.0);
    for (int k = 0; k < 30; ++k) {
        DiscreteMeasure a = random_measure(1 + k % 8, rng), b = random_measure(8 - k % 8, rng);
        std::vector<std::pair<double, double>> la, lb;
        for (std::size_t i = 0; i < a.size(); ++i) {
            a.support[i] = {pos(rng), 0.0};
            la.push_back({a.support[i].x, a.weights[i]});
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
            b.support[i] = {pos(rng), 0.0};
            lb.push_back({b.support[i].x, b.weights[i]});
        }
        CHECK(exact_w2(a, b).plan.cost == doctest::Approx(quantile_oracle(la, lb)).epsilon(1e-10));
    }
}

TEST_CASE("exact solver metric axioms") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) {
        const DiscreteMeasure a = random_measure(4, rng), b = random_measure(5, rng), c = random_measure(3, rng);
        const double ab = exact_w2(a, b).distance, ba = exact_w2(b, a).distance;
        CHECK(std::abs(ab - ba) <= 1e-8);
        CHECK(exact_w2(a, c).distance <= ab + exact_w2(b, c).distance + 1e-8);
    }
}

TEST_CASE("sinkhorn on forced plans and identical measures") {
    const DiscreteMeasure a{{{1, 2}}, {1.0}}, b{{{4, 6}}, {1.0}};
    for (double eps : {1e-3, 0.1, 10.0}) CHECK(std::abs(sinkhorn_w2(a, b, eps).plan.cost - 25.0) <= 1e-6);

    std::mt19937_64 rng(5);
    const DiscreteMeasure mu = random_measure(5, rng);
    const TransportResult self = sinkhorn_w2(mu, mu, 1e-3);
    // Blur bias: off-diagonal mass is bounded by exp(-min gap / eps).
    CHECK(self.plan.cost <= 1e-6);
    check_marginals(self.plan, mu, mu, 1e-8);
}

TEST_CASE("sinkhorn with eps scaling matches the exact solver") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 20; ++k) {
        const DiscreteMeasure a = random_measure(5, rng), b = random_measure(5, rng);
        const TransportResult exact = exact_w2(a, b);
        const Matrix c = cost_matrix(a.support, b.support);
        const double max_cost = *std::max_element(c.data.begin(), c.data.end());
        const TransportResult ent = sinkhorn_w2(a, b, 1e-3 * max_cost);
        CHECK(std::abs(ent.plan.cost - exact.plan.cost) <= 1e-3 * (1 + exact.plan.cost));
        check_marginals(ent.plan, a, b, 1e-8);
        const TransportResult rev = sinkhorn_w2(b, a, 1e-3 * max_cost);
        CHECK(std::abs(rev.plan.cost - ent.plan.cost) <= 1e-6 * (1 + exact.plan.cost));
    }
}

TEST_CASE("entropic plan cost decreases toward the exact value as eps shrinks") {
    std::mt19937_64 rng(7);
    const DiscreteMeasure a = random_measure(6, rng), b = random_measure(7, rng);
    const double exact = exact_w2(a, b).plan.cost;
    double prev = INFINITY;
    for (double eps = 2.0; eps >= 1e-3; eps *= 0.5) {
        const double c = sinkhorn_w2(a, b, eps).plan.cost;
        CHECK(c <= prev + 1e-9);
        CHECK(c >= exact - 1e-9);
        prev = c;
    }
    CHECK(prev - exact <= 1e-3 * (1 + exact));
}

TEST_CASE("sinkhorn reports non-convergence") {
    std::mt19937_64 rng(8);
    const DiscreteMeasure a = random_measure(6, rng), b = random_measure(6, rng);
    SinkhornOptions o;
    o.eps = 1e-4;
    o.eps_scaling = false;
    o.max_iter = 2;
    CHECK_THROWS_AS(sinkhorn_w2(a, b, o), ConvergenceError);
    CHECK_THROWS(sinkhorn_w2(a, b, 0.0));
}

TEST_CASE("entropic objective") {
    TransportPlan p;
    p.coupling = Matrix(1, 2);
    p.coupling(0, 0) = 0.25;
    p.coupling(0, 1) = 0.75;
    Matrix c(1, 2);
    c(0, 0) = 1.0;
    c(0, 1) = 2.0;
    const double expected =
        0.25 + 1.5 + 0.1 * (0.25 * (std::log(0.25) - 1) + 0.75 * (std::log(0.75) - 1));
    CHECK(entropic_objective(p, c, 0.1) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("grid log kernel matches a direct log-sum-exp") {
    const Grid2D g(-1, 2, 0, 1, 7, 4);
    const double eps = 0.3;
    const GridLogKernel k(g, eps);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> U(-5.0, 5.0);
    std::vector<double> in(g.size()), out(g.size());
    for (double& v : in) v = U(rng);
    k.apply(in, out);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double mx = -INFINITY;
        std::vector<double> terms;
        for (std::size_t j = 0; j < g.size(); ++j) {
            const Point d = g.node(i) - g.node(j);
            terms.push_back(in[j] - (d.x * d.x + d.y * d.y) / eps);
            mx = std::max(mx, terms.back());
        }
        double s = 0.0;
        for (double t : terms) s += std::exp(t - mx);
        CHECK(out[i] == doctest::Approx(mx + std::log(s)).epsilon(1e-12));
    }
    // Lattice variance: sum k^2 h^2 w_k / sum w_k with w_k = exp(-(k h)^2 / eps).
    double num = 0.0, den = 0.0;
    for (int d = -6; d <= 6; ++d) {
        const double w = std::exp(-(d * g.hx()) * (d * g.hx()) / eps);
        num += w * d * d * g.hx() * g.hx();
        den += w;
    }
    CHECK(k.lattice_variance_x() == doctest::Approx(num / den).epsilon(1e-6));
}

TEST_CASE("grid sinkhorn agrees with the dense solver") {
    const Grid2D g(0, 1, 0, 1, 5, 5);
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> U(0.1, 1.0);
    std::vector<double> a(g.size()), b(g.size());
    for (double& v : a) v = U(rng);
    for (double& v : b) v = U(rng);
    const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
    for (double& v : a) v /= sa;
    for (double& v : b) v /= sb;
    DiscreteMeasure ma, mb;
    for (std::size_t i = 0; i < g.size(); ++i) {
        ma.support.push_back(g.node(i));
        mb.support.push_back(g.node(i));
    }
    ma.weights = a;
    mb.weights = b;
    SinkhornOptions o;
    o.eps = 0.01;
    const GridSinkhornResult grid = sinkhorn_grid(g, a, b, o);
    const TransportResult dense = sinkhorn_w2(ma, mb, o);
    CHECK(grid.cost == doctest::Approx(dense.plan.cost).epsilon(1e-7));
    CHECK(grid.distance == doctest::Approx(std::sqrt(grid.cost)).epsilon(1e-14));
    CHECK(grid.objective == doctest::Approx(entropic_objective(dense.plan, cost_matrix(ma.support, mb.support), 0.01))
                                .epsilon(1e-7));
    CHECK(grid.marginal_error <= 1e-9);
}

TEST_CASE("measure conversion and plan csv") {
    const Grid2D g(0, 1, 0, 1, 3, 3);
    std::vector<double> m(9, 0.0);
    m[0] = 0.25;
    m[8] = 0.75;
    const DiscreteMeasure mu = to_measure(density_from_masses(g, m));
    REQUIRE(mu.size() == 2);
    CHECK(mu.weights[1] == doctest::Approx(0.75));
    CHECK_THROWS((DiscreteMeasure{{{0, 0}}, {0.5}}.validate()));

    const TransportResult r = exact_w2(mu, mu);
    std::ostringstream out;
    write_plan_csv(out, r.plan);
    CHECK(out.str().rfind("i,j,mass\n", 0) == 0);
}
