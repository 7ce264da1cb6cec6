#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "chiplet/grid.hpp"

namespace chiplet {

struct DiscreteMeasure {
    std::vector<Point> support;  // mm
    std::vector<double> weights;

    std::size_t size() const { return support.size(); }
    // Nonnegative weights summing to 1 (within 1e-12) on finite points.
    void validate() const;
};

// Node masses of a grid density as a discrete measure; nodes with zero mass
// are dropped.
DiscreteMeasure to_measure(const DensityField& density);

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double v = 0.0) : rows(r), cols(c), data(r * c, v) {}
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
};

struct TransportPlan {
    Matrix coupling;
    double cost = 0.0;  // sum of coupling * squared distance

    std::vector<double> row_sums() const;
    std::vector<double> col_sums() const;
};

struct TransportResult {
    double distance = 0.0;  // W = sqrt(plan.cost)
    TransportPlan plan;
};

// Squared Euclidean distances C_ij = |a_i - b_j|^2.
Matrix cost_matrix(std::span<const Point> a, std::span<const Point> b);

// Exact optimal transport by successive shortest augmenting paths. Oracle
// scale only: throws CapacityError when a.size() * b.size() > 64.
TransportResult exact_w2(const DiscreteMeasure& a, const DiscreteMeasure& b);

struct SinkhornOptions {
    double eps = 1e-3;            // absolute regularization, mm^2
    double tol = 1e-9;            // L1 marginal violation
    long max_iter = 100000;       // per eps stage
    bool eps_scaling = true;      // geometric schedule from max cost / 10
    double scaling_factor = 0.5;
};

// Entropic transport solved by log-domain scaling iterations. The returned
// plan minimizes <C,P> + eps * sum P (log P - 1); `cost` excludes the entropy.
// Throws ConvergenceError if the marginals are not met within max_iter.
TransportResult sinkhorn_w2(const DiscreteMeasure& a, const DiscreteMeasure& b, const SinkhornOptions& options);
TransportResult sinkhorn_w2(const DiscreteMeasure& a, const DiscreteMeasure& b, double eps, double tol = 1e-9,
                            long max_iter = 100000);

// <C,P> + eps * sum P (log P - 1), with 0 log 0 = 0.
double entropic_objective(const TransportPlan& plan, const Matrix& cost, double eps);

// Applies out_i = logsumexp_j(in_j - |x_i - x_j|^2 / eps) over grid nodes,
// one axis at a time (the squared distance separates over x and y).
class GridLogKernel {
public:
    GridLogKernel(const Grid2D& grid, double eps);

    const Grid2D& grid() const { return grid_; }
    double eps() const { return eps_; }
    void apply(std::span<const double> in, std::span<double> out) const;
    // Per-axis variance of the normalized lattice kernel exp(-(k h)^2 / eps).
    double lattice_variance_x() const { return var_x_; }
    double lattice_variance_y() const { return var_y_; }

private:
    Grid2D grid_;
    double eps_;
    std::vector<double> kx_;  // -(dx)^2/eps for |ix - jx|
    std::vector<double> ky_;
    double var_x_;
    double var_y_;
};

struct GridSinkhornResult {
    double cost = 0.0;        // <C,P>
    double distance = 0.0;    // sqrt(cost)
    double objective = 0.0;   // <C,P> + eps * sum P (log P - 1) at the final eps
    double marginal_error = 0.0;
    long iterations = 0;
};

// Entropic transport between two sets of node masses on the same grid, with
// the same eps-scaling schedule as sinkhorn_w2 but separable kernel products.
GridSinkhornResult sinkhorn_grid(const Grid2D& grid, std::span<const double> a, std::span<const double> b,
                                 const SinkhornOptions& options);

// CSV `i,j,mass` listing the nonzero plan entries.
void write_plan_csv(std::ostream& out, const TransportPlan& plan);

}  // namespace chiplet
