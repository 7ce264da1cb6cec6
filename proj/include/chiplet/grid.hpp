#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace chiplet {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
double norm(Point p);

// Uniform node-centred grid on [x_min, x_max] x [y_min, y_max] (mm).
// Nodes are ordered row-major: index = iy * nx + ix.
class Grid2D {
public:
    Grid2D(double x_min, double x_max, double y_min, double y_max, int nx, int ny);

    // The square [-half_width, half_width]^2 with n nodes per axis.
    static Grid2D square(double half_width, int n);

    double x_min() const { return x_min_; }
    double x_max() const { return x_max_; }
    double y_min() const { return y_min_; }
    double y_max() const { return y_max_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    double hx() const { return hx_; }
    double hy() const { return hy_; }
    std::size_t size() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }

    std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy) * nx_ + ix; }
    int ix_of(std::size_t i) const { return static_cast<int>(i % nx_); }
    int iy_of(std::size_t i) const { return static_cast<int>(i / nx_); }
    double x(int ix) const { return ix == nx_ - 1 ? x_max_ : x_min_ + ix * hx_; }
    double y(int iy) const { return iy == ny_ - 1 ? y_max_ : y_min_ + iy * hy_; }
    Point node(std::size_t i) const { return {x(ix_of(i)), y(iy_of(i))}; }

    // Trapezoidal quadrature weight of a node; equals the area of its dual cell.
    double weight(std::size_t i) const;
    const std::vector<double>& weights() const { return weights_; }
    double area() const { return (x_max_ - x_min_) * (y_max_ - y_min_); }

    bool contains(Point p, double slack = 1e-12) const;
    bool is_interior(std::size_t i) const;

    bool operator==(const Grid2D& other) const;

private:
    double x_min_, x_max_, y_min_, y_max_;
    int nx_, ny_;
    double hx_, hy_;
    std::vector<double> weights_;
};

class ScalarField {
public:
    explicit ScalarField(Grid2D grid);
    ScalarField(Grid2D grid, std::vector<double> values);

    const Grid2D& grid() const { return grid_; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(int ix, int iy) const { return values_[grid_.index(ix, iy)]; }
    std::size_t size() const { return values_.size(); }

    bool all_finite() const;

private:
    Grid2D grid_;
    std::vector<double> values_;
};

struct VectorField {
    explicit VectorField(Grid2D g) : grid(std::move(g)), vx(grid.size(), 0.0), vy(grid.size(), 0.0) {}

    Grid2D grid;
    std::vector<double> vx;
    std::vector<double> vy;
};

// Nonnegative node density (mass per mm^2) with unit trapezoidal mass.
class DensityField {
public:
    // Validates nonnegativity and unit mass (within 1e-9); does not rescale.
    explicit DensityField(ScalarField field);

    const Grid2D& grid() const { return field_.grid(); }
    const ScalarField& field() const { return field_; }
    std::span<const double> values() const { return field_.values(); }
    double operator[](std::size_t i) const { return field_[i]; }
    std::size_t size() const { return field_.size(); }

    // Probability mass carried by each node (density times quadrature weight).
    std::vector<double> masses() const;

private:
    ScalarField field_;
};

double integrate(const ScalarField& f);
VectorField gradient(const ScalarField& f);
ScalarField divergence(const VectorField& v);
ScalarField laplacian(const ScalarField& f);

// Bilinear interpolation; throws DomainError outside the grid.
double interpolate(const ScalarField& f, Point p);
Point interpolate(const VectorField& v, Point p);

// Rescales a nonnegative field to unit mass. Throws ValidationError on
// negative or non-finite entries or nonpositive mass.
DensityField normalize(const ScalarField& f);

// Builds a density from per-node probability masses (sum 1).
DensityField density_from_masses(const Grid2D& grid, std::span<const double> masses);

double l1_distance(const DensityField& a, const DensityField& b);

struct Gaussian2D {
    Point mean;
    // Covariance entries (mm^2): xx, xy, yy.
    double cxx = 1.0;
    double cxy = 0.0;
    double cyy = 1.0;

    // Throws ValidationError unless the covariance is symmetric positive definite.
    void validate() const;
    double pdf(Point p) const;
    // Lower Cholesky factor (l11, l21, l22).
    std::array<double, 3> cholesky() const;
};

// Node-sampled Gaussian, renormalized on the grid.
DensityField sample_on_nodes(const Grid2D& grid, const Gaussian2D& g);

// Expected bilinear (cloud-in-cell) deposit of the Gaussian law onto the nodes,
// computed with Gauss-Legendre quadrature of `order` points per cell and axis.
// This is the mean of histogram_density for particles drawn from `g`, up to
// the mass that falls outside the grid (renormalized away).
DensityField project_on_nodes(const Grid2D& grid, const Gaussian2D& g, int order = 8);

// CSV with header `ix,iy,x,y,value`, one row per node, row-major.
void write_csv(std::ostream& out, const ScalarField& f);

}  // namespace chiplet
