#include "chiplet/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include <boost/math/quadrature/gauss.hpp>

#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"

namespace chiplet {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double norm(Point p) { return std::hypot(p.x, p.y); }

Grid2D::Grid2D(double x_min, double x_max, double y_min, double y_max, int nx, int ny)
    : x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max), nx_(nx), ny_(ny) {
    if (!(x_min < x_max) || !(y_min < y_max)) {
        throw ValidationError("grid bounds must satisfy min < max");
    }
    if (nx < 3 || ny < 3) {
        throw ValidationError("grid needs at least 3 nodes per axis");
    }
    hx_ = (x_max - x_min) / (nx - 1);
    hy_ = (y_max - y_min) / (ny - 1);
    weights_.resize(size());
    for (int iy = 0; iy < ny_; ++iy) {
        const double wy = (iy == 0 || iy == ny_ - 1) ? 0.5 * hy_ : hy_;
        for (int ix = 0; ix < nx_; ++ix) {
            const double wx = (ix == 0 || ix == nx_ - 1) ? 0.5 * hx_ : hx_;
            weights_[index(ix, iy)] = wx * wy;
        }
    }
}

Grid2D Grid2D::square(double half_width, int n) {
    return Grid2D(-half_width, half_width, -half_width, half_width, n, n);
}

double Grid2D::weight(std::size_t i) const { return weights_[i]; }

bool Grid2D::contains(Point p, double slack) const {
    const double sx = slack * (x_max_ - x_min_);
    const double sy = slack * (y_max_ - y_min_);
    return p.x >= x_min_ - sx && p.x <= x_max_ + sx && p.y >= y_min_ - sy && p.y <= y_max_ + sy;
}

bool Grid2D::is_interior(std::size_t i) const {
    const int ix = ix_of(i);
    const int iy = iy_of(i);
    return ix > 0 && ix < nx_ - 1 && iy > 0 && iy < ny_ - 1;
}

bool Grid2D::operator==(const Grid2D& o) const {
    return x_min_ == o.x_min_ && x_max_ == o.x_max_ && y_min_ == o.y_min_ && y_max_ == o.y_max_ &&
           nx_ == o.nx_ && ny_ == o.ny_;
}

ScalarField::ScalarField(Grid2D grid) : grid_(std::move(grid)), values_(grid_.size(), 0.0) {}

ScalarField::ScalarField(Grid2D grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
        throw ValidationError("field size does not match grid");
    }
}

bool ScalarField::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

DensityField::DensityField(ScalarField field) : field_(std::move(field)) {
    for (double v : field_.values()) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ValidationError("density must be finite and nonnegative");
        }
    }
    const double mass = integrate(field_);
    if (std::abs(mass - 1.0) > 1e-9) {
        std::ostringstream os;
        os << "density mass is " << mass << ", expected 1";
        throw ValidationError(os.str());
    }
}

std::vector<double> DensityField::masses() const {
    const auto& w = grid().weights();
    std::vector<double> m(size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = field_[i] * w[i];
    return m;
}

double integrate(const ScalarField& f) {
    const auto& w = f.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += w[i] * f[i];
    return s;
}

namespace {

// d/dx along one axis: central inside, second-order one-sided at both ends.
template <class Get>
double axis_derivative(Get get, int i, int n, double h) {
    if (i == 0) return (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h);
    if (i == n - 1) return (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h);
    return (get(i + 1) - get(i - 1)) / (2.0 * h);
}

template <class Get>
double axis_second_derivative(Get get, int i, int n, double h) {
    // The end nodes reuse the neighbouring interior stencil (exact for quadratics).
    const int c = std::clamp(i, 1, n - 2);
    return (get(c + 1) - 2.0 * get(c) + get(c - 1)) / (h * h);
}

double d_dx(std::span<const double> v, const Grid2D& g, int ix, int iy) {
    return axis_derivative([&](int k) { return v[g.index(k, iy)]; }, ix, g.nx(), g.hx());
}

double d_dy(std::span<const double> v, const Grid2D& g, int ix, int iy) {
    return axis_derivative([&](int k) { return v[g.index(ix, k)]; }, iy, g.ny(), g.hy());
}

}  // namespace

VectorField gradient(const ScalarField& f) {
    const Grid2D& g = f.grid();
    VectorField out(g);
    const auto v = f.values();
    for (int iy = 0; iy < g.ny(); ++iy) {
        for (int ix = 0; ix < g.nx(); ++ix) {
            const std::size_t i = g.index(ix, iy);
            out.vx[i] = d_dx(v, g, ix, iy);
            out.vy[i] = d_dy(v, g, ix, iy);
        }
    }
    return out;
}

ScalarField divergence(const VectorField& v) {
    const Grid2D& g = v.grid;
    ScalarField out(g);
    for (int iy = 0; iy < g.ny(); ++iy) {
        for (int ix = 0; ix < g.nx(); ++ix) {
            out[g.index(ix, iy)] = d_dx(v.vx, g, ix, iy) + d_dy(v.vy, g, ix, iy);
        }
    }
    return out;
}

ScalarField laplacian(const ScalarField& f) {
    const Grid2D& g = f.grid();
    ScalarField out(g);
    const auto v = f.values();
    for (int iy = 0; iy < g.ny(); ++iy) {
        for (int ix = 0; ix < g.nx(); ++ix) {
            const double fxx = axis_second_derivative([&](int k) { return v[g.index(k, iy)]; }, ix, g.nx(), g.hx());
            const double fyy = axis_second_derivative([&](int k) { return v[g.index(ix, k)]; }, iy, g.ny(), g.hy());
            out[g.index(ix, iy)] = fxx + fyy;
        }
    }
    return out;
}

namespace {

struct CellCoords {
    int ix, iy;
    double tx, ty;
};

CellCoords locate(const Grid2D& g, Point p) {
    if (!g.contains(p) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
        std::ostringstream os;
        os << "point (" << p.x << ", " << p.y << ") lies outside the grid";
        throw DomainError(os.str());
    }
    const double fx = std::clamp((p.x - g.x_min()) / g.hx(), 0.0, static_cast<double>(g.nx() - 1));
    const double fy = std::clamp((p.y - g.y_min()) / g.hy(), 0.0, static_cast<double>(g.ny() - 1));
    // Snap coordinates that are a node up to rounding, so nodes interpolate exactly.
    auto snap = [](double s) { return std::abs(s - std::round(s)) < 1e-9 ? std::round(s) : s; };
    const double sx = snap(fx), sy = snap(fy);
    const int ix = std::min(static_cast<int>(sx), g.nx() - 2);
    const int iy = std::min(static_cast<int>(sy), g.ny() - 2);
    return {ix, iy, sx - ix, sy - iy};
}

double bilinear(std::span<const double> v, const Grid2D& g, const CellCoords& c) {
    const double f00 = v[g.index(c.ix, c.iy)];
    const double f10 = v[g.index(c.ix + 1, c.iy)];
    const double f01 = v[g.index(c.ix, c.iy + 1)];
    const double f11 = v[g.index(c.ix + 1, c.iy + 1)];
    return (1 - c.tx) * (1 - c.ty) * f00 + c.tx * (1 - c.ty) * f10 + (1 - c.tx) * c.ty * f01 + c.tx * c.ty * f11;
}

}  // namespace

double interpolate(const ScalarField& f, Point p) {
    return bilinear(f.values(), f.grid(), locate(f.grid(), p));
}

Point interpolate(const VectorField& v, Point p) {
    const CellCoords c = locate(v.grid, p);
    return {bilinear(v.vx, v.grid, c), bilinear(v.vy, v.grid, c)};
}

DensityField normalize(const ScalarField& f) {
    for (double v : f.values()) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ValidationError("cannot normalize: field has negative or non-finite entries");
        }
    }
    const double mass = integrate(f);
    if (!(mass > 0.0)) {
        throw ValidationError("cannot normalize: field has zero mass");
    }
    std::vector<double> out(f.values().begin(), f.values().end());
    for (double& v : out) v /= mass;
    return DensityField(ScalarField(f.grid(), std::move(out)));
}

DensityField density_from_masses(const Grid2D& grid, std::span<const double> masses) {
    if (masses.size() != grid.size()) {
        throw ValidationError("mass vector size does not match grid");
    }
    std::vector<double> rho(grid.size());
    for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = masses[i] / grid.weight(i);
    return normalize(ScalarField(grid, std::move(rho)));
}

double l1_distance(const DensityField& a, const DensityField& b) {
    if (!(a.grid() == b.grid())) throw ValidationError("densities live on different grids");
    const auto& w = a.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * std::abs(a[i] - b[i]);
    return s;
}

void Gaussian2D::validate() const {
    const bool finite = std::isfinite(mean.x) && std::isfinite(mean.y) && std::isfinite(cxx) &&
                        std::isfinite(cxy) && std::isfinite(cyy);
    if (!finite || !(cxx > 0.0) || !(cxx * cyy - cxy * cxy > 0.0)) {
        throw ValidationError("Gaussian covariance must be symmetric positive definite");
    }
}

double Gaussian2D::pdf(Point p) const {
    const double det = cxx * cyy - cxy * cxy;
    const double dx = p.x - mean.x;
    const double dy = p.y - mean.y;
    const double q = (cyy * dx * dx - 2.0 * cxy * dx * dy + cxx * dy * dy) / det;
    return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(det));
}

std::array<double, 3> Gaussian2D::cholesky() const {
    validate();
    const double l11 = std::sqrt(cxx);
    const double l21 = cxy / l11;
    const double l22 = std::sqrt(cyy - l21 * l21);
    return {l11, l21, l22};
}

DensityField sample_on_nodes(const Grid2D& grid, const Gaussian2D& g) {
    g.validate();
    ScalarField f(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) f[i] = g.pdf(grid.node(i));
    return normalize(f);
}

namespace {

template <int N>
DensityField project_with(const Grid2D& grid, const Gaussian2D& g) {
    using Rule = boost::math::quadrature::gauss<double, N>;
    // Expand the symmetric half-rule on [-1, 1] into a full rule on [0, 1].
    std::vector<double> t, w;
    const auto& a = Rule::abscissa();
    const auto& wt = Rule::weights();
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] == 0.0) {
            t.push_back(0.5);
            w.push_back(0.5 * wt[k]);
            continue;
        }
        t.push_back(0.5 * (1.0 - a[k]));
        w.push_back(0.5 * wt[k]);
        t.push_back(0.5 * (1.0 + a[k]));
        w.push_back(0.5 * wt[k]);
    }
    std::vector<double> mass(grid.size(), 0.0);
    const double cell = grid.hx() * grid.hy();
    for (int cy = 0; cy + 1 < grid.ny(); ++cy) {
        for (int cx = 0; cx + 1 < grid.nx(); ++cx) {
            for (std::size_t a1 = 0; a1 < t.size(); ++a1) {
                for (std::size_t a2 = 0; a2 < t.size(); ++a2) {
                    const double tx = t[a1];
                    const double ty = t[a2];
                    const Point p{grid.x(cx) + tx * grid.hx(), grid.y(cy) + ty * grid.hy()};
                    const double m = w[a1] * w[a2] * cell * g.pdf(p);
                    mass[grid.index(cx, cy)] += (1 - tx) * (1 - ty) * m;
                    mass[grid.index(cx + 1, cy)] += tx * (1 - ty) * m;
                    mass[grid.index(cx, cy + 1)] += (1 - tx) * ty * m;
                    mass[grid.index(cx + 1, cy + 1)] += tx * ty * m;
                }
            }
        }
    }
    return density_from_masses(grid, mass);
}

}  // namespace

DensityField project_on_nodes(const Grid2D& grid, const Gaussian2D& g, int order) {
    g.validate();
    switch (order) {
        case 4: return project_with<4>(grid, g);
        case 8: return project_with<8>(grid, g);
        case 16: return project_with<16>(grid, g);
        default: throw ValidationError("projection order must be 4, 8 or 16");
    }
}

void write_csv(std::ostream& out, const ScalarField& f) {
    const Grid2D& g = f.grid();
    out << "ix,iy,x,y,value\n";
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point p = g.node(i);
        out << g.ix_of(i) << ',' << g.iy_of(i) << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
            << format_double(f[i]) << '\n';
    }
}

}  // namespace chiplet
