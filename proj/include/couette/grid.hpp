#pragma once

// Spatial and velocity discretizations for the slab Couette problem:
// a midpoint-offset uniform tensor grid in velocity (no node on any
// coordinate plane, so v_y = 0 never occurs) and a uniform spatial grid
// on [-1, 1] including both walls.  Reference tables hold the global
// Maxwellian mu, sqrt(mu) and the polynomial weight w_q at every node.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace couette {

inline constexpr double kPi = 3.14159265358979323846;

using Vec3 = std::array<double, 3>;

inline double norm2(const Vec3& v) {
  return v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
}

/// Truncated 3D tensor velocity grid with uniform quadrature weights.
/// Node layout is lexicographic in (ix, iy, iz) with the per-axis
/// coordinate c(i) = -v_max + (i + 1/2) h, h = 2 v_max / n_per_axis.
struct VelocityGrid {
  int n_per_axis = 0;
  double v_max = 0.0;
  double h = 0.0;       // per-axis spacing
  double weight = 0.0;  // uniform quadrature weight h^3
  std::vector<Vec3> nodes;

  int size() const { return n_per_axis * n_per_axis * n_per_axis; }

  double axis_coord(int i) const { return -v_max + (i + 0.5) * h; }

  int index(int ix, int iy, int iz) const {
    return (ix * n_per_axis + iy) * n_per_axis + iz;
  }

  std::array<int, 3> unpack(int idx) const {
    const int n = n_per_axis;
    return {idx / (n * n), (idx / n) % n, idx % n};
  }

  /// Exact index bijections under per-axis sign flips (midpoint grid:
  /// flipping axis coordinate i maps to n-1-i).
  int flip_x(int idx) const {
    auto [ix, iy, iz] = unpack(idx);
    return index(n_per_axis - 1 - ix, iy, iz);
  }
  int flip_y(int idx) const {
    auto [ix, iy, iz] = unpack(idx);
    return index(ix, n_per_axis - 1 - iy, iz);
  }
  int flip_z(int idx) const {
    auto [ix, iy, iz] = unpack(idx);
    return index(ix, iy, n_per_axis - 1 - iz);
  }
};

inline VelocityGrid build_velocity_grid(int n_per_axis, double v_max) {
  if (n_per_axis < 2 || n_per_axis % 2 != 0)
    throw std::invalid_argument(
        "build_velocity_grid: n_per_axis must be even and >= 2 "
        "(odd counts place nodes on the grazing set v_y = 0)");
  if (!(v_max > 0.0))
    throw std::invalid_argument("build_velocity_grid: v_max must be positive");
  VelocityGrid g;
  g.n_per_axis = n_per_axis;
  g.v_max = v_max;
  g.h = 2.0 * v_max / n_per_axis;
  g.weight = g.h * g.h * g.h;
  g.nodes.resize(static_cast<std::size_t>(g.size()));
  for (int ix = 0; ix < n_per_axis; ++ix)
    for (int iy = 0; iy < n_per_axis; ++iy)
      for (int iz = 0; iz < n_per_axis; ++iz)
        g.nodes[g.index(ix, iy, iz)] = {g.axis_coord(ix), g.axis_coord(iy),
                                        g.axis_coord(iz)};
  return g;
}

/// Uniform spatial grid on [-1, 1], walls included as the first and last
/// node.  n_y is the total node count (>= 8); the uniform layout is
/// symmetric about y = 0 for any n_y.
struct SpatialGrid {
  int n_y = 0;
  double dy = 0.0;
  std::vector<double> y;
};

inline SpatialGrid build_spatial_grid(int n_y) {
  if (n_y < 8)
    throw std::invalid_argument("build_spatial_grid: n_y must be >= 8");
  SpatialGrid s;
  s.n_y = n_y;
  s.dy = 2.0 / (n_y - 1);
  s.y.resize(static_cast<std::size_t>(n_y));
  for (int j = 0; j < n_y; ++j) s.y[j] = -1.0 + j * s.dy;
  s.y.front() = -1.0;
  s.y.back() = 1.0;
  return s;
}

inline double maxwellian(const Vec3& v) {
  return std::pow(2.0 * kPi, -1.5) * std::exp(-0.5 * norm2(v));
}

/// Tabulated mu, sqrt(mu) and w_q = (1+|v|^2)^q at every velocity node.
struct ReferenceTables {
  int q = 0;
  std::vector<double> mu;
  std::vector<double> sqrt_mu;
  std::vector<double> wq;
};

inline ReferenceTables eval_reference(const VelocityGrid& grid, int q) {
  if (q < 0) throw std::invalid_argument("eval_reference: q must be >= 0");
  ReferenceTables t;
  t.q = q;
  const int n = grid.size();
  t.mu.resize(n);
  t.sqrt_mu.resize(n);
  t.wq.resize(n);
  for (int i = 0; i < n; ++i) {
    const double m = maxwellian(grid.nodes[i]);
    t.mu[i] = m;
    t.sqrt_mu[i] = std::sqrt(m);
    t.wq[i] = std::pow(1.0 + norm2(grid.nodes[i]), q);
  }
  return t;
}

/// Quadrature mass of the Maxwellian on the truncated grid; the deficit
/// 1 - mass is the truncation loss (monotone in v_max at fixed spacing).
inline double grid_mass(const VelocityGrid& grid, const ReferenceTables& t) {
  double s = 0.0;
  for (double m : t.mu) s += m;
  return s * grid.weight;
}

}  // namespace couette
