#pragma once

// Norms, moments, boundary traces, wall-flux closures and the decay-rate
// fit.  Every inner product uses the single velocity-grid quadrature, and
// the diffuse-reflection wall Maxwellian is normalized by the *discrete*
// half-grid flux of μ (the continuum constant is √(2π); using the grid
// value instead makes μ satisfy the discrete wall condition exactly and
// balances wall mass exactly, which the conservation and BC-residual
// contracts rely on).

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "couette/collision.hpp"
#include "couette/field.hpp"
#include "couette/grid.hpp"

namespace couette {

// ---------------------------------------------------------------------------
// Quadrature helpers
// ---------------------------------------------------------------------------

/// Trapezoid weight of spatial node j on the uniform grid.
inline double spatial_weight(const SpatialGrid& sg, int j) {
  return (j == 0 || j == sg.n_y - 1) ? 0.5 * sg.dy : sg.dy;
}

/// Discrete half-grid flux Σ_{v_y>0} w μ v_y (continuum: (2π)^{−1/2}).
inline double half_flux_mu(const VelocityGrid& grid, const ReferenceTables& tables) {
  double s = 0.0;
  for (int i = 0; i < grid.size(); ++i) {
    const double vy = grid.nodes[i][1];
    if (vy > 0.0) s += tables.mu[i] * vy;
  }
  return s * grid.weight;
}

/// Discrete wall-Maxwellian normalization: the diffuse condition reads
/// F_in(wall, v) = wall_norm · μ(v) · (outgoing flux); the continuum value
/// of wall_norm is √(2π).
inline double wall_normalization(const VelocityGrid& grid, const ReferenceTables& tables) {
  return 1.0 / half_flux_mu(grid, tables);
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

struct NormReport {
  double sup_wq = 0.0;      // ‖w_q · ‖∞ over (y, v)
  double l2 = 0.0;          // L²(y, v)
  double trace_out = 0.0;   // |·|_{2,+}: outgoing trace at both walls
  double trace_in = 0.0;    // |·|_{2,−}
};

inline double weighted_sup_norm(const VelocityGrid& grid, const ReferenceTables& tables,
                                const Field& f) {
  double best = 0.0;
  for (int j = 0; j < f.n_y(); ++j)
    for (int i = 0; i < f.n_v(); ++i)
      best = std::max(best, tables.wq[i] * std::abs(f.data(i, j)));
  return best;
}

inline double l2_norm(const VelocityGrid& grid, const SpatialGrid& sg, const Field& f) {
  double s = 0.0;
  for (int j = 0; j < f.n_y(); ++j)
    s += spatial_weight(sg, j) * f.data.col(j).squaredNorm();
  return std::sqrt(s * grid.weight);
}

/// Boundary trace |f|_{2,±}² = Σ_{walls} Σ_{γ±} w |v_y| f(wall,v)²,
/// γ+ = outgoing (leaving the slab), γ− = incoming.
inline double boundary_trace(const VelocityGrid& grid, const Field& f, bool outgoing) {
  double s = 0.0;
  const int last = f.n_y() - 1;
  for (int i = 0; i < f.n_v(); ++i) {
    const double vy = grid.nodes[i][1];
    // at y=+1 outgoing means v_y>0; at y=−1 outgoing means v_y<0
    const double ftop = f.data(i, last), fbot = f.data(i, 0);
    if ((vy > 0.0) == outgoing) s += std::abs(vy) * ftop * ftop;
    if ((vy < 0.0) == outgoing) s += std::abs(vy) * fbot * fbot;
  }
  return std::sqrt(s * grid.weight);
}

inline NormReport norm_report(const VelocityGrid& grid, const SpatialGrid& sg,
                              const ReferenceTables& tables, const Field& f) {
  NormReport r;
  r.sup_wq = weighted_sup_norm(grid, tables, f);
  r.l2 = l2_norm(grid, sg, f);
  r.trace_out = boundary_trace(grid, f, true);
  r.trace_in = boundary_trace(grid, f, false);
  return r;
}

// ---------------------------------------------------------------------------
// Moments and symmetry checks
// ---------------------------------------------------------------------------

/// Macroscopic coefficients per spatial node (shared with project_P0).
inline MacroProjection moments(const CollisionOperators& ops, const VelocityGrid& grid,
                               const Field& f) {
  return project_P0(ops, grid, f);
}

/// Sup-norm defect of oddness in v_x: ‖f + f∘flip_x‖∞.
inline double oddness_defect_vx(const VelocityGrid& grid, const Field& f) {
  double worst = 0.0;
  for (int j = 0; j < f.n_y(); ++j)
    for (int i = 0; i < grid.size(); ++i)
      worst = std::max(worst,
                       std::abs(f.data(i, j) + f.data(grid.flip_x(i), j)));
  return worst;
}

// ---------------------------------------------------------------------------
// Wall flux and diffuse-BC residual
// ---------------------------------------------------------------------------

/// Half-space flux ∫ F(wall, v) |v_y| dv at wall ±1; by default over the
/// outgoing half-space (the one the diffuse closure integrates).
inline double wall_flux(const VelocityGrid& grid, const Field& F, int wall,
                        bool outgoing = true) {
  require_rep(F, Rep::Absolute, "wall_flux");
  const int j = wall > 0 ? F.n_y() - 1 : 0;
  double s = 0.0;
  for (int i = 0; i < F.n_v(); ++i) {
    const double vy = grid.nodes[i][1];
    const bool leaves = (wall > 0) == (vy > 0.0);
    if (leaves == outgoing) s += std::abs(vy) * F.data(i, j);
  }
  return s * grid.weight;
}

/// Sup over incoming velocities of |F(wall,v) − wall_norm·μ(v)·flux_out|.
inline double bc_residual(const VelocityGrid& grid, const ReferenceTables& tables,
                          const Field& F, int wall) {
  require_rep(F, Rep::Absolute, "bc_residual");
  const double cw = wall_normalization(grid, tables);
  const double flux = wall_flux(grid, F, wall, true);
  const int j = wall > 0 ? F.n_y() - 1 : 0;
  double worst = 0.0;
  for (int i = 0; i < F.n_v(); ++i) {
    const double vy = grid.nodes[i][1];
    const bool incoming = (wall > 0) == (vy < 0.0);
    if (!incoming) continue;
    worst = std::max(worst, std::abs(F.data(i, j) - cw * tables.mu[i] * flux));
  }
  return worst;
}

/// Slab total mass (1/2)∫∫F dv dy (the steady constraint normalizes to 1).
inline double total_mass(const VelocityGrid& grid, const SpatialGrid& sg,
                         const Field& F) {
  double s = 0.0;
  for (int j = 0; j < F.n_y(); ++j) s += spatial_weight(sg, j) * F.data.col(j).sum();
  return 0.5 * s * grid.weight;
}

// ---------------------------------------------------------------------------
// Decay fit
// ---------------------------------------------------------------------------

struct DecayFit {
  double lambda0 = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // RMS of log-space fit residuals
  double t_lo = 0.0, t_hi = 0.0;
};

/// Least-squares fit of log(norm) = intercept − λ₀ t over the series.
inline DecayFit decay_rate_fit(const std::vector<std::pair<double, double>>& series) {
  if (series.empty()) throw std::invalid_argument("decay_rate_fit: empty window");
  if (series.size() < 10)
    throw std::invalid_argument("decay_rate_fit: need at least 10 points in window");
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (const auto& [t, v] : series) {
    if (!(v > 0.0)) throw std::invalid_argument("decay_rate_fit: nonpositive norm");
    const double lv = std::log(v);
    st += t;
    sl += lv;
    stt += t * t;
    stl += t * lv;
  }
  const double nn = static_cast<double>(series.size());
  const double denom = nn * stt - st * st;
  DecayFit fit;
  const double slope = denom != 0.0 ? (nn * stl - st * sl) / denom : 0.0;
  fit.lambda0 = -slope;
  fit.intercept = (sl - slope * st) / nn;
  double ss = 0.0;
  for (const auto& [t, v] : series) {
    const double r = std::log(v) - (fit.intercept + slope * t);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / nn);
  fit.t_lo = series.front().first;
  fit.t_hi = series.back().first;
  return fit;
}

}  // namespace couette
