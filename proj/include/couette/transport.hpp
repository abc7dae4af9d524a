#pragma once

// Characteristic geometry of the sheared free-streaming operator
// v_y ∂_y − α v_y ∂_{v_x}.  Along the backward characteristic through
// (t, y, v):  Y(s) = y − (t−s) v_y,  V_x(s) = v_x + α (t−s) v_y, so the
// v_x shift between two spatial points is α (y − y′) — independent of v.
// This file provides the backward exit time, the damped transport
// inverse (exact exponential integration per spatial segment with linear
// source reconstruction — the mild-form workhorse of every fixed-point
// sweep), and the diffuse-reflection backward bounce cycles with their
// product wall measure.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "couette/field.hpp"
#include "couette/grid.hpp"

namespace couette {

// ---------------------------------------------------------------------------
// Exit times and trajectories
// ---------------------------------------------------------------------------

struct BackwardExit {
  double t_b = 0.0;
  int y_b = 0;  // ±1
};

/// First backward exit of the characteristic through (y, v).  From a wall
/// with the degenerate zero-time solution (standing at the wall the
/// formula would exit from), the exit is the opposite wall after a full
/// slab traversal 2/|v_y|.
inline BackwardExit backward_exit(double y, const Vec3& v) {
  const double vy = v[1];
  if (vy == 0.0)
    throw std::invalid_argument("backward_exit: v_y = 0 lies on the grazing set");
  if (y < -1.0 || y > 1.0)
    throw std::invalid_argument("backward_exit: y outside the slab");
  if (vy > 0.0) {
    const double tb = (y + 1.0) / vy;
    if (tb > 0.0) return {tb, -1};
    return {2.0 / vy, +1};  // y = -1: full traversal to the top wall
  }
  const double tb = (y - 1.0) / vy;
  if (tb > 0.0) return {tb, +1};
  return {-2.0 / vy, -1};  // y = +1: full traversal to the bottom wall
}

/// Position/velocity along the backward characteristic, τ = t − s ≥ 0.
inline void trajectory(double y, const Vec3& v, double alpha, double tau, double& Y,
                       Vec3& V) {
  Y = y - tau * v[1];
  V = {v[0] + alpha * tau * v[1], v[1], v[2]};
}

// ---------------------------------------------------------------------------
// Damped transport inverse (mild form)
// ---------------------------------------------------------------------------

/// Per-segment exponential coefficients for the mild form at damping d:
/// along one spatial cell Δy traversed by a node with vertical speed
/// |v_y|, with a = d·Δy/|v_y| and E = e^{−a},
///   G_next = E·G_prev~ + A·S_next + B·S_prev~
/// where ~ marks the v_x-shifted upstream sample and (A, B) integrate the
/// linear source reconstruction exactly:  A + B = (1−E)/d.
struct SegmentCoeffs {
  std::vector<double> E, A, B;  // indexed by the v_y axis index iy
};

inline SegmentCoeffs segment_coeffs(const VelocityGrid& grid, double dy, double damping) {
  if (!(damping > 0.0))
    throw std::invalid_argument("segment_coeffs: damping must be positive");
  SegmentCoeffs c;
  const int n = grid.n_per_axis;
  c.E.resize(n);
  c.A.resize(n);
  c.B.resize(n);
  for (int iy = 0; iy < n; ++iy) {
    const double absvy = std::abs(grid.axis_coord(iy));
    const double a = damping * dy / absvy;
    const double E = std::exp(-a);
    const double one_m_E = -std::expm1(-a);
    const double B = (one_m_E / a - E) / damping;
    c.E[iy] = E;
    c.B[iy] = B;
    c.A[iy] = one_m_E / damping - B;
  }
  return c;
}

/// Zero/top/bottom inflow data: values at (y=−1, v_y>0) and (y=+1, v_y<0).
struct BoundaryData {
  Eigen::VectorXd bottom;  // used at rows with v_y > 0
  Eigen::VectorXd top;     // used at rows with v_y < 0
};

/// Shift a velocity-node vector in v_x by s (velocity units), linear
/// interpolation with zero extension beyond the cube.
inline Eigen::VectorXd shift_vx(const VelocityGrid& grid, const Eigen::VectorXd& f,
                                double s) {
  const int n = grid.n_per_axis;
  if (s == 0.0) return f;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(f.size());
  const double sl = s / grid.h;
  const int k = static_cast<int>(std::floor(sl));
  const double t = sl - k;
  const int plane = n * n;  // stride of the ix index
  for (int ix = 0; ix < n; ++ix) {
    const int j0 = ix + k, j1 = ix + k + 1;
    const bool ok0 = j0 >= 0 && j0 < n, ok1 = j1 >= 0 && j1 < n;
    if (!ok0 && !ok1) continue;
    for (int r = 0; r < plane; ++r) {
      double val = 0.0;
      if (ok0) val += (1.0 - t) * f[j0 * plane + r];
      if (ok1) val += t * f[j1 * plane + r];
      out[ix * plane + r] = val;
    }
  }
  return out;
}

/// Mild-form inverse of  v_y ∂_y G − α v_y ∂_{v_x} G + damping·G = source
/// with prescribed inflow: exact exponential integration over each
/// spatial segment, linear reconstruction of the source along the
/// characteristic, v_x evaluated by interpolation at the characteristic
/// shift α(y − y′).
inline Field transport_inverse(const VelocityGrid& grid, const SpatialGrid& sg,
                               const Field& source, double damping,
                               const BoundaryData* inflow = nullptr,
                               double alpha = 0.0) {
  if (!(damping > 0.0))
    throw std::invalid_argument("transport_inverse: damping must be positive");
  const int N = grid.size(), ny = sg.n_y, n = grid.n_per_axis;
  if (source.n_v() != N || source.n_y() != ny)
    throw std::invalid_argument("transport_inverse: source shape mismatch");
  const SegmentCoeffs sc = segment_coeffs(grid, sg.dy, damping);
  Field out(source.rep, N, ny);

  auto sweep = [&](bool upward) {
    const double shift = (upward ? 1.0 : -1.0) * alpha * sg.dy;
    const int jstart = upward ? 0 : ny - 1, jend = upward ? ny - 1 : 0,
              jstep = upward ? 1 : -1;
    // Seed the starting wall with inflow (zero if absent).
    for (int ix = 0; ix < n; ++ix)
      for (int iy = 0; iy < n; ++iy) {
        const bool vy_pos = grid.axis_coord(iy) > 0.0;
        if (vy_pos != upward) continue;
        for (int iz = 0; iz < n; ++iz) {
          const int idx = grid.index(ix, iy, iz);
          double val = 0.0;
          if (inflow) val = upward ? inflow->bottom[idx] : inflow->top[idx];
          out.data(idx, jstart) = val;
        }
      }
    for (int j = jstart + jstep; upward ? j <= jend : j >= jend; j += jstep) {
      const Eigen::VectorXd prevG = shift_vx(grid, out.data.col(j - jstep), shift);
      const Eigen::VectorXd prevS = shift_vx(grid, source.data.col(j - jstep), shift);
      for (int iy = 0; iy < n; ++iy) {
        const bool vy_pos = grid.axis_coord(iy) > 0.0;
        if (vy_pos != upward) continue;
        for (int ix = 0; ix < n; ++ix)
          for (int iz = 0; iz < n; ++iz) {
            const int idx = grid.index(ix, iy, iz);
            out.data(idx, j) = sc.E[iy] * prevG[idx] + sc.A[iy] * source.data(idx, j) +
                               sc.B[iy] * prevS[idx];
          }
      }
    }
  };
  sweep(true);
  sweep(false);
  return out;
}

// ---------------------------------------------------------------------------
// Bounce cycles and the wall measure
// ---------------------------------------------------------------------------

struct BounceCycle {
  // Entry 0 is the interior start (t, y, v); entries k ≥ 1 sit on walls
  // with the sampled outgoing velocity.  Times are strictly decreasing.
  std::vector<double> t;
  std::vector<double> y;
  std::vector<Vec3> v;
  bool exhausted_time = false;  // reached t ≤ 0 before the cap
};

/// Draw from the wall probability measure dσ = √(2π) μ(v) |v_y| dv on the
/// outgoing half-space at wall y_w = ±1: v_x, v_z are unit Gaussians and
/// |v_y| is Rayleigh (inverse CDF), signed toward the wall's outward side.
inline Vec3 sample_wall_velocity(double y_w, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = std::sqrt(-2.0 * std::log1p(-unif(rng)));
  return {gauss(rng), (y_w > 0 ? 1.0 : -1.0) * u, gauss(rng)};
}

inline BounceCycle sample_bounce_cycle(double t, double y, const Vec3& v, double alpha,
                                       std::mt19937_64& rng, int k_max) {
  if (k_max < 1) throw std::invalid_argument("sample_bounce_cycle: k_max >= 1");
  (void)alpha;  // the shear never alters (y, v_y), so exit times are α-free
  BounceCycle c;
  c.t.push_back(t);
  c.y.push_back(y);
  c.v.push_back(v);
  double tc = t, yc = y;
  Vec3 vc = v;
  for (int k = 1; k <= k_max; ++k) {
    const BackwardExit ex = backward_exit(yc, vc);
    tc -= ex.t_b;
    yc = static_cast<double>(ex.y_b);
    if (tc <= 0.0) {
      c.exhausted_time = true;
      break;
    }
    vc = sample_wall_velocity(yc, rng);
    c.t.push_back(tc);
    c.y.push_back(yc);
    c.v.push_back(vc);
  }
  return c;
}

/// Monte Carlo estimate of the k-bounce survival probability starting
/// from time T0 at the bottom wall (start state of the iterated wall
/// integral): fraction of sampled cycles with t_k > 0.
struct SurvivalEstimate {
  double survival = 0.0;
  double stderr_ = 0.0;
};

inline SurvivalEstimate estimate_cycle_survival(double T0, int k, int n_samples,
                                                std::mt19937_64& rng) {
  if (!(T0 > 0.0) || k < 1 || n_samples < 1)
    throw std::invalid_argument("estimate_cycle_survival: bad arguments");
  long alive = 0;
  for (int s = 0; s < n_samples; ++s) {
    double t = T0, yw = -1.0;
    bool ok = true;
    for (int l = 1; l <= k; ++l) {
      const Vec3 v = sample_wall_velocity(yw, rng);
      t -= 2.0 / std::abs(v[1]);
      yw = -yw;
      if (t <= 0.0) {
        ok = false;
        break;
      }
    }
    if (ok) ++alive;
  }
  SurvivalEstimate e;
  e.survival = static_cast<double>(alive) / n_samples;
  e.stderr_ = std::sqrt(std::max(0.0, e.survival * (1.0 - e.survival) / n_samples));
  return e;
}

/// Peetre weight-ratio factor along a sampled cycle: max over bounces of
/// w̃(v_j)/w̃(V^j(t_{j+1})) with w̃ = (√(2π) w_q √μ)^{−1}.  Contractual
/// upper bound: (1+4α²)^q e^{α²}.
inline double weight_ratio_check(const BounceCycle& cycle, int q, double alpha) {
  double worst = 0.0;
  for (std::size_t j = 0; j + 1 < cycle.t.size(); ++j) {
    const double tau = cycle.t[j] - cycle.t[j + 1];
    const Vec3& v = cycle.v[j];
    const Vec3 V = {v[0] + alpha * tau * v[1], v[1], v[2]};
    const double wt_v = 1.0 / (std::pow(1.0 + norm2(v), q) * std::sqrt(maxwellian(v)));
    const double wt_V = 1.0 / (std::pow(1.0 + norm2(V), q) * std::sqrt(maxwellian(V)));
    worst = std::max(worst, wt_v / wt_V);
  }
  // A cycle that exhausted time still has a last partial segment; the
  // shift there is no larger than a full traversal, so the recorded
  // bounces dominate the bound identically.
  return worst;
}

}  // namespace couette
