#pragma once

// Maxwell-molecule collision operator on the truncated tensor grid.
//
// The bilinear operator
//   Q(F1,F2)(v) = ∫∫ B0(cosθ) [F1(v*')F2(v') − F1(v*)F2(v)] dω dv*
// uses the ω-representation v' = v + [(v*−v)·ω]ω, v*' = v* − [(v*−v)·ω]ω
// and the cutoff kernel B0(z) = b_amp·|z|.  Discretely, the (v*, ω)
// double quadrature is organized as a loop over lattice differences
// δ = (v* − v)/h: for a fixed (δ, ω) the post-collision points v', v*'
// sit at the *same* fractional lattice offset from every node v, so one
// pair of trilinear stencils serves the whole grid and the inner loop
// over v is a tight contiguous sweep.  The sphere quadrature is adapted
// to the relative velocity (Gauss–Legendre in z = cosθ per half-interval,
// uniform azimuth), which makes the discrete collision frequency exactly
// velocity-independent, as it must be for Maxwell molecules.
//
// The same traversal backs three consumers that therefore agree to
// roundoff: apply_Q_field (nonlinear, matrix-free), apply_Kcal_field /
// apply_L_direct (linearized, matrix-free), and assemble_operators
// (dense K and 𝒦 matrices).  Gain contributions are rigorously pruned
// using the Gaussian bound |F1(v*')F2(v')| ≤ Gt1·Gt2·e^{−(|v|²+|v*|²)/4}
// with Gt = max |F|e^{|v|²/4} taken from the actual tables, so pruning
// degrades gracefully (to no pruning) for non-decaying fields.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <limits>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <vector>

#include "couette/field.hpp"
#include "couette/grid.hpp"

namespace couette {

using DenseOp = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Sphere quadrature / kernel specification
// ---------------------------------------------------------------------------

/// Gauss–Legendre nodes/weights on [-1,1] (Newton iteration on P_n).
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-15) break;
    }
    x[i] = -t;
    x[n - 1 - i] = t;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

/// Kernel B0(z) = b_amp |z| plus its product sphere quadrature.
/// n_omega is the node count per angular dimension: z = cosθ gets
/// Gauss–Legendre nodes per half-interval [-1,0] and [0,1] (the kernel
/// has a kink at z = 0), the azimuth gets n_omega uniform nodes.
struct CollisionKernelSpec {
  double b_amp = 1.0 / (2.0 * kPi);
  int n_omega = 16;
  std::vector<double> z_nodes, z_weights;  // cosθ quadrature (both halves)
  int n_phi = 16;
  std::vector<Vec3> omega_nodes;   // reference frame (polar axis = e_z)
  std::vector<double> omega_weights;

  double B0(double z) const { return b_amp * std::abs(z); }
};

inline CollisionKernelSpec build_kernel_spec(double b_amp, int n_omega) {
  if (!(b_amp > 0.0) || n_omega < 2)
    throw std::invalid_argument("build_kernel_spec: need b_amp > 0, n_omega >= 2");
  CollisionKernelSpec s;
  s.b_amp = b_amp;
  s.n_omega = n_omega;
  s.n_phi = n_omega;
  const int half = (n_omega + 1) / 2;
  std::vector<double> gx, gw;
  gauss_legendre(half, gx, gw);
  for (int i = 0; i < half; ++i) {  // map [-1,1] -> [0,1], then mirror
    const double z = 0.5 * (gx[i] + 1.0), wz = 0.5 * gw[i];
    s.z_nodes.push_back(z);
    s.z_weights.push_back(wz);
    s.z_nodes.push_back(-z);
    s.z_weights.push_back(wz);
  }
  const double wphi = 2.0 * kPi / s.n_phi;
  for (std::size_t iz = 0; iz < s.z_nodes.size(); ++iz)
    for (int ip = 0; ip < s.n_phi; ++ip) {
      const double z = s.z_nodes[iz], r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = 2.0 * kPi * (ip + 0.5) / s.n_phi;
      s.omega_nodes.push_back({r * std::cos(phi), r * std::sin(phi), z});
      s.omega_weights.push_back(s.z_weights[iz] * wphi);
    }
  return s;
}

/// Discrete angular kernel mass c0 = Σ_ω B0 w_ω (continuum: 2π b_amp).
inline double kernel_c0(const CollisionKernelSpec& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.z_nodes.size(); ++i)
    acc += s.B0(s.z_nodes[i]) * s.z_weights[i];
  return acc * 2.0 * kPi;
}

/// Smooth monotone cutoff: 0 for |v| <= M, 1 for |v| >= M+1, C¹ ramp.
inline double chi_M(double vnorm, double M) {
  const double s = std::clamp(vnorm - M, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

// ---------------------------------------------------------------------------
// Padded tables and the (δ, ω) gain traversal
// ---------------------------------------------------------------------------

namespace detail {

/// Zero-padded cube geometry: post-collision gather points can sit up to
/// (1+√3)(n−1) lattice cells away from the base node, so every cube is
/// embedded in a zero margin wide enough that all gathers stay in bounds
/// (zero extension outside the truncation cube).
struct PadGeom {
  int n = 0, m = 0, P = 0;
  std::ptrdiff_t sx = 0, sy = 0;  // strides: x-> P*P, y-> P

  explicit PadGeom(int n_per_axis) {
    n = n_per_axis;
    m = static_cast<int>(std::ceil((1.0 + std::sqrt(3.0)) * (n - 1))) + 2;
    P = n + 2 * m;
    sx = static_cast<std::ptrdiff_t>(P) * P;
    sy = P;
  }
  std::size_t padded_size() const { return static_cast<std::size_t>(P) * P * P; }
  /// Padded linear index of cube node (0,0,0).
  std::ptrdiff_t origin() const { return (static_cast<std::ptrdiff_t>(m) * P + m) * P + m; }
};

inline void fill_padded(const PadGeom& pg, const double* cube, double* pad) {
  std::memset(pad, 0, pg.padded_size() * sizeof(double));
  const int n = pg.n;
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      std::memcpy(pad + pg.origin() + ix * pg.sx + iy * pg.sy,
                  cube + (static_cast<std::ptrdiff_t>(ix) * n + iy) * n,
                  n * sizeof(double));
}

/// Trilinear gather stencil at a fixed lattice offset from the base node.
struct Stencil {
  std::ptrdiff_t base = 0;  // padded-array offset of corner (0,0,0)
  int bx = 0, by = 0, bz = 0;
  double w[8] = {0};  // corner weights, index bits (cx<<2)|(cy<<1)|cz
};

inline Stencil make_stencil(const PadGeom& pg, double ox, double oy, double oz) {
  Stencil s;
  const double fx = std::floor(ox), fy = std::floor(oy), fz = std::floor(oz);
  s.bx = static_cast<int>(fx);
  s.by = static_cast<int>(fy);
  s.bz = static_cast<int>(fz);
  const double tx = ox - fx, ty = oy - fy, tz = oz - fz;
  const double mx = 1.0 - tx, my = 1.0 - ty, mz = 1.0 - tz;
  s.w[0] = mx * my * mz;
  s.w[1] = mx * my * tz;
  s.w[2] = mx * ty * mz;
  s.w[3] = mx * ty * tz;
  s.w[4] = tx * my * mz;
  s.w[5] = tx * my * tz;
  s.w[6] = tx * ty * mz;
  s.w[7] = tx * ty * tz;
  s.base = s.bx * pg.sx + s.by * pg.sy + s.bz;
  return s;
}

struct SliceRange {
  int lo[3] = {0, 0, 0}, hi[3] = {-1, -1, -1};  // inclusive; empty if hi<lo
  bool empty() const { return hi[0] < lo[0] || hi[1] < lo[1] || hi[2] < lo[2]; }
};

/// One (source, source, destination) triple for the gain accumulation:
/// out(v) += cB · padA(v_* − d) · padB(v + d).
struct ProductJob {
  const double* padA = nullptr;
  const double* padB = nullptr;
  double* out = nullptr;
};

inline double gather(const Stencil& s, const PadGeom& pg, const double* p) {
  const double* a = p + s.base;
  return s.w[0] * a[0] + s.w[1] * a[1] + s.w[2] * a[pg.sy] + s.w[3] * a[pg.sy + 1] +
         s.w[4] * a[pg.sx] + s.w[5] * a[pg.sx + 1] + s.w[6] * a[pg.sx + pg.sy] +
         s.w[7] * a[pg.sx + pg.sy + 1];
}

/// Tight inner sweep: for every node i in the range, accumulate the
/// product of the two gathered values into each job's output.
inline void gain_products(const PadGeom& pg, double cB, const Stencil& A,
                          const Stencil& B, const SliceRange& R,
                          const ProductJob* jobs, int njobs) {
  const int n = pg.n;
  const std::ptrdiff_t sx = pg.sx, sy = pg.sy;
  const double aw0 = A.w[0], aw1 = A.w[1], aw2 = A.w[2], aw3 = A.w[3], aw4 = A.w[4],
               aw5 = A.w[5], aw6 = A.w[6], aw7 = A.w[7];
  const double bw0 = B.w[0], bw1 = B.w[1], bw2 = B.w[2], bw3 = B.w[3], bw4 = B.w[4],
               bw5 = B.w[5], bw6 = B.w[6], bw7 = B.w[7];
  for (int ix = R.lo[0]; ix <= R.hi[0]; ++ix) {
    for (int iy = R.lo[1]; iy <= R.hi[1]; ++iy) {
      const std::ptrdiff_t prow = pg.origin() + ix * sx + iy * sy;
      const std::ptrdiff_t orow = (static_cast<std::ptrdiff_t>(ix) * n + iy) * n;
      for (int j = 0; j < njobs; ++j) {
        const double* pa = jobs[j].padA + prow + A.base;
        const double* pb = jobs[j].padB + prow + B.base;
        double* out = jobs[j].out + orow;
        for (int iz = R.lo[2]; iz <= R.hi[2]; ++iz) {
          const double ga = aw0 * pa[iz] + aw1 * pa[iz + 1] + aw2 * pa[iz + sy] +
                            aw3 * pa[iz + sy + 1] + aw4 * pa[iz + sx] +
                            aw5 * pa[iz + sx + 1] + aw6 * pa[iz + sx + sy] +
                            aw7 * pa[iz + sx + sy + 1];
          const double gb = bw0 * pb[iz] + bw1 * pb[iz + 1] + bw2 * pb[iz + sy] +
                            bw3 * pb[iz + sy + 1] + bw4 * pb[iz + sx] +
                            bw5 * pb[iz + sx + 1] + bw6 * pb[iz + sx + sy] +
                            bw7 * pb[iz + sx + sy + 1];
          out[iz] += cB * ga * gb;
        }
      }
    }
  }
}

/// Traverses all off-diagonal gain contributions.  For each lattice
/// difference δ ≠ 0 and each adapted sphere node, calls
///   fn(cB, stencilA, stencilB, range, delta)
/// where cB = w_vol · w_ω · B0(z), stencilA gathers at v* − d, stencilB
/// at v + d (offsets relative to the base node v), and range is the
/// per-axis index box of admissible base nodes (j = i+δ inside the cube,
/// intersected with the prune ball |v + u/2| ≤ R when box_log < ∞:
/// contributions outside satisfy e^{−(|v|²+|v*|²)/4} < e^{−box_log−r²/8}...
/// concretely R² = 2·box_log − r²/4 with box_log supplied by the caller).
template <class Fn>
void traverse_gain(const VelocityGrid& grid, const CollisionKernelSpec& spec,
                   const PadGeom& pg, double box_log, Fn&& fn) {
  const int n = grid.n_per_axis;
  const double h = grid.h;
  const double wvol = grid.weight;
  const bool prune = std::isfinite(box_log);
  const double wphi = 2.0 * kPi / spec.n_phi;
  std::vector<double> cphi(spec.n_phi), sphi(spec.n_phi);
  for (int ip = 0; ip < spec.n_phi; ++ip) {
    const double phi = 2.0 * kPi * (ip + 0.5) / spec.n_phi;
    cphi[ip] = std::cos(phi);
    sphi[ip] = std::sin(phi);
  }
  for (int dx = -(n - 1); dx <= n - 1; ++dx) {
    for (int dy = -(n - 1); dy <= n - 1; ++dy) {
      for (int dz = -(n - 1); dz <= n - 1; ++dz) {
        if (dx == 0 && dy == 0 && dz == 0) continue;  // handled analytically
        const double ux = dx * h, uy = dy * h, uz = dz * h;
        const double r2 = ux * ux + uy * uy + uz * uz;
        const double r = std::sqrt(r2);
        SliceRange R;
        // j = i + δ must stay in the cube.
        const int d3[3] = {dx, dy, dz};
        bool ok = true;
        for (int k = 0; k < 3; ++k) {
          R.lo[k] = std::max(0, -d3[k]);
          R.hi[k] = std::min(n - 1, n - 1 - d3[k]);
          if (R.hi[k] < R.lo[k]) ok = false;
        }
        if (!ok) continue;
        if (prune) {
          const double Rad2 = 2.0 * box_log - 0.25 * r2;
          if (Rad2 <= 0.0) continue;
          const double Rad = std::sqrt(Rad2);
          const double u3[3] = {ux, uy, uz};
          for (int k = 0; k < 3; ++k) {
            // axis coordinate c(i) must satisfy |c + u_k/2| <= Rad
            const double clo = -0.5 * u3[k] - Rad, cup = -0.5 * u3[k] + Rad;
            const int ilo = static_cast<int>(std::ceil((clo + grid.v_max) / h - 0.5));
            const int ihi = static_cast<int>(std::floor((cup + grid.v_max) / h - 0.5));
            R.lo[k] = std::max(R.lo[k], ilo);
            R.hi[k] = std::min(R.hi[k], ihi);
            if (R.hi[k] < R.lo[k]) ok = false;
          }
          if (!ok) continue;
        }
        // Adapted orthonormal frame (û, e1, e2).
        const double inv_r = 1.0 / r;
        const double hx = ux * inv_r, hy = uy * inv_r, hz = uz * inv_r;
        double ax = 0.0, ay = 0.0, az = 0.0;
        if (std::abs(hx) <= std::abs(hy) && std::abs(hx) <= std::abs(hz))
          ax = 1.0;
        else if (std::abs(hy) <= std::abs(hz))
          ay = 1.0;
        else
          az = 1.0;
        double e1x = hy * az - hz * ay, e1y = hz * ax - hx * az, e1z = hx * ay - hy * ax;
        const double e1n = 1.0 / std::sqrt(e1x * e1x + e1y * e1y + e1z * e1z);
        e1x *= e1n;
        e1y *= e1n;
        e1z *= e1n;
        const double e2x = hy * e1z - hz * e1y, e2y = hz * e1x - hx * e1z,
                     e2z = hx * e1y - hy * e1x;
        for (std::size_t iz = 0; iz < spec.z_nodes.size(); ++iz) {
          const double z = spec.z_nodes[iz];
          const double kz = spec.B0(z) * spec.z_weights[iz] * wphi * wvol;
          const double st = std::sqrt(std::max(0.0, 1.0 - z * z));
          for (int ip = 0; ip < spec.n_phi; ++ip) {
            // ω = z û + sinθ (cosφ e1 + sinφ e2);  d = (u·ω) ω = r z ω.
            const double wx = z * hx + st * (cphi[ip] * e1x + sphi[ip] * e2x);
            const double wy = z * hy + st * (cphi[ip] * e1y + sphi[ip] * e2y);
            const double wz = z * hz + st * (cphi[ip] * e1z + sphi[ip] * e2z);
            const double px = r * z * wx / h, py = r * z * wy / h, pz = r * z * wz / h;
            const Stencil B = make_stencil(pg, px, py, pz);
            const Stencil A = make_stencil(pg, dx - px, dy - py, dz - pz);
            fn(kz, A, B, R, d3);
          }
        }
      }
    }
  }
}

/// Tail-compensated sup factor: max |F| e^{|v|²/4}, and plain sup |F|.
inline void tail_factors(const VelocityGrid& grid, const double* F, double& Gt,
                         double& S) {
  Gt = 0.0;
  S = 0.0;
  for (int i = 0; i < grid.size(); ++i) {
    const double a = std::abs(F[i]);
    S = std::max(S, a);
    Gt = std::max(Gt, a * std::exp(0.25 * norm2(grid.nodes[i])));
  }
}

/// box_log such that neglected gain contributions are below
/// prune_rel · sup|F1| · sup|F2| pointwise.  +inf disables nothing /
/// prune_rel <= 0 disables pruning.
inline double prune_box_log(double prune_rel, double Gt1, double S1, double Gt2,
                            double S2) {
  if (!(prune_rel > 0.0) || S1 == 0.0 || S2 == 0.0)
    return std::numeric_limits<double>::infinity();
  return std::log((Gt1 / S1) * (Gt2 / S2)) + std::log(1.0 / prune_rel);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix-free applications
// ---------------------------------------------------------------------------

inline constexpr double kDefaultPruneRel = 1e-16;

/// Full bilinear collision operator Q(F1,F2), column-by-column over the
/// spatial nodes of the fields (absolute-density representation).
inline Eigen::MatrixXd apply_Q_columns(const VelocityGrid& grid,
                                       const CollisionKernelSpec& spec,
                                       const Eigen::MatrixXd& F1,
                                       const Eigen::MatrixXd& F2,
                                       double prune_rel = kDefaultPruneRel) {
  const int N = grid.size();
  if (F1.rows() != N || F2.rows() != N || F1.cols() != F2.cols())
    throw std::invalid_argument("apply_Q_columns: shape mismatch");
  const int ncol = static_cast<int>(F1.cols());
  const detail::PadGeom pg(grid.n_per_axis);
  std::vector<std::vector<double>> pad1(ncol), pad2(ncol);
  double box_log = std::numeric_limits<double>::infinity();
  for (int c = 0; c < ncol; ++c) {
    pad1[c].resize(pg.padded_size());
    pad2[c].resize(pg.padded_size());
    detail::fill_padded(pg, F1.col(c).data(), pad1[c].data());
    detail::fill_padded(pg, F2.col(c).data(), pad2[c].data());
    double g1, s1, g2, s2;
    detail::tail_factors(grid, F1.col(c).data(), g1, s1);
    detail::tail_factors(grid, F2.col(c).data(), g2, s2);
    box_log = std::min(box_log, detail::prune_box_log(prune_rel, g1, s1, g2, s2));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, ncol);
  std::vector<detail::ProductJob> jobs(ncol);
  for (int c = 0; c < ncol; ++c)
    jobs[c] = {pad1[c].data(), pad2[c].data(), out.col(c).data()};
  detail::traverse_gain(grid, spec, pg, box_log,
                        [&](double cB, const detail::Stencil& A,
                            const detail::Stencil& B, const detail::SliceRange& R,
                            const int (&)[3]) {
                          detail::gain_products(pg, cB, A, B, R, jobs.data(), ncol);
                        });
  // Diagonal (δ = 0) gain and the analytic loss term.
  const double c0 = kernel_c0(spec);
  for (int c = 0; c < ncol; ++c) {
    const double mass1 = grid.weight * F1.col(c).sum();
    out.col(c) += c0 * grid.weight * F1.col(c).cwiseProduct(F2.col(c));
    out.col(c) -= c0 * mass1 * F2.col(c);
  }
  return out;
}

inline Eigen::VectorXd apply_Q(const VelocityGrid& grid, const CollisionKernelSpec& spec,
                               const Eigen::VectorXd& F1, const Eigen::VectorXd& F2,
                               double prune_rel = kDefaultPruneRel) {
  return apply_Q_columns(grid, spec, F1, F2, prune_rel).col(0);
}

/// Matrix-free 𝒦 g = Q(g, μ) + Q_gain(μ, g) (absolute representation).
inline Eigen::MatrixXd apply_Kcal_columns(const VelocityGrid& grid,
                                          const ReferenceTables& tables,
                                          const CollisionKernelSpec& spec,
                                          const Eigen::MatrixXd& G,
                                          double prune_rel = kDefaultPruneRel) {
  const int N = grid.size();
  if (G.rows() != N) throw std::invalid_argument("apply_Kcal_columns: shape mismatch");
  const int ncol = static_cast<int>(G.cols());
  const detail::PadGeom pg(grid.n_per_axis);
  std::vector<double> mupad(pg.padded_size());
  detail::fill_padded(pg, tables.mu.data(), mupad.data());
  double gmu, smu;
  detail::tail_factors(grid, tables.mu.data(), gmu, smu);
  std::vector<std::vector<double>> padg(ncol);
  double box_log = std::numeric_limits<double>::infinity();
  for (int c = 0; c < ncol; ++c) {
    padg[c].resize(pg.padded_size());
    detail::fill_padded(pg, G.col(c).data(), padg[c].data());
    double gg, sg;
    detail::tail_factors(grid, G.col(c).data(), gg, sg);
    box_log = std::min(box_log, detail::prune_box_log(prune_rel, gg, sg, gmu, smu));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, ncol);
  // Two gain products per column: g(v*')μ(v') from Q(g,μ) and μ(v*')g(v')
  // from Q_gain(μ,g).
  std::vector<detail::ProductJob> jobs(2 * ncol);
  for (int c = 0; c < ncol; ++c) {
    jobs[2 * c] = {padg[c].data(), mupad.data(), out.col(c).data()};
    jobs[2 * c + 1] = {mupad.data(), padg[c].data(), out.col(c).data()};
  }
  detail::traverse_gain(grid, spec, pg, box_log,
                        [&](double cB, const detail::Stencil& A,
                            const detail::Stencil& B, const detail::SliceRange& R,
                            const int (&)[3]) {
                          detail::gain_products(pg, cB, A, B, R, jobs.data(),
                                                static_cast<int>(jobs.size()));
                        });
  const double c0 = kernel_c0(spec);
  const Eigen::Map<const Eigen::VectorXd> mu(tables.mu.data(), N);
  for (int c = 0; c < ncol; ++c) {
    // δ = 0 gains (both products) and the loss of Q(g,μ).
    out.col(c) += 2.0 * c0 * grid.weight * mu.cwiseProduct(G.col(c));
    out.col(c) -= c0 * grid.weight * G.col(c).sum() * mu;
  }
  return out;
}

/// Matrix-free L f = ν₀ f − μ^{−1/2} 𝒦(√μ f) (√μ representation).
inline Eigen::VectorXd apply_L_direct(const VelocityGrid& grid,
                                      const ReferenceTables& tables,
                                      const CollisionKernelSpec& spec,
                                      const Eigen::VectorXd& f,
                                      double prune_rel = kDefaultPruneRel) {
  const int N = grid.size();
  const Eigen::Map<const Eigen::VectorXd> smu(tables.sqrt_mu.data(), N);
  const Eigen::Map<const Eigen::VectorXd> mu(tables.mu.data(), N);
  const double nu0 = kernel_c0(spec) * grid.weight * mu.sum();
  const Eigen::VectorXd kcal =
      apply_Kcal_columns(grid, tables, spec, smu.cwiseProduct(f), prune_rel);
  return nu0 * f - kcal.cwiseQuotient(smu);
}

// ---------------------------------------------------------------------------
// Assembled operators
// ---------------------------------------------------------------------------

struct MacroProjection {
  Eigen::VectorXd a;                 // per spatial node
  std::array<Eigen::VectorXd, 3> b;  // b1, b2, b3 per spatial node
  Eigen::VectorXd c;
};

struct CollisionOperators {
  double nu0 = 0.0;  // discrete collision frequency (constant in v)
  double b0 = 0.0;   // 3π ∫ B0(z) z²(1−z²) dz
  double c0 = 0.0;   // Σ_ω B0 w_ω
  double M = 0.0;
  DenseOp Kcal_matrix;  // 𝒦: absolute representation
  DenseOp K_matrix;     // K = μ^{−1/2} 𝒦 μ^{1/2}: √μ representation
  std::vector<double> chiM_mask;
  std::vector<double> nu_per_node;
  double assembly_asym = 0.0;     // measured max |K − Kᵀ| (recorded, not fixed)
  double escape_fraction = 0.0;   // μ⊗μ-weighted share of escaping stencils
  // Five collision invariants e_k = {1, v, |v|²−3}√μ and the Gram solve
  // behind P0 (exactly idempotent on the grid).
  Eigen::MatrixXd invariants;      // N x 5
  Eigen::Matrix<double, 5, 5> gram_inv;
};

inline double discrete_b0(const CollisionKernelSpec& spec) {
  double s = 0.0;
  for (std::size_t i = 0; i < spec.z_nodes.size(); ++i) {
    const double z = spec.z_nodes[i];
    s += spec.B0(z) * z * z * (1.0 - z * z) * spec.z_weights[i];
  }
  return 3.0 * kPi * s;
}

inline CollisionOperators assemble_operators(const VelocityGrid& grid,
                                             const ReferenceTables& tables,
                                             const CollisionKernelSpec& spec, double M,
                                             double escape_fraction_tol = 0.05,
                                             double nu_spread_tol = 1e-10) {
  const int N = grid.size();
  if (!(M < std::sqrt(3.0) * grid.v_max + 1.0))
    throw std::invalid_argument("assemble_operators: M beyond the truncation cube");
  CollisionOperators ops;
  ops.M = M;
  ops.c0 = kernel_c0(spec);
  ops.b0 = discrete_b0(spec);
  const detail::PadGeom pg(grid.n_per_axis);
  std::vector<double> mupad(pg.padded_size());
  detail::fill_padded(pg, tables.mu.data(), mupad.data());
  ops.Kcal_matrix = DenseOp::Zero(N, N);
  const int n = grid.n_per_axis;

  // Per-axis Gaussian factors and per-shift prefix sums for the
  // μ⊗μ-weighted escape estimate (share of gain stencils whose gather
  // point leaves the cube and is zero-extended).
  std::vector<double> gax(n);
  for (int i = 0; i < n; ++i) gax[i] = std::exp(-0.5 * grid.axis_coord(i) * grid.axis_coord(i));
  double esc_num = 0.0, esc_den = 0.0;
  // Per-axis pair weight μ(v)μ(v*) restricted to one axis; v* = v + hδ, so
  // the table depends on δ only and is rebuilt when δ changes.
  int last_d[3] = {INT_MIN, INT_MIN, INT_MIN};
  std::array<std::vector<double>, 3> gpair;
  for (auto& g : gpair) g.resize(n);

  auto sink = [&](double cB, const detail::Stencil& A, const detail::Stencil& B,
                  const detail::SliceRange& R, const int (&d3)[3]) {
    if (d3[0] != last_d[0] || d3[1] != last_d[1] || d3[2] != last_d[2]) {
      for (int k = 0; k < 3; ++k) {
        for (int i = 0; i < n; ++i) {
          const double cs = grid.axis_coord(i) + grid.h * d3[k];
          gpair[k][i] = gax[i] * std::exp(-0.5 * cs * cs);
        }
        last_d[k] = d3[k];
      }
    }
    // Escape bookkeeping: a stencil leaves the cube when a base-node axis
    // index i falls outside [-b, n-2-b] for that stencil's base offset b.
    double w_in_A = 1.0, w_in_B = 1.0, w_all = 1.0;
    const int ba[3] = {A.bx, A.by, A.bz}, bb[3] = {B.bx, B.by, B.bz};
    for (int k = 0; k < 3; ++k) {
      double sa = 0.0, sb = 0.0, st = 0.0;
      for (int i = R.lo[k]; i <= R.hi[k]; ++i) {
        const double g = gpair[k][i];
        st += g;
        if (i + ba[k] >= 0 && i + ba[k] + 1 <= n - 1) sa += g;
        if (i + bb[k] >= 0 && i + bb[k] + 1 <= n - 1) sb += g;
      }
      w_in_A *= sa;
      w_in_B *= sb;
      w_all *= st;
    }
    esc_num += cB * ((w_all - w_in_A) + (w_all - w_in_B));
    esc_den += 2.0 * cB * w_all;

    for (int ix = R.lo[0]; ix <= R.hi[0]; ++ix)
      for (int iy = R.lo[1]; iy <= R.hi[1]; ++iy) {
        const std::ptrdiff_t prow = pg.origin() + ix * pg.sx + iy * pg.sy;
        for (int iz = R.lo[2]; iz <= R.hi[2]; ++iz) {
          const int row = (ix * n + iy) * n + iz;
          // Q(g,μ) gain: g gathered at stencil A, coefficient μ at B.
          const double muAtB = [&] {
            const double* a = mupad.data() + prow + iz + B.base;
            return B.w[0] * a[0] + B.w[1] * a[1] + B.w[2] * a[pg.sy] + B.w[3] * a[pg.sy + 1] +
                   B.w[4] * a[pg.sx] + B.w[5] * a[pg.sx + 1] + B.w[6] * a[pg.sx + pg.sy] +
                   B.w[7] * a[pg.sx + pg.sy + 1];
          }();
          const double muAtA = [&] {
            const double* a = mupad.data() + prow + iz + A.base;
            return A.w[0] * a[0] + A.w[1] * a[1] + A.w[2] * a[pg.sy] + A.w[3] * a[pg.sy + 1] +
                   A.w[4] * a[pg.sx] + A.w[5] * a[pg.sx + 1] + A.w[6] * a[pg.sx + pg.sy] +
                   A.w[7] * a[pg.sx + pg.sy + 1];
          }();
          auto scatter = [&](const detail::Stencil& S, double coeff) {
            const int bx = S.bx, by = S.by, bz = S.bz;
            for (int c = 0; c < 8; ++c) {
              const int cx = (c >> 2) & 1, cy = (c >> 1) & 1, cz = c & 1;
              const int jx = ix + bx + cx, jy = iy + by + cy, jz = iz + bz + cz;
              if (jx < 0 || jx >= n || jy < 0 || jy >= n || jz < 0 || jz >= n) continue;
              ops.Kcal_matrix(row, (jx * n + jy) * n + jz) += coeff * S.w[c];
            }
          };
          scatter(A, cB * muAtB);  // from Q(g,μ): column weight × μ(v')
          scatter(B, cB * muAtA);  // from Q_gain(μ,g): column weight × μ(v*')
        }
      }
  };
  detail::traverse_gain(grid, spec, pg, std::numeric_limits<double>::infinity(), sink);

  ops.escape_fraction = esc_den > 0.0 ? esc_num / esc_den : 0.0;
  if (ops.escape_fraction > escape_fraction_tol)
    throw std::runtime_error(
        "assemble_operators: post-collision stencils escape the cube for a "
        "μ-weighted fraction " + std::to_string(ops.escape_fraction) +
        " of pairs (> tol) — velocity truncation too tight");

  const Eigen::Map<const Eigen::VectorXd> mu(tables.mu.data(), N);
  const Eigen::Map<const Eigen::VectorXd> smu(tables.sqrt_mu.data(), N);
  // δ = 0 gains and the rank-one loss of Q(g,μ).
  for (int i = 0; i < N; ++i) ops.Kcal_matrix(i, i) += 2.0 * ops.c0 * grid.weight * mu[i];
  for (int i = 0; i < N; ++i) ops.Kcal_matrix.row(i).array() -= ops.c0 * grid.weight * mu[i];

  // Collision frequency: exactly velocity-independent for Maxwell
  // molecules with the adapted sphere quadrature; computed per node and
  // checked, not assumed.
  ops.nu_per_node.resize(N);
  for (int i = 0; i < N; ++i) {
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += mu[j];
    ops.nu_per_node[i] = ops.c0 * grid.weight * s;
  }
  ops.nu0 = ops.nu_per_node[0];
  double spread = 0.0;
  for (double v : ops.nu_per_node) spread = std::max(spread, std::abs(v - ops.nu0));
  if (spread > nu_spread_tol * std::abs(ops.nu0))
    throw std::runtime_error("assemble_operators: collision frequency not constant "
                             "(Maxwell-molecule consistency failure)");

  // K = D^{-1/2} 𝒦 D^{1/2} with D = diag(μ): exact conjugation identity.
  ops.K_matrix = ops.Kcal_matrix;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) ops.K_matrix(i, j) *= smu[j] / smu[i];
  ops.assembly_asym = (ops.K_matrix - ops.K_matrix.transpose()).cwiseAbs().maxCoeff();

  ops.chiM_mask.resize(N);
  for (int i = 0; i < N; ++i)
    ops.chiM_mask[i] = chi_M(std::sqrt(norm2(grid.nodes[i])), M);

  ops.invariants.resize(N, 5);
  for (int i = 0; i < N; ++i) {
    const Vec3& v = grid.nodes[i];
    ops.invariants(i, 0) = smu[i];
    ops.invariants(i, 1) = v[0] * smu[i];
    ops.invariants(i, 2) = v[1] * smu[i];
    ops.invariants(i, 3) = v[2] * smu[i];
    ops.invariants(i, 4) = (norm2(v) - 3.0) * smu[i];
  }
  const Eigen::Matrix<double, 5, 5> gram =
      grid.weight * (ops.invariants.transpose() * ops.invariants);
  ops.gram_inv = gram.inverse();
  return ops;
}

/// L f = ν₀ f − K f on every spatial column (√μ representation).
inline Field apply_L(const CollisionOperators& ops, const Field& f) {
  require_rep(f, Rep::SqrtMu, "apply_L");
  Field out(Rep::SqrtMu, f.n_v(), f.n_y());
  out.data = ops.nu0 * f.data - ops.K_matrix * f.data;
  return out;
}

/// Γ in the paper's two normalizations: gamma_single(f,g) = μ^{−1/2}Q(√μf,√μg);
/// gamma_sym symmetrizes the pair.
inline Field gamma_single(const VelocityGrid& grid, const ReferenceTables& tables,
                          const CollisionKernelSpec& spec, const Field& f,
                          const Field& g, double prune_rel = kDefaultPruneRel) {
  require_rep(f, Rep::SqrtMu, "gamma_single");
  require_rep(g, Rep::SqrtMu, "gamma_single");
  const int N = grid.size();
  const Eigen::Map<const Eigen::VectorXd> smu(tables.sqrt_mu.data(), N);
  Eigen::MatrixXd A = f.data, B = g.data;
  A.array().colwise() *= smu.array();
  B.array().colwise() *= smu.array();
  Field out(Rep::SqrtMu, f.n_v(), f.n_y());
  out.data = apply_Q_columns(grid, spec, A, B, prune_rel);
  out.data.array().colwise() /= smu.array();
  return out;
}

inline Field gamma_sym(const VelocityGrid& grid, const ReferenceTables& tables,
                       const CollisionKernelSpec& spec, const Field& f, const Field& g,
                       double prune_rel = kDefaultPruneRel) {
  Field out = gamma_single(grid, tables, spec, f, g, prune_rel);
  out.data += gamma_single(grid, tables, spec, g, f, prune_rel).data;
  return out;
}

/// Lemma CK tail estimate: sup over |v| ≥ M of the weighted absolute row
/// sum of 𝒦, with M = q².  Returns nullopt when the tail lies outside
/// the truncation cube.
inline std::optional<double> weighted_Kcal_tail_norm(const CollisionOperators& ops,
                                                     const VelocityGrid& grid,
                                                     int q) {
  const double M = static_cast<double>(q) * q;
  if (M >= grid.v_max) return std::nullopt;  // tail outside truncation
  const int N = grid.size();
  std::vector<double> wq(N);
  for (int i = 0; i < N; ++i) wq[i] = std::pow(1.0 + norm2(grid.nodes[i]), q);
  double best = 0.0;
  bool any = false;
  for (int i = 0; i < N; ++i) {
    if (std::sqrt(norm2(grid.nodes[i])) < M) continue;
    any = true;
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += std::abs(ops.Kcal_matrix(i, j)) / wq[j];
    best = std::max(best, wq[i] * s);
  }
  if (!any) return std::nullopt;
  return best;
}

/// P0 projection coefficients by the exact discrete Gram solve; P0 is
/// idempotent on the grid by construction.
inline MacroProjection project_P0(const CollisionOperators& ops,
                                  const VelocityGrid& grid, const Field& f) {
  require_rep(f, Rep::SqrtMu, "project_P0");
  const Eigen::MatrixXd rhs =
      grid.weight * (ops.invariants.transpose() * f.data);  // 5 x n_y
  const Eigen::MatrixXd coef = ops.gram_inv * rhs;
  MacroProjection p;
  p.a = coef.row(0);
  p.b[0] = coef.row(1);
  p.b[1] = coef.row(2);
  p.b[2] = coef.row(3);
  p.c = coef.row(4);
  return p;
}

inline Field project_P0_field(const CollisionOperators& ops, const VelocityGrid& grid,
                              const Field& f) {
  require_rep(f, Rep::SqrtMu, "project_P0_field");
  const Eigen::MatrixXd rhs = grid.weight * (ops.invariants.transpose() * f.data);
  Field out(Rep::SqrtMu, f.n_v(), f.n_y());
  out.data = ops.invariants * (ops.gram_inv * rhs);
  return out;
}

inline Field project_P1(const CollisionOperators& ops, const VelocityGrid& grid,
                        const Field& f) {
  Field out = project_P0_field(ops, grid, f);
  out.data = f.data - out.data;
  return out;
}

}  // namespace couette
