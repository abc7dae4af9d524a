#pragma once

// Time integration of the perturbation dynamics about the steady state,
//   ∂_t f + v_y∂_y f − αv_y∂_{v_x} f + (α/2)v_xv_y f + Lf
//       = Γ(f,f) + α{Γ(G₁+αG_R, f) + Γ(f, G₁+αG_R)},
// in two schemes:
//   * direct — f stepped in √μ-representation by Strang splitting: half
//     collision (exponential-Euler with the constant ν₀ as the stiff
//     part), full transport (exact semi-Lagrangian backtrace with diffuse
//     wall closure from the step-start outgoing flux), half collision.
//   * caflisch — the (f₁ raw, f₂ √μ-rep) split √μf = f₁ + √μf₂ with
//     f₂(0)=0; f₁ carries the quadratic and growth sources under plain ν₀
//     damping, f₂ absorbs the low-velocity part (1−χ_M)μ^{−1/2}𝒦f₁
//     under the full L.
//
// Discrete conservation: the collision substep projects out its per-node
// mass defect, and the transport substep rebalances the wall-reinjected
// mass globally, so total mass is conserved to roundoff per step.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "couette/collision.hpp"
#include "couette/diagnostics.hpp"
#include "couette/field.hpp"
#include "couette/grid.hpp"
#include "couette/steady.hpp"

namespace couette {

enum class Scheme { Direct, Caflisch };

struct UnsteadyOptions {
  double cfl = 1.0;
  double prune_rel = kDefaultPruneRel;
  bool conserve_mass = true;     // per-step projection/rebalancing
  bool include_quadratic = true; // Γ(f,f) term (off → purely linear dynamics)
};

/// Everything the stepper needs besides the state itself.  `background`
/// is the absolute-level steady perturbation √μ(G₁+αG_R) per spatial node
/// (empty matrix → the α-coupling Γ terms are omitted).
struct UnsteadyContext {
  const VelocityGrid& grid;
  const SpatialGrid& sg;
  const ReferenceTables& tables;
  const CollisionOperators& ops;
  const CollisionKernelSpec& spec;
  double alpha = 0.0;
  Eigen::MatrixXd background;
  UnsteadyOptions opt;
};

struct UnsteadyRecord {
  double t = 0.0;
  double sup_wq = 0.0;
  double l2 = 0.0;
  double mass = 0.0;
  double min_F = 0.0;
};

struct UnsteadyState {
  Scheme scheme = Scheme::Direct;
  double t = 0.0;
  long steps = 0;
  Field f;   // direct: the √μ-rep perturbation; caflisch: f₁ (raw)
  Field f2;  // caflisch only: √μ-rep component
  std::vector<UnsteadyRecord> history;
};

namespace detail {

/// Exact semi-Lagrangian transport over τ for ∂_t g + v_y∂_y g − αv_y∂_{v_x}g = 0.
/// Backtraced feet beyond a wall read `emit ⊗ Φ(wall)` where Φ is the
/// step-start outgoing flux Σ_out flux_w·g(·, wall column).  `mass_w` and
/// `neutral` (may be empty) drive the global mass rebalancing.
inline void transport_step(const VelocityGrid& grid, const SpatialGrid& sg,
                           Eigen::MatrixXd& g, double tau, double alpha,
                           const Eigen::VectorXd& emit, const Eigen::VectorXd& flux_w,
                           const Eigen::VectorXd& mass_w, const Eigen::VectorXd& neutral,
                           bool conserve_mass) {
  const int N = grid.size(), ny = sg.n_y, n = grid.n_per_axis;
  double phi_bot = 0.0, phi_top = 0.0;
  for (int i = 0; i < N; ++i) {
    const double v_y = grid.nodes[i][1];
    if (v_y < 0.0) phi_bot += flux_w[i] * g(i, 0);
    if (v_y > 0.0) phi_top += flux_w[i] * g(i, ny - 1);
  }

  double m_before = 0.0;
  if (conserve_mass)
    for (int j = 0; j < ny; ++j)
      m_before += spatial_weight(sg, j) * mass_w.dot(g.col(j));

  Eigen::MatrixXd out(N, ny);
  Eigen::MatrixXd shifted(N, ny);
  for (int iy = 0; iy < n; ++iy) {
    const double v_y = grid.axis_coord(iy);
    const double s = alpha * v_y * tau;  // backward v_x drift along the characteristic
    if (s != 0.0)
      for (int j = 0; j < ny; ++j) shifted.col(j) = shift_vx(grid, g.col(j), s);
    const Eigen::MatrixXd& src = (s != 0.0) ? shifted : g;
    for (int j = 0; j < ny; ++j) {
      const double yf = sg.y[j] - v_y * tau;
      double w0 = 0.0;
      int j0 = -1;
      bool from_wall = false;
      if (yf <= -1.0 || yf >= 1.0) {
        from_wall = true;
      } else {
        const double r = (yf + 1.0) / sg.dy;
        j0 = std::min(static_cast<int>(r), ny - 2);
        w0 = 1.0 - (r - j0);
      }
      for (int ix = 0; ix < n; ++ix)
        for (int iz = 0; iz < n; ++iz) {
          const int idx = grid.index(ix, iy, iz);
          out(idx, j) = from_wall
                            ? emit[idx] * (v_y > 0.0 ? phi_bot : phi_top)
                            : w0 * src(idx, j0) + (1.0 - w0) * src(idx, j0 + 1);
        }
    }
  }
  g.swap(out);

  if (conserve_mass && neutral.size() == N) {
    double m_after = 0.0;
    for (int j = 0; j < ny; ++j)
      m_after += spatial_weight(sg, j) * mass_w.dot(g.col(j));
    const double slab = 2.0 * mass_w.dot(neutral);  // ∫∫ mass_w·neutral
    g.colwise() -= ((m_after - m_before) / slab) * neutral;
  }
}

/// Exponential-Euler half step on ∂_t g = −ν₀ g + R, R frozen at the start:
/// g ← e^{−ν₀τ} g + (1−e^{−ν₀τ})/ν₀ · R.  Optionally projects the per-node
/// mass defect of the update onto `neutral`.
inline void expeuler_step(Eigen::MatrixXd& g, const Eigen::MatrixXd& R, double nu0,
                          double tau, double grid_weight, const Eigen::VectorXd& mass_w,
                          const Eigen::VectorXd& neutral, bool conserve_mass) {
  const double decay = std::exp(-nu0 * tau);
  const double gain = -std::expm1(-nu0 * tau) / nu0;
  Eigen::VectorXd m0;
  if (conserve_mass) m0 = (mass_w.transpose() * g).transpose();
  g = decay * g + gain * R;
  if (conserve_mass) {
    const Eigen::VectorXd dm = (mass_w.transpose() * g).transpose() - m0;
    const double unit = mass_w.dot(neutral);
    g.noalias() -= neutral * (dm.transpose() / unit);
  }
  (void)grid_weight;
}

inline void check_finite(const Eigen::MatrixXd& g, const char* where) {
  if (!g.allFinite())
    throw std::runtime_error(std::string("unsteady step: NaN/overflow in ") + where);
}

}  // namespace detail

inline double dt_max(const UnsteadyContext& ctx) {
  return ctx.opt.cfl * ctx.sg.dy / ctx.grid.v_max;
}

inline UnsteadyState step(const UnsteadyContext& ctx, UnsteadyState state, double dt) {
  const VelocityGrid& grid = ctx.grid;
  const int N = grid.size();
  if (dt > dt_max(ctx) * (1.0 + 1e-12))
    throw std::invalid_argument("step: dt=" + std::to_string(dt) +
                                " exceeds CFL bound " + std::to_string(dt_max(ctx)));
  const Eigen::Map<const Eigen::VectorXd> smu(ctx.tables.sqrt_mu.data(), N);
  const Eigen::Map<const Eigen::VectorXd> mu(ctx.tables.mu.data(), N);
  const Eigen::Map<const Eigen::VectorXd> chi(ctx.ops.chiM_mask.data(), N);
  const double cw = wall_normalization(grid, ctx.tables);
  const double w = grid.weight;

  Eigen::VectorXd vxvy(N), absvy(N);
  for (int i = 0; i < N; ++i) {
    vxvy[i] = grid.nodes[i][0] * grid.nodes[i][1];
    absvy[i] = std::abs(grid.nodes[i][1]);
  }

  // Quadratic + background collision sources at the absolute level,
  // shared by both schemes (caflisch recombines √μf = f₁ + √μf₂ first).
  auto gamma_sources = [&](const Eigen::MatrixXd& smuf) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, smuf.cols());
    if (ctx.opt.include_quadratic)
      S += apply_Q_columns(grid, ctx.spec, smuf, smuf, ctx.opt.prune_rel);
    if (ctx.alpha != 0.0 && ctx.background.size() > 0)
      S += ctx.alpha *
           (apply_Q_columns(grid, ctx.spec, smuf, ctx.background, ctx.opt.prune_rel) +
            apply_Q_columns(grid, ctx.spec, ctx.background, smuf, ctx.opt.prune_rel));
    return S;
  };

  if (state.scheme == Scheme::Direct) {
    Eigen::MatrixXd& f = state.f.data;
    // √μ-rep closure: emit c_w√μ, flux measure w√μ|v_y|; neutral mode √μ.
    const Eigen::VectorXd emit = cw * smu;
    const Eigen::VectorXd flux_w = w * (smu.array() * absvy.array()).matrix();
    const Eigen::VectorXd mass_w = w * smu;
    auto half_collision = [&](double tau) {
      Eigen::MatrixXd smuf = f;
      smuf.array().colwise() *= smu.array();
      Eigen::MatrixXd R = gamma_sources(smuf);
      R.array().colwise() /= smu.array();  // Γ = μ^{-1/2} Q(√μ·, √μ·)
      R.noalias() += ctx.ops.K_matrix * f;
      R -= (0.5 * ctx.alpha) * (vxvy.asDiagonal() * f);
      detail::expeuler_step(f, R, ctx.ops.nu0, tau, w, mass_w, smu,
                            ctx.opt.conserve_mass);
      detail::check_finite(f, "collision substep");
    };
    half_collision(0.5 * dt);
    detail::transport_step(grid, ctx.sg, f, dt, ctx.alpha, emit, flux_w, mass_w, smu,
                           ctx.opt.conserve_mass);
    detail::check_finite(f, "transport substep");
    half_collision(0.5 * dt);
  } else {
    Eigen::MatrixXd& f1 = state.f.data;
    Eigen::MatrixXd& f2 = state.f2.data;
    auto half_collision = [&](double tau) {
      Eigen::MatrixXd smuf = f1 + (f2.array().colwise() * smu.array()).matrix();
      const Eigen::MatrixXd kcal1 = ctx.ops.Kcal_matrix * f1;
      Eigen::MatrixXd R1 = gamma_sources(smuf);
      R1 += chi.asDiagonal() * kcal1;
      R1 -= (0.5 * ctx.alpha) *
            ((vxvy.array() * smu.array()).matrix().asDiagonal() * f2);
      Eigen::MatrixXd R2 = ctx.ops.K_matrix * f2;
      R2 += ((Eigen::VectorXd::Ones(N) - chi).cwiseQuotient(smu)).asDiagonal() * kcal1;
      const Eigen::VectorXd none;
      detail::expeuler_step(f1, R1, ctx.ops.nu0, tau, w, none, none, false);
      detail::expeuler_step(f2, R2, ctx.ops.nu0, tau, w, none, none, false);
      detail::check_finite(f1, "collision substep (f1)");
      detail::check_finite(f2, "collision substep (f2)");
    };
    half_collision(0.5 * dt);
    // f₁ closure: emit √(2π)-normalized μ against the raw flux w|v_y|;
    // f₂ closure: the √μ-rep one.
    const Eigen::VectorXd none;
    detail::transport_step(grid, ctx.sg, f1, dt, ctx.alpha, (cw * mu).eval(),
                           (w * absvy).eval(), none, none, false);
    detail::transport_step(grid, ctx.sg, f2, dt, ctx.alpha, (cw * smu).eval(),
                           (w * (smu.array() * absvy.array()).matrix()).eval(), none,
                           none, false);
    detail::check_finite(f1, "transport substep (f1)");
    detail::check_finite(f2, "transport substep (f2)");
    half_collision(0.5 * dt);
  }
  state.t += dt;
  ++state.steps;
  return state;
}

/// √μ-rep perturbation of a caflisch state (recombination √μf = f₁+√μf₂).
inline Field recombine(const UnsteadyContext& ctx, const UnsteadyState& state) {
  if (state.scheme == Scheme::Direct) return state.f;
  const int N = ctx.grid.size();
  const Eigen::Map<const Eigen::VectorXd> smu(ctx.tables.sqrt_mu.data(), N);
  Field f(Rep::SqrtMu, N, state.f.n_y());
  f.data = (state.f.data.array().colwise() / smu.array()).matrix() + state.f2.data;
  return f;
}

struct RunResult {
  UnsteadyState state;
  DecayFit fit;
  double mass_correction = 0.0;  // initial-data constraint enforcement
};

/// Steps the absolute-level initial datum F0 to t_end about the steady
/// state `st`, recording ‖w_q f‖∞, L², mass of F, and min F every
/// `record_every` steps, then fits the decay rate on the window where the
/// sup norm has fallen below 10% of its initial value.
inline RunResult run_to_steady(const UnsteadyContext& ctx, const SteadyState& st,
                               const Field& F0, double dt, double t_end,
                               int record_every) {
  require_rep(F0, Rep::Absolute, "run_to_steady");
  if (!(dt > 0.0) || !(t_end > 0.0) || record_every < 1)
    throw std::invalid_argument("run_to_steady: bad dt/t_end/record_every");
  const int N = ctx.grid.size(), ny = ctx.sg.n_y;
  const Eigen::Map<const Eigen::VectorXd> smu(ctx.tables.sqrt_mu.data(), N);

  RunResult out;
  out.state.scheme = Scheme::Direct;
  out.state.f = Field(Rep::SqrtMu, N, ny);
  out.state.f.data = ((F0.data - st.F.data).array().colwise() / smu.array()).matrix();

  // Mass constraint ∫∫(F0 − F_st) = 0, enforced as a multiple of μ.
  {
    Field diff(Rep::SqrtMu, N, ny);
    diff.data = out.state.f.data;
    double m = 0.0;
    for (int j = 0; j < ny; ++j)
      m += spatial_weight(ctx.sg, j) * ctx.grid.weight * smu.dot(diff.data.col(j));
    const double slab = 2.0 * ctx.grid.weight *
                        Eigen::Map<const Eigen::VectorXd>(ctx.tables.mu.data(), N).sum();
    out.mass_correction = m;
    out.state.f.data.colwise() -= (m / slab) * smu;
  }

  const double mass_st = total_mass(ctx.grid, ctx.sg, st.F);
  auto record = [&](const UnsteadyState& s) {
    UnsteadyRecord r;
    r.t = s.t;
    r.sup_wq = weighted_sup_norm(ctx.grid, ctx.tables, s.f);
    r.l2 = l2_norm(ctx.grid, ctx.sg, s.f);
    Field F(Rep::Absolute, N, ny);
    F.data = st.F.data + (s.f.data.array().colwise() * smu.array()).matrix();
    r.mass = total_mass(ctx.grid, ctx.sg, F);
    r.min_F = F.data.minCoeff();
    return r;
  };
  out.state.history.push_back(record(out.state));
  const double initial = out.state.history.front().sup_wq;

  const long n_steps = static_cast<long>(std::ceil(t_end / dt - 1e-12));
  for (long k = 0; k < n_steps; ++k) {
    out.state = step(ctx, std::move(out.state), dt);
    if (out.state.steps % record_every == 0 || k + 1 == n_steps) {
      out.state.history.push_back(record(out.state));
      if (out.state.history.back().sup_wq > 10.0 * initial + 1e-300)
        throw std::runtime_error(
            "run_to_steady: instability, sup norm grew beyond 10x initial (t=" +
            std::to_string(out.state.t) + ")");
    }
  }

  std::vector<std::pair<double, double>> window;
  for (const auto& r : out.state.history)
    if (r.sup_wq <= 0.1 * initial && r.sup_wq > 0.0) window.emplace_back(r.t, r.sup_wq);
  out.fit = decay_rate_fit(window);
  (void)mass_st;
  return out;
}

/// Caflisch-split evolution of the √μ-rep initial perturbation f0:
/// f₁(0) = √μ f0 (raw), f₂(0) = 0 exactly.
inline UnsteadyState run_caflisch(const UnsteadyContext& ctx, const Field& f0, double dt,
                                  double t_end) {
  require_rep(f0, Rep::SqrtMu, "run_caflisch");
  if (!(dt > 0.0) || !(t_end >= 0.0))
    throw std::invalid_argument("run_caflisch: bad dt/t_end");
  const int N = ctx.grid.size(), ny = ctx.sg.n_y;
  const Eigen::Map<const Eigen::VectorXd> smu(ctx.tables.sqrt_mu.data(), N);
  UnsteadyState state;
  state.scheme = Scheme::Caflisch;
  state.f = Field(Rep::Raw, N, ny);
  state.f.data = (f0.data.array().colwise() * smu.array()).matrix();
  state.f2 = Field(Rep::SqrtMu, N, ny);
  const long n_steps = static_cast<long>(std::ceil(t_end / dt - 1e-12));
  for (long k = 0; k < n_steps; ++k) state = step(ctx, std::move(state), dt);
  return state;
}

}  // namespace couette
