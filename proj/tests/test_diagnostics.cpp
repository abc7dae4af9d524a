#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "couette/diagnostics.hpp"
#include "doctest.h"

using namespace couette;

TEST_CASE("spatial trapezoid weights sum to the slab length") {
  const auto sg = build_spatial_grid(13);
  double s = 0.0;
  for (int j = 0; j < sg.n_y; ++j) s += spatial_weight(sg, j);
  CHECK(s == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(spatial_weight(sg, 0) == doctest::Approx(0.5 * sg.dy).epsilon(1e-14));
  CHECK(spatial_weight(sg, 5) == doctest::Approx(sg.dy).epsilon(1e-14));
}

TEST_CASE("half flux of mu approaches 1/sqrt(2 pi)") {
  const auto grid = build_velocity_grid(40, 7.0);
  const auto tables = eval_reference(grid, 0);
  // The integrand |v_y|μ has a kink at v_y = 0, so the midpoint sum is O(h²).
  CHECK(half_flux_mu(grid, tables) ==
        doctest::Approx(1.0 / std::sqrt(2.0 * kPi)).epsilon(6e-3));
  CHECK(wall_normalization(grid, tables) ==
        doctest::Approx(1.0 / half_flux_mu(grid, tables)).epsilon(1e-14));
}

TEST_CASE("norms: homogeneity, exact values on simple fields") {
  const auto grid = build_velocity_grid(8, 4.0);
  const auto sg = build_spatial_grid(9);
  const auto tables = eval_reference(grid, 3);
  const int N = grid.size();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Field f(Rep::SqrtMu, N, sg.n_y);
  for (int j = 0; j < sg.n_y; ++j)
    for (int i = 0; i < N; ++i) f.data(i, j) = unif(rng);

  Field g = f;
  g.data *= -2.5;
  CHECK(weighted_sup_norm(grid, tables, g) ==
        doctest::Approx(2.5 * weighted_sup_norm(grid, tables, f)).epsilon(1e-13));
  CHECK(l2_norm(grid, sg, g) == doctest::Approx(2.5 * l2_norm(grid, sg, f)).epsilon(1e-13));
  CHECK(boundary_trace(grid, g, true) ==
        doctest::Approx(2.5 * boundary_trace(grid, f, true)).epsilon(1e-13));

  // Constant field: the L² norm is |c|·sqrt(vol), vol = 2·(2 v_max)³.
  Field c(Rep::SqrtMu, N, sg.n_y);
  c.data.setConstant(0.7);
  const double vol = 2.0 * std::pow(2.0 * grid.v_max, 3);
  CHECK(l2_norm(grid, sg, c) == doctest::Approx(0.7 * std::sqrt(vol)).epsilon(1e-12));
  // The weighted sup norm picks the cube corner where w_q peaks.
  const double wq_max = std::pow(1.0 + 3.0 * std::pow(grid.v_max - 0.5 * grid.h, 2), 3);
  CHECK(weighted_sup_norm(grid, tables, c) ==
        doctest::Approx(0.7 * wq_max).epsilon(1e-12));

  const auto r = norm_report(grid, sg, tables, f);
  CHECK(r.sup_wq == weighted_sup_norm(grid, tables, f));
  CHECK(r.l2 == l2_norm(grid, sg, f));
  CHECK(r.trace_out == boundary_trace(grid, f, true));
  CHECK(r.trace_in == boundary_trace(grid, f, false));
}

TEST_CASE("boundary traces split the half spaces correctly") {
  const auto grid = build_velocity_grid(6, 3.0);
  const int N = grid.size();
  Field f(Rep::SqrtMu, N, 5);
  f.data.setZero();
  // Populate only (top wall, v_y > 0): purely outgoing content.
  for (int i = 0; i < N; ++i)
    if (grid.nodes[i][1] > 0.0) f.data(i, 4) = 1.0;
  CHECK(boundary_trace(grid, f, true) > 0.0);
  CHECK(boundary_trace(grid, f, false) == 0.0);
  // Analytic value: sqrt(w · Σ_{v_y>0} v_y).
  double s = 0.0;
  for (int i = 0; i < N; ++i)
    if (grid.nodes[i][1] > 0.0) s += grid.nodes[i][1];
  CHECK(boundary_trace(grid, f, true) ==
        doctest::Approx(std::sqrt(grid.weight * s)).epsilon(1e-13));
}

TEST_CASE("oddness defect vanishes exactly for v_x-odd fields") {
  const auto grid = build_velocity_grid(6, 3.0);
  const int N = grid.size();
  Field f(Rep::SqrtMu, N, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < N; ++i)
      f.data(i, j) = grid.nodes[i][0] * std::cos(grid.nodes[i][1]);
  CHECK(oddness_defect_vx(grid, f) < 1e-15);
  f.data(grid.index(1, 2, 3), 1) += 0.25;
  CHECK(oddness_defect_vx(grid, f) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("the Maxwellian satisfies the diffuse wall closure exactly") {
  const auto grid = build_velocity_grid(10, 5.0);
  const auto sg = build_spatial_grid(9);
  const auto tables = eval_reference(grid, 2);
  const int N = grid.size();
  Field F(Rep::Absolute, N, sg.n_y);
  for (int j = 0; j < sg.n_y; ++j)
    for (int i = 0; i < N; ++i) F.data(i, j) = tables.mu[i];
  // Outgoing flux of μ equals the discrete half flux, and the discrete
  // normalization is defined as its inverse, so the residual is exact zero
  // up to roundoff — for both walls.
  CHECK(wall_flux(grid, F, -1, true) ==
        doctest::Approx(half_flux_mu(grid, tables)).epsilon(1e-13));
  CHECK(bc_residual(grid, tables, F, -1) < 1e-15);
  CHECK(bc_residual(grid, tables, F, +1) < 1e-15);
  CHECK(total_mass(grid, sg, F) ==
        doctest::Approx(grid_mass(grid, tables)).epsilon(1e-13));
}

TEST_CASE("wall_flux and bc_residual demand the absolute representation") {
  const auto grid = build_velocity_grid(6, 3.0);
  const auto tables = eval_reference(grid, 2);
  Field f(Rep::SqrtMu, grid.size(), 8);
  f.data.setZero();
  CHECK_THROWS_AS(wall_flux(grid, f, -1), std::invalid_argument);
  CHECK_THROWS_AS(bc_residual(grid, tables, f, +1), std::invalid_argument);
}

TEST_CASE("decay fit recovers exact exponentials and flags bad input") {
  std::vector<std::pair<double, double>> series;
  for (int k = 0; k < 40; ++k) {
    const double t = 0.1 * k;
    series.emplace_back(t, 3.0 * std::exp(-0.8 * t));
  }
  auto fit = decay_rate_fit(series);
  CHECK(fit.lambda0 == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(fit.residual < 1e-12);
  CHECK(fit.t_lo == 0.0);
  CHECK(fit.t_hi == doctest::Approx(3.9));

  // Noisy series: rate still recovered, residual reflects the noise level.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 0.02);
  for (auto& [t, v] : series) v *= std::exp(gauss(rng));
  fit = decay_rate_fit(series);
  CHECK(fit.lambda0 == doctest::Approx(0.8).epsilon(0.05));
  CHECK(fit.residual < 0.05);

  // A constant series fits rate zero.
  std::vector<std::pair<double, double>> flat;
  for (int k = 0; k < 12; ++k) flat.emplace_back(0.5 * k, 2.0);
  fit = decay_rate_fit(flat);
  CHECK(std::abs(fit.lambda0) < 1e-13);
  CHECK(fit.residual < 1e-13);

  CHECK_THROWS_AS(decay_rate_fit({}), std::invalid_argument);
  std::vector<std::pair<double, double>> small(5, {1.0, 1.0});
  CHECK_THROWS_AS(decay_rate_fit(small), std::invalid_argument);
  std::vector<std::pair<double, double>> bad(12, {1.0, 1.0});
  bad[3].second = 0.0;
  CHECK_THROWS_AS(decay_rate_fit(bad), std::invalid_argument);
}
