#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "couette/transport.hpp"
#include "doctest.h"

using namespace couette;

namespace {

// Adaptive Simpson quadrature (plain recursion, no solver machinery).
template <class F>
double adaptive_simpson(F f, double a, double b, double tol, int depth = 24) {
  const double c = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fc = f(c);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
  const double lc = 0.5 * (a + c), rc = 0.5 * (c + b);
  const double left = (c - a) / 6.0 * (fa + 4.0 * f(lc) + fc);
  const double right = (b - c) / 6.0 * (fc + 4.0 * f(rc) + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, c, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, c, b, 0.5 * tol, depth - 1);
}

}  // namespace

TEST_CASE("backward exit geometry, including the degenerate wall start") {
  const Vec3 up = {0.3, 0.5, -0.1}, down = {0.0, -0.25, 0.4};
  // Interior points: exit through the upstream wall.
  auto e = backward_exit(0.2, up);
  CHECK(e.y_b == -1);
  CHECK(e.t_b == doctest::Approx(1.2 / 0.5).epsilon(1e-14));
  e = backward_exit(-0.5, down);
  CHECK(e.y_b == +1);
  CHECK(e.t_b == doctest::Approx(1.5 / 0.25).epsilon(1e-14));
  // Starting at the wall the formula would exit from: full traversal
  // 2/|v_y| to the opposite wall instead of the degenerate t_b = 0.
  e = backward_exit(-1.0, up);
  CHECK(e.y_b == +1);
  CHECK(e.t_b == doctest::Approx(2.0 / 0.5).epsilon(1e-14));
  e = backward_exit(1.0, down);
  CHECK(e.y_b == -1);
  CHECK(e.t_b == doctest::Approx(2.0 / 0.25).epsilon(1e-14));
  // Non-degenerate wall starts exit immediately through the other wall.
  e = backward_exit(1.0, up);
  CHECK(e.y_b == -1);
  CHECK(e.t_b == doctest::Approx(4.0).epsilon(1e-14));

  CHECK_THROWS_AS(backward_exit(0.0, Vec3{1.0, 0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(backward_exit(1.5, up), std::invalid_argument);
  CHECK_THROWS_AS(backward_exit(-1.5, down), std::invalid_argument);
}

TEST_CASE("backward trajectory applies the shear only to v_x") {
  const Vec3 v = {0.1, -0.7, 0.3};
  double Y;
  Vec3 V;
  trajectory(0.4, v, 0.05, 2.0, Y, V);
  CHECK(Y == doctest::Approx(0.4 + 1.4).epsilon(1e-14));
  CHECK(V[0] == doctest::Approx(0.1 + 0.05 * 2.0 * (-0.7)).epsilon(1e-14));
  CHECK(V[1] == v[1]);
  CHECK(V[2] == v[2]);
}

TEST_CASE("segment coefficients integrate a linear source exactly") {
  const auto grid = build_velocity_grid(8, 4.0);
  const double dy = 0.25, d = 1.3;
  const auto sc = segment_coeffs(grid, dy, d);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int iy = 0; iy < grid.n_per_axis; ++iy) {
    const double absvy = std::abs(grid.axis_coord(iy));
    const double T = dy / absvy;
    CHECK(sc.E[iy] == doctest::Approx(std::exp(-d * T)).epsilon(1e-14));
    CHECK(sc.A[iy] + sc.B[iy] ==
          doctest::Approx(-std::expm1(-d * T) / d).epsilon(1e-13));
    // Oracle: ∫₀ᵀ e^{−d(T−s)} S(s) ds for the linear reconstruction from
    // S_prev at s=0 to S_next at s=T, evaluated by adaptive quadrature.
    const double s_prev = unif(rng), s_next = unif(rng);
    const double want = adaptive_simpson(
        [&](double s) {
          return std::exp(-d * (T - s)) * (s_prev + (s_next - s_prev) * s / T);
        },
        0.0, T, 1e-13);
    CHECK(sc.A[iy] * s_next + sc.B[iy] * s_prev ==
          doctest::Approx(want).epsilon(1e-10));
  }
  CHECK_THROWS_AS(segment_coeffs(grid, dy, 0.0), std::invalid_argument);
}

TEST_CASE("transport inverse: closed form for a y-constant source") {
  const auto grid = build_velocity_grid(8, 4.0);
  const auto sg = build_spatial_grid(11);
  const int N = grid.size();
  const double d = 0.9;
  Field src(Rep::SqrtMu, N, sg.n_y);
  for (int i = 0; i < N; ++i)
    src.data.row(i).setConstant(std::cos(0.7 * grid.nodes[i][0]) +
                                0.2 * grid.nodes[i][1]);
  const Field g = transport_inverse(grid, sg, src, d);
  for (int j = 0; j < sg.n_y; ++j)
    for (int i = 0; i < N; ++i) {
      const double vy = grid.nodes[i][1];
      const double dist = vy > 0.0 ? sg.y[j] + 1.0 : 1.0 - sg.y[j];
      const double want =
          src.data(i, j) / d * -std::expm1(-d * dist / std::abs(vy));
      CHECK(g.data(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("transport inverse: linear-in-y source and prescribed inflow") {
  const auto grid = build_velocity_grid(6, 3.0);
  const auto sg = build_spatial_grid(9);
  const int N = grid.size();
  const double d = 1.4;
  // S(y, v) = a(v) + b(v)·y: the per-segment linear reconstruction is exact,
  // so the discrete solution matches the continuum mild form to roundoff.
  Eigen::VectorXd a(N), b(N);
  for (int i = 0; i < N; ++i) {
    a[i] = std::sin(grid.nodes[i][2]) + 0.5;
    b[i] = 0.3 * grid.nodes[i][0];
  }
  Field src(Rep::SqrtMu, N, sg.n_y);
  for (int j = 0; j < sg.n_y; ++j) src.data.col(j) = a + sg.y[j] * b;
  BoundaryData bd;
  bd.bottom = Eigen::VectorXd::Constant(N, 0.7);
  bd.top = Eigen::VectorXd::Constant(N, -0.4);
  const Field g = transport_inverse(grid, sg, src, d, &bd);
  for (int j = 0; j < sg.n_y; ++j)
    for (int i = 0; i < N; ++i) {
      const double vy = grid.nodes[i][1];
      const double y = sg.y[j];
      const double y_in = vy > 0.0 ? -1.0 : 1.0;
      const double T = (y - y_in) / vy;
      const double E = std::exp(-d * T);
      const double inflow = vy > 0.0 ? bd.bottom[i] : bd.top[i];
      // ∫₀ᵀ e^{−d(T−s)}(a + b(y_in + v_y s))ds + E·inflow, in closed form.
      const double want = inflow * E + (a[i] + b[i] * y) * -std::expm1(-d * T) / d -
                          b[i] * vy * (1.0 - E * (1.0 + d * T)) / (d * d);
      CHECK(g.data(i, j) == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("shift_vx: identity, exact lattice shifts, interpolation oracle") {
  const auto grid = build_velocity_grid(6, 3.0);
  const int N = grid.size(), n = grid.n_per_axis;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::VectorXd f(N);
  for (int i = 0; i < N; ++i) f[i] = unif(rng);

  CHECK((shift_vx(grid, f, 0.0) - f).cwiseAbs().maxCoeff() == 0.0);

  // Whole-cell shift: exact index shift with zero fill.
  const Eigen::VectorXd s1 = shift_vx(grid, f, grid.h);
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz) {
        const double want = ix + 1 < n ? f[grid.index(ix + 1, iy, iz)] : 0.0;
        CHECK(s1[grid.index(ix, iy, iz)] == doctest::Approx(want).epsilon(1e-14));
      }

  // Fractional shift: linear interpolation between the two bracketing nodes.
  const double s = 0.4 * grid.h;
  const Eigen::VectorXd sf = shift_vx(grid, f, s);
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz) {
        const double t = 0.4;
        double want = (1.0 - t) * f[grid.index(ix, iy, iz)];
        if (ix + 1 < n) want += t * f[grid.index(ix + 1, iy, iz)];
        CHECK(sf[grid.index(ix, iy, iz)] == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("wall measure sampling matches its analytic moments") {
  std::mt19937_64 rng(123);
  const int n = 200000;
  double sum_vy = 0.0, sum_vx = 0.0, sum_vx2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const Vec3 v = sample_wall_velocity(-1.0, rng);
    // Backward-cycle convention: at the bottom wall v_y points into the
    // wall, so the backward characteristic re-enters the slab.
    CHECK(v[1] < 0.0);
    sum_vy += -v[1];
    sum_vx += v[0];
    sum_vx2 += v[0] * v[0];
  }
  // |v_y| is Rayleigh(1): mean √(π/2); v_x is a unit Gaussian.
  CHECK(sum_vy / n == doctest::Approx(std::sqrt(kPi / 2.0)).epsilon(0.01));
  CHECK(std::abs(sum_vx / n) < 0.01);
  CHECK(sum_vx2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("bounce cycles walk the walls backward in time") {
  std::mt19937_64 rng(7);
  const Vec3 v0 = {0.2, 0.6, -0.1};
  const auto c = sample_bounce_cycle(8.0, 0.0, v0, 0.01, rng, 25);
  REQUIRE(c.t.size() >= 2);
  CHECK(c.t[0] == 8.0);
  CHECK(c.y[0] == 0.0);
  for (std::size_t k = 1; k < c.t.size(); ++k) {
    CHECK(c.t[k] < c.t[k - 1]);
    CHECK(std::abs(c.y[k]) == 1.0);
    // Sampled velocity leaves the wall it sits on.
    CHECK(c.v[k][1] * c.y[k] > 0.0);
    if (k >= 2) CHECK(c.y[k] == -c.y[k - 1]);  // walls alternate
  }
  CHECK_THROWS_AS(sample_bounce_cycle(1.0, 0.0, v0, 0.0, rng, 0),
                  std::invalid_argument);
}

TEST_CASE("cycle survival decays in the bounce count") {
  std::mt19937_64 rng(99);
  const int n = 20000;
  const auto s5 = estimate_cycle_survival(10.0, 5, n, rng);
  const auto s15 = estimate_cycle_survival(10.0, 15, n, rng);
  const auto s40 = estimate_cycle_survival(10.0, 40, n, rng);
  const double sigma = 3.0 * (s5.stderr_ + s15.stderr_);
  CHECK(s15.survival <= s5.survival + sigma);
  CHECK(s40.survival <= s15.survival + 3.0 * (s15.stderr_ + s40.stderr_));
  CHECK(s40.survival < 0.1);
  CHECK_THROWS_AS(estimate_cycle_survival(0.0, 5, n, rng), std::invalid_argument);
}

TEST_CASE("Peetre weight-ratio bound holds along sampled cycles") {
  std::mt19937_64 rng(31);
  const int q = 3;
  const double alpha = 0.4;
  const double bound = std::pow(1.0 + 4.0 * alpha * alpha, q) *
                       std::exp(alpha * alpha);
  for (int k = 0; k < 2000; ++k) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 v = {gauss(rng), 0.0, gauss(rng)};
    do v[1] = gauss(rng); while (v[1] == 0.0);
    const auto c = sample_bounce_cycle(6.0, 0.3, v, alpha, rng, 30);
    CHECK(weight_ratio_check(c, q, alpha) <= bound * (1.0 + 1e-12));
  }
}
