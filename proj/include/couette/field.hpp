#pragma once

// A Field samples one scalar kinetic unknown on (spatial node x velocity
// node) and carries a representation tag: absolute density F, the
// sqrt(mu)-weighted perturbation f (F = mu + sqrt(mu) f or similar), or a
// raw Caflisch component (absolute scaling but not a full density).
// Storage is a dense matrix with one column per spatial node, so applying
// an assembled velocity-space operator to every spatial node is a single
// matrix product.

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

#include "couette/grid.hpp"

namespace couette {

enum class Rep { Absolute, SqrtMu, Raw };

inline const char* rep_name(Rep r) {
  switch (r) {
    case Rep::Absolute: return "absolute";
    case Rep::SqrtMu: return "sqrt_mu";
    case Rep::Raw: return "raw";
  }
  return "?";
}

struct Field {
  Rep rep = Rep::SqrtMu;
  Eigen::MatrixXd data;  // size: n_velocity x n_spatial

  Field() = default;
  Field(Rep r, int n_v, int n_y) : rep(r), data(Eigen::MatrixXd::Zero(n_v, n_y)) {}

  int n_v() const { return static_cast<int>(data.rows()); }
  int n_y() const { return static_cast<int>(data.cols()); }
};

inline void require_rep(const Field& f, Rep want, const char* where) {
  if (f.rep != want)
    throw std::invalid_argument(std::string(where) + ": field is in '" +
                                rep_name(f.rep) + "' representation, expected '" +
                                rep_name(want) + "'");
}

/// Centered difference in v_x with zero extension beyond the cube.  This
/// single stencil is shared by every consumer of a velocity derivative
/// (shear sources, residual evaluation), so their discrete forms cancel
/// exactly where the continuum terms do.
inline Eigen::MatrixXd dvx_centered(const VelocityGrid& grid, const Eigen::MatrixXd& f) {
  const int n = grid.n_per_axis, plane = n * n;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(f.rows(), f.cols());
  const double inv2h = 1.0 / (2.0 * grid.h);
  for (int ix = 0; ix < n; ++ix)
    for (int r = 0; r < plane; ++r) {
      const int idx = ix * plane + r;
      if (ix + 1 < n) out.row(idx) = f.row((ix + 1) * plane + r) * inv2h;
      if (ix - 1 >= 0) out.row(idx) -= f.row((ix - 1) * plane + r) * inv2h;
    }
  return out;
}

/// Index-exact antisymmetrization in v_x: f <- (f - f o flip_x)/2.
inline void antisymmetrize_vx(const VelocityGrid& grid, Field& f) {
  Eigen::MatrixXd flipped(f.data.rows(), f.data.cols());
  for (int i = 0; i < grid.size(); ++i)
    flipped.row(i) = f.data.row(grid.flip_x(i));
  f.data = 0.5 * (f.data - flipped);
}

}  // namespace couette
