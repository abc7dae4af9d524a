#pragma once

// Binary field dumps (64-byte header + row-major doubles), the collision
// kernel cache, and JSON metadata echo.  Dumps are exact round-trips;
// readers refuse payloads whose grid hash does not match the live grid.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "couette/collision.hpp"
#include "couette/config.hpp"
#include "couette/field.hpp"
#include "couette/grid.hpp"

namespace couette {

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

/// Hash of the discretization a field lives on (velocity cube + slab).
inline std::uint64_t grid_hash(const VelocityGrid& grid, const SpatialGrid& sg) {
  std::uint64_t h = fnv1a64(&grid.n_per_axis, sizeof grid.n_per_axis);
  h = fnv1a64(&grid.v_max, sizeof grid.v_max, h);
  h = fnv1a64(&sg.n_y, sizeof sg.n_y, h);
  return h;
}

namespace detail {

constexpr char kFieldMagic[8] = {'C', 'V', 'F', 'L', 'D', '0', '0', '1'};
constexpr char kKernelMagic[8] = {'C', 'V', 'K', 'R', 'N', '0', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

struct FieldHeader {  // exactly 64 bytes on every sane ABI
  char magic[8];
  std::uint32_t version;
  std::uint32_t rep;
  std::uint64_t grid;
  std::uint32_t n_v;
  std::uint32_t n_y;
  char pad[32];
};
static_assert(sizeof(FieldHeader) == 64, "field header must be 64 bytes");

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void get(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("io: truncated file");
}

inline void put_matrix(std::ofstream& out, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put(out, m(i, j));
}

inline void get_matrix(std::ifstream& in, Eigen::Ref<Eigen::MatrixXd> m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) get(in, m(i, j));
}

}  // namespace detail

inline void write_field(const std::string& path, const Field& f, std::uint64_t grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  detail::FieldHeader h{};
  std::memcpy(h.magic, detail::kFieldMagic, 8);
  h.version = detail::kFormatVersion;
  h.rep = static_cast<std::uint32_t>(f.rep);
  h.grid = grid;
  h.n_v = static_cast<std::uint32_t>(f.n_v());
  h.n_y = static_cast<std::uint32_t>(f.n_y());
  out.write(reinterpret_cast<const char*>(&h), sizeof h);
  detail::put_matrix(out, f.data);
  if (!out) throw std::runtime_error("io: short write to '" + path + "'");
}

inline Field read_field(const std::string& path, std::uint64_t expected_grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
  detail::FieldHeader h{};
  in.read(reinterpret_cast<char*>(&h), sizeof h);
  if (!in || std::memcmp(h.magic, detail::kFieldMagic, 8) != 0)
    throw std::runtime_error("io: '" + path + "' is not a field dump");
  if (h.version != detail::kFormatVersion)
    throw std::runtime_error("io: '" + path + "' has unsupported version");
  if (h.grid != expected_grid)
    throw std::runtime_error("io: '" + path + "' was produced on a different grid");
  Field f(static_cast<Rep>(h.rep), static_cast<int>(h.n_v), static_cast<int>(h.n_y));
  detail::get_matrix(in, f.data);
  return f;
}

// ---------------------------------------------------------------------------
// Kernel cache: the assembled operators keyed by (grid, b_amp, n_omega)
// ---------------------------------------------------------------------------

inline std::uint64_t kernel_key(const VelocityGrid& grid, double b_amp, int n_omega) {
  std::uint64_t h = fnv1a64(&grid.n_per_axis, sizeof grid.n_per_axis);
  h = fnv1a64(&grid.v_max, sizeof grid.v_max, h);
  h = fnv1a64(&b_amp, sizeof b_amp, h);
  h = fnv1a64(&n_omega, sizeof n_omega, h);
  return h;
}

inline void save_kernel_cache(const std::string& path, const CollisionOperators& ops,
                              const VelocityGrid& grid, double b_amp, int n_omega) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  out.write(detail::kKernelMagic, 8);
  detail::put(out, detail::kFormatVersion);
  const std::uint64_t key = kernel_key(grid, b_amp, n_omega);
  detail::put(out, key);
  const std::uint32_t N = static_cast<std::uint32_t>(grid.size());
  detail::put(out, N);
  detail::put(out, ops.nu0);
  detail::put(out, ops.b0);
  detail::put(out, ops.c0);
  detail::put(out, ops.M);
  detail::put(out, ops.assembly_asym);
  detail::put(out, ops.escape_fraction);
  for (double v : ops.chiM_mask) detail::put(out, v);
  for (double v : ops.nu_per_node) detail::put(out, v);
  detail::put_matrix(out, ops.invariants);
  detail::put_matrix(out, ops.gram_inv);
  detail::put_matrix(out, ops.Kcal_matrix);
  detail::put_matrix(out, ops.K_matrix);
  if (!out) throw std::runtime_error("io: short write to '" + path + "'");
}

inline CollisionOperators load_kernel_cache(const std::string& path,
                                            const VelocityGrid& grid, double b_amp,
                                            int n_omega) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kKernelMagic, 8) != 0)
    throw std::runtime_error("io: '" + path + "' is not a kernel cache");
  std::uint32_t version;
  detail::get(in, version);
  if (version != detail::kFormatVersion)
    throw std::runtime_error("io: '" + path + "' has unsupported version");
  std::uint64_t key;
  detail::get(in, key);
  if (key != kernel_key(grid, b_amp, n_omega))
    throw std::runtime_error("io: kernel cache '" + path +
                             "' does not match the requested grid/kernel");
  std::uint32_t N;
  detail::get(in, N);
  if (N != static_cast<std::uint32_t>(grid.size()))
    throw std::runtime_error("io: kernel cache size mismatch");
  CollisionOperators ops;
  detail::get(in, ops.nu0);
  detail::get(in, ops.b0);
  detail::get(in, ops.c0);
  detail::get(in, ops.M);
  detail::get(in, ops.assembly_asym);
  detail::get(in, ops.escape_fraction);
  ops.chiM_mask.resize(N);
  for (double& v : ops.chiM_mask) detail::get(in, v);
  ops.nu_per_node.resize(N);
  for (double& v : ops.nu_per_node) detail::get(in, v);
  ops.invariants.resize(N, 5);
  detail::get_matrix(in, ops.invariants);
  Eigen::MatrixXd gram(5, 5);
  detail::get_matrix(in, gram);
  ops.gram_inv = gram;
  Eigen::MatrixXd tmp(N, N);
  detail::get_matrix(in, tmp);
  ops.Kcal_matrix = tmp;
  detail::get_matrix(in, tmp);
  ops.K_matrix = tmp;
  return ops;
}

// ---------------------------------------------------------------------------
// JSON echo
// ---------------------------------------------------------------------------

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j;
  j["alpha"] = c.alpha;
  j["q"] = c.q;
  j["M"] = c.M;
  j["M_auto"] = c.M_auto;
  j["M_capped"] = c.M_capped;
  j["n_v"] = c.n_v;
  j["v_max"] = c.v_max;
  j["n_y"] = c.n_y;
  j["b_amp"] = c.b_amp;
  j["n_omega"] = c.n_omega;
  j["epsilon_schedule"] = c.epsilon_schedule;
  j["sigma_steps"] = c.sigma_steps;
  j["tol"] = c.tol;
  j["max_iter"] = c.max_iter;
  j["max_outer"] = c.max_outer;
  j["dt"] = c.dt;
  j["t_end"] = c.t_end;
  j["record_every"] = c.record_every;
  j["scheme"] = c.scheme;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["allow_unstable"] = c.allow_unstable;
  return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace couette
