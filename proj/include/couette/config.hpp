#pragma once

// Flat key=value run configuration.  Unknown keys are hard errors (no
// silent defaults for misspellings); "auto" fields are resolved at
// validation and echoed — with their provenance — into run metadata.

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "couette/grid.hpp"

namespace couette {

struct RunConfig {
  double alpha = 0.01;
  int q = 6;
  double M = -1.0;  // resolved value; <0 while still "auto"
  bool M_auto = true;
  bool M_capped = false;  // set when the 0.8·v_max cap bites
  int n_v = 12;
  double v_max = 6.0;
  int n_y = 17;
  double b_amp = 1.0 / (2.0 * kPi);
  int n_omega = 8;
  std::vector<double> epsilon_schedule = {1e-1, 1e-2, 1e-3};
  int sigma_steps = 4;
  double tol = 1e-10;
  int max_iter = 400;
  int max_outer = 30;
  double dt = 0.02;
  double t_end = 5.0;
  int record_every = 5;
  std::string scheme = "direct";
  long seed = 12345;
  std::string output_dir = "out";
  bool allow_unstable = false;  // override for the 2qα ≤ ν₀/2 check
};

namespace detail {

inline double to_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "': bad number '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: key '" + key + "': bad number '" + v + "'");
  return x;
}

inline long to_int(const std::string& key, const std::string& v) {
  const double x = to_real(key, v);
  const long i = static_cast<long>(std::llround(x));
  if (static_cast<double>(i) != x)
    throw std::invalid_argument("config: key '" + key + "': expected integer, got '" +
                                v + "'");
  return i;
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_real(key, item));
  if (out.empty())
    throw std::invalid_argument("config: key '" + key + "': empty list");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Applies one key=value pair; throws on unknown key or malformed value.
inline void apply_config_kv(RunConfig& c, const std::string& key,
                            const std::string& value) {
  using detail::to_int;
  using detail::to_list;
  using detail::to_real;
  if (key == "alpha") c.alpha = to_real(key, value);
  else if (key == "q") c.q = static_cast<int>(to_int(key, value));
  else if (key == "M") {
    if (value == "auto") { c.M_auto = true; c.M = -1.0; }
    else { c.M_auto = false; c.M = to_real(key, value); }
  }
  else if (key == "n_v") c.n_v = static_cast<int>(to_int(key, value));
  else if (key == "v_max") c.v_max = to_real(key, value);
  else if (key == "n_y") c.n_y = static_cast<int>(to_int(key, value));
  else if (key == "b_amp") c.b_amp = to_real(key, value);
  else if (key == "n_omega") c.n_omega = static_cast<int>(to_int(key, value));
  else if (key == "epsilon_schedule") c.epsilon_schedule = to_list(key, value);
  else if (key == "sigma_steps") c.sigma_steps = static_cast<int>(to_int(key, value));
  else if (key == "tol") c.tol = to_real(key, value);
  else if (key == "max_iter") c.max_iter = static_cast<int>(to_int(key, value));
  else if (key == "max_outer") c.max_outer = static_cast<int>(to_int(key, value));
  else if (key == "dt") c.dt = to_real(key, value);
  else if (key == "t_end") c.t_end = to_real(key, value);
  else if (key == "record_every") c.record_every = static_cast<int>(to_int(key, value));
  else if (key == "scheme") {
    if (value != "direct" && value != "caflisch")
      throw std::invalid_argument("config: scheme must be direct|caflisch, got '" +
                                  value + "'");
    c.scheme = value;
  }
  else if (key == "seed") c.seed = to_int(key, value);
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "allow_unstable") c.allow_unstable = to_int(key, value) != 0;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Resolves "auto" fields and enforces invariants.  ν₀ is estimated from
/// the continuum angular integral 2π·b_amp·∫₀¹... = 2π·b_amp for the |z|
/// kernel, which is exact up to quadrature error.
inline void validate_config(RunConfig& c) {
  if (c.alpha < 0.0) throw std::invalid_argument("config: alpha must be >= 0");
  if (c.q < 0) throw std::invalid_argument("config: q must be >= 0");
  if (!(c.tol > 0.0) || !(c.dt > 0.0) || !(c.t_end > 0.0))
    throw std::invalid_argument("config: tolerances and times must be positive");
  if (c.b_amp <= 0.0) throw std::invalid_argument("config: b_amp must be > 0");
  for (std::size_t i = 0; i < c.epsilon_schedule.size(); ++i) {
    if (!(c.epsilon_schedule[i] > 0.0))
      throw std::invalid_argument("config: epsilon_schedule entries must be > 0");
    if (i && c.epsilon_schedule[i] >= c.epsilon_schedule[i - 1])
      throw std::invalid_argument("config: epsilon_schedule must be decreasing");
  }
  // Weight-vs-range sanity: w_q = (1+|v|²)^q must stay representable.
  if (c.q * std::log1p(c.v_max * c.v_max) > 700.0)
    throw std::invalid_argument("config: q·ln(1+v_max²) out of floating-point range");
  if (c.M_auto) {
    const double cap = 0.8 * c.v_max;
    const double raw = static_cast<double>(c.q) * c.q;
    c.M = std::min(raw, cap);
    c.M_capped = c.M < raw;
  }
  const double nu0_est = 2.0 * kPi * c.b_amp;
  if (!c.allow_unstable && 2.0 * c.q * c.alpha > 0.5 * nu0_est)
    throw std::invalid_argument(
        "config: stability check failed: 2·q·alpha = " +
        std::to_string(2.0 * c.q * c.alpha) + " > nu0/2 = " +
        std::to_string(0.5 * nu0_est) + " (set allow_unstable=1 to override)");
}

/// Parses a flat key=value file ('#' comments, blank lines allowed).
inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": expected key=value");
    apply_config_kv(c, detail::trim(line.substr(0, eq)),
                    detail::trim(line.substr(eq + 1)));
  }
  validate_config(c);
  return c;
}

}  // namespace couette
