// Command-line driver: steady | unsteady | verify-kernel | cycles | report.
// Each subcommand builds its pipeline from a flat key=value config (every
// key also available as a flag override), writes its declared artifacts
// under output_dir, and echoes the effective configuration plus residuals
// into run_meta.json.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "couette/collision.hpp"
#include "couette/config.hpp"
#include "couette/diagnostics.hpp"
#include "couette/field.hpp"
#include "couette/grid.hpp"
#include "couette/io.hpp"
#include "couette/steady.hpp"
#include "couette/transport.hpp"
#include "couette/unsteady.hpp"

namespace {

constexpr const char* kVersion = "1.0.0";

struct Cli {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  int threads = 1;
};

// Registers --config plus one string flag per config key on a subcommand.
void add_common_options(CLI::App* cmd, Cli& cli) {
  cmd->add_option("--config", cli.config_path, "flat key=value config file");
  cmd->add_option("--threads", cli.threads, "worker-count bound (1 = serial)");
  static const char* keys[] = {
      "alpha", "q", "M", "n_v", "v_max", "n_y", "b_amp", "n_omega",
      "epsilon_schedule", "sigma_steps", "tol", "max_iter", "max_outer",
      "dt", "t_end", "record_every", "scheme", "seed", "output_dir",
      "allow_unstable"};
  for (const char* key : keys)
    cmd->add_option_function<std::string>(
        std::string("--") + key,
        [&cli, key](const std::string& v) { cli.overrides[key] = v; },
        std::string("override config key ") + key);
}

couette::RunConfig load_config(const Cli& cli) {
  couette::RunConfig c;
  if (!cli.config_path.empty()) {
    c = couette::parse_config(cli.config_path);
    // re-validate after overrides below
  }
  for (const auto& [k, v] : cli.overrides) couette::apply_config_kv(c, k, v);
  couette::validate_config(c);
  return c;
}

// Full discretization bundle shared by the physics subcommands.
struct Pipeline {
  couette::RunConfig cfg;
  couette::VelocityGrid grid;
  couette::SpatialGrid sg;
  couette::ReferenceTables tables;
  couette::CollisionKernelSpec spec;
  couette::CollisionOperators ops;
};

Pipeline build_pipeline(const couette::RunConfig& cfg, bool need_operators) {
  Pipeline p{cfg,
             couette::build_velocity_grid(cfg.n_v, cfg.v_max),
             couette::build_spatial_grid(cfg.n_y),
             {},
             couette::build_kernel_spec(cfg.b_amp, cfg.n_omega),
             {}};
  p.tables = couette::eval_reference(p.grid, cfg.q);
  if (!need_operators) return p;
  const char* cache_dir = std::getenv("COUETTE_CACHE_DIR");
  if (cache_dir != nullptr) {
    char name[64];
    std::snprintf(name, sizeof name, "kernel_%016" PRIx64 ".bin",
                  couette::kernel_key(p.grid, cfg.b_amp, cfg.n_omega));
    const std::filesystem::path path = std::filesystem::path(cache_dir) / name;
    if (std::filesystem::exists(path)) {
      p.ops = couette::load_kernel_cache(path.string(), p.grid, cfg.b_amp, cfg.n_omega);
      return p;
    }
    p.ops = couette::assemble_operators(p.grid, p.tables, p.spec, cfg.M);
    std::filesystem::create_directories(cache_dir);
    couette::save_kernel_cache(path.string(), p.ops, p.grid, cfg.b_amp, cfg.n_omega);
    return p;
  }
  p.ops = couette::assemble_operators(p.grid, p.tables, p.spec, cfg.M);
  return p;
}

nlohmann::json base_meta(const Pipeline& p, int threads, double wall_seconds) {
  nlohmann::json j;
  j["config"] = couette::config_json(p.cfg);
  j["version"] = kVersion;
  j["format_version"] = 1;
  j["grid_hash"] = couette::grid_hash(p.grid, p.sg);
  j["threads"] = threads;
  j["wall_clock_seconds"] = wall_seconds;
  return j;
}

std::FILE* open_csv(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (f == nullptr)
    throw std::runtime_error("cannot write '" + path.string() + "'");
  return f;
}

// ---------------------------------------------------------------------------
// steady
// ---------------------------------------------------------------------------

struct SteadyArtifacts {
  couette::G1Solution g1;
  couette::RemainderSolution gr;
  couette::SteadyState st;
  couette::ResidualNorms res;
  double bc_bottom = 0.0, bc_top = 0.0;
};

SteadyArtifacts run_steady(const Pipeline& p) {
  SteadyArtifacts a;
  couette::G1Options g1opt;
  g1opt.epsilon_schedule = p.cfg.epsilon_schedule;
  g1opt.sigma_steps = p.cfg.sigma_steps;
  g1opt.tol = p.cfg.tol;
  g1opt.max_iter = p.cfg.max_iter;
  a.g1 = couette::solve_G1(p.grid, p.sg, p.tables, p.ops, g1opt);
  couette::RemainderOptions gropt;
  gropt.epsilon_schedule = p.cfg.epsilon_schedule;
  gropt.sigma_steps = p.cfg.sigma_steps;
  gropt.inner_tol = p.cfg.tol;
  gropt.max_inner = p.cfg.max_iter;
  gropt.max_outer = p.cfg.max_outer;
  if (p.cfg.alpha > 0.0) {
    a.gr = couette::solve_remainder(p.grid, p.sg, p.tables, p.ops, p.spec, a.g1,
                                    p.cfg.alpha, gropt);
  } else {
    a.gr.gr1 = couette::Field(couette::Rep::Raw, p.grid.size(), p.sg.n_y);
    a.gr.gr2 = couette::Field(couette::Rep::SqrtMu, p.grid.size(), p.sg.n_y);
  }
  a.st = couette::compose_steady(p.grid, p.sg, p.tables, a.g1, a.gr, p.cfg.alpha);
  a.res = couette::steady_residual(p.grid, p.sg, p.tables, p.spec, a.st);
  a.bc_bottom = couette::bc_residual(p.grid, p.tables, a.st.F, -1);
  a.bc_top = couette::bc_residual(p.grid, p.tables, a.st.F, +1);
  return a;
}

void write_steady_outputs(const Pipeline& p, const SteadyArtifacts& a,
                          const std::filesystem::path& dir) {
  const std::uint64_t gh = couette::grid_hash(p.grid, p.sg);
  couette::write_field((dir / "g1.bin").string(), a.g1.g1, gh);
  couette::write_field((dir / "gr1.bin").string(), a.gr.gr1, gh);
  couette::write_field((dir / "gr2.bin").string(), a.gr.gr2, gh);

  // Macroscopic profile of the composed perturbation (F_st − μ)/√μ.
  couette::Field pert(couette::Rep::SqrtMu, p.grid.size(), p.sg.n_y);
  pert.data = a.st.F.data;
  for (int i = 0; i < p.grid.size(); ++i)
    pert.data.row(i) =
        (pert.data.row(i).array() - p.tables.mu[i]) / p.tables.sqrt_mu[i];
  const couette::MacroProjection mp = couette::moments(p.ops, p.grid, pert);
  std::FILE* csv = open_csv(dir / "profile.csv");
  std::fprintf(csv, "y,a,b1,b2,b3,c\n");
  for (int j = 0; j < p.sg.n_y; ++j)
    std::fprintf(csv, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.sg.y[j], mp.a[j],
                 mp.b[0][j], mp.b[1][j], mp.b[2][j], mp.c[j]);
  std::fclose(csv);

  nlohmann::json meta;
  meta["alpha"] = p.cfg.alpha;
  meta["residual_sup"] = a.res.sup;
  meta["residual_l2"] = a.res.l2;
  meta["bc_residual_bottom"] = a.bc_bottom;
  meta["bc_residual_top"] = a.bc_top;
  meta["min_F"] = a.st.min_value;
  meta["mass"] = a.st.mass;
  meta["g1_iterations"] = a.g1.iterations;
  meta["g1_oddness_defect"] = a.g1.oddness_defect;
  meta["gr_outer_iterations"] = a.gr.outer_iterations;
  meta["gr_mass_defect"] = a.gr.mass_defect;
  meta["gr_mass_source"] = a.gr.mass_source;
  meta["mass_source"] = a.st.mass_source;
  couette::write_json((dir / "steady_meta.json").string(), meta);
}

int cmd_steady(const Cli& cli) {
  const auto t0 = std::chrono::steady_clock::now();
  const couette::RunConfig cfg = load_config(cli);
  const Pipeline p = build_pipeline(cfg, true);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  const SteadyArtifacts a = run_steady(p);
  write_steady_outputs(p, a, dir);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json meta = base_meta(p, cli.threads, secs);
  meta["residual_sup"] = a.res.sup;
  meta["residual_l2"] = a.res.l2;
  couette::write_json((dir / "run_meta.json").string(), meta);
  std::printf("steady: residual sup=%.3e l2=%.3e min_F=%.3e mass=%.12f\n", a.res.sup,
              a.res.l2, a.st.min_value, a.st.mass);
  return 0;
}

// ---------------------------------------------------------------------------
// unsteady
// ---------------------------------------------------------------------------

int cmd_unsteady(const Cli& cli) {
  const auto t0 = std::chrono::steady_clock::now();
  const couette::RunConfig cfg = load_config(cli);
  const Pipeline p = build_pipeline(cfg, true);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);

  const SteadyArtifacts a = run_steady(p);
  const int N = p.grid.size();
  couette::UnsteadyContext ctx{p.grid, p.sg, p.tables, p.ops, p.spec, cfg.alpha, {}, {}};
  {
    const couette::Field w =
        couette::compose_remainder(p.tables, a.gr.gr1, a.gr.gr2);
    ctx.background = Eigen::MatrixXd(N, p.sg.n_y);
    for (int i = 0; i < N; ++i)
      ctx.background.row(i) = p.tables.sqrt_mu[i] * a.g1.g1.data.row(i);
    ctx.background += cfg.alpha * w.data;
  }

  // Default perturbation: F0 = F_st + 1e−3 · v_x v_y μ.
  couette::Field F0(couette::Rep::Absolute, N, p.sg.n_y);
  F0.data = a.st.F.data;
  for (int i = 0; i < N; ++i)
    F0.data.row(i).array() +=
        1e-3 * p.grid.nodes[i][0] * p.grid.nodes[i][1] * p.tables.mu[i];

  std::vector<couette::UnsteadyRecord> history;
  couette::DecayFit fit;
  if (cfg.scheme == "direct") {
    const couette::RunResult rr = couette::run_to_steady(ctx, a.st, F0, cfg.dt,
                                                         cfg.t_end, cfg.record_every);
    history = rr.state.history;
    fit = rr.fit;
  } else {
    // caflisch: same perturbation stepped as (f₁, f₂); norms recorded on
    // the recombined f.
    couette::Field f0(couette::Rep::SqrtMu, N, p.sg.n_y);
    f0.data = ((F0.data - a.st.F.data).array().colwise() /
               Eigen::Map<const Eigen::VectorXd>(p.tables.sqrt_mu.data(), N).array())
                  .matrix();
    couette::UnsteadyState state;
    state.scheme = couette::Scheme::Caflisch;
    state.f = couette::Field(couette::Rep::Raw, N, p.sg.n_y);
    state.f.data = (f0.data.array().colwise() *
                    Eigen::Map<const Eigen::VectorXd>(p.tables.sqrt_mu.data(), N).array())
                       .matrix();
    state.f2 = couette::Field(couette::Rep::SqrtMu, N, p.sg.n_y);
    auto record = [&](const couette::UnsteadyState& s) {
      const couette::Field f = couette::recombine(ctx, s);
      couette::UnsteadyRecord r;
      r.t = s.t;
      r.sup_wq = couette::weighted_sup_norm(p.grid, p.tables, f);
      r.l2 = couette::l2_norm(p.grid, p.sg, f);
      couette::Field F(couette::Rep::Absolute, N, p.sg.n_y);
      F.data = a.st.F.data;
      for (int i = 0; i < N; ++i)
        F.data.row(i) += p.tables.sqrt_mu[i] * f.data.row(i);
      r.mass = couette::total_mass(p.grid, p.sg, F);
      r.min_F = F.data.minCoeff();
      history.push_back(r);
    };
    record(state);
    const long n_steps = static_cast<long>(std::ceil(cfg.t_end / cfg.dt - 1e-12));
    for (long k = 0; k < n_steps; ++k) {
      state = couette::step(ctx, std::move(state), cfg.dt);
      if (state.steps % cfg.record_every == 0 || k + 1 == n_steps) record(state);
    }
    std::vector<std::pair<double, double>> window;
    for (const auto& r : history)
      if (r.sup_wq <= 0.1 * history.front().sup_wq && r.sup_wq > 0.0)
        window.emplace_back(r.t, r.sup_wq);
    fit = couette::decay_rate_fit(window);
  }

  std::FILE* csv = open_csv(dir / "decay.csv");
  std::fprintf(csv, "t,sup_norm,l2_norm,mass,min_F\n");
  for (const auto& r : history)
    std::fprintf(csv, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, r.sup_wq, r.l2, r.mass,
                 r.min_F);
  std::fclose(csv);

  nlohmann::json fj;
  fj["lambda0"] = fit.lambda0;
  fj["intercept"] = fit.intercept;
  fj["residual"] = fit.residual;
  fj["window"] = {fit.t_lo, fit.t_hi};
  couette::write_json((dir / "decay_fit.json").string(), fj);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json meta = base_meta(p, cli.threads, secs);
  meta["lambda0"] = fit.lambda0;
  meta["fit_residual"] = fit.residual;
  couette::write_json((dir / "run_meta.json").string(), meta);
  std::printf("unsteady: lambda0=%.6f fit residual=%.3e (%zu records)\n", fit.lambda0,
              fit.residual, history.size());
  return 0;
}

// ---------------------------------------------------------------------------
// verify-kernel
// ---------------------------------------------------------------------------

int cmd_verify_kernel(const Cli& cli) {
  const auto t0 = std::chrono::steady_clock::now();
  const couette::RunConfig cfg = load_config(cli);
  const Pipeline p = build_pipeline(cfg, true);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);

  struct Check {
    const char* name;
    double value;
    double bound;
  };
  double nu_spread = 0.0;
  for (double v : p.ops.nu_per_node)
    nu_spread = std::max(nu_spread, std::abs(v - p.ops.nu0) / p.ops.nu0);
  // Oracles: ν₀ = 2π·b_amp·(grid mass of μ) and b₀ = π·b_amp/2 for the
  // |cosθ| kernel; the angular quadrature integrates both exactly.
  const double nu0_oracle = 2.0 * couette::kPi * cfg.b_amp;
  const double b0_oracle = 0.5 * couette::kPi * cfg.b_amp;
  double row_sum = 0.0;
  for (int i = 0; i < p.grid.size(); ++i)
    row_sum = std::max(row_sum, p.ops.K_matrix.row(i).cwiseAbs().sum());
  // The interpolation-level asymmetry of K is a recorded assembly
  // tolerance, not a fixed bound; the check is that recomputing it from
  // the live matrix reproduces the recorded value.
  const double asym_now =
      (p.ops.K_matrix - p.ops.K_matrix.transpose()).cwiseAbs().maxCoeff();
  const Check checks[] = {
      {"nu_relative_spread", nu_spread, 1e-10},
      {"nu0_vs_oracle", std::abs(p.ops.nu0 - nu0_oracle), 1e-3},
      {"b0_vs_oracle", std::abs(p.ops.b0 - b0_oracle), 1e-12},
      {"kernel_asymmetry_vs_recorded", std::abs(asym_now - p.ops.assembly_asym), 1e-10},
      {"escape_fraction", p.ops.escape_fraction, 0.05},
      {"K_row_sum", row_sum, 10.0 * p.ops.nu0},
  };
  std::FILE* csv = open_csv(dir / "kernel_checks.csv");
  std::fprintf(csv, "check_name,value,bound,pass\n");
  bool all_pass = true;
  for (const Check& c : checks) {
    const bool pass = c.value <= c.bound;
    all_pass = all_pass && pass;
    std::fprintf(csv, "%s,%.17g,%.17g,%d\n", c.name, c.value, c.bound, pass ? 1 : 0);
    std::printf("%-20s value=%.3e bound=%.3e %s\n", c.name, c.value, c.bound,
                pass ? "pass" : "FAIL");
  }
  std::fclose(csv);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json meta = base_meta(p, cli.threads, secs);
  meta["all_checks_pass"] = all_pass;
  couette::write_json((dir / "run_meta.json").string(), meta);
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// cycles
// ---------------------------------------------------------------------------

int cmd_cycles(const Cli& cli, double T0, int kmax, int samples) {
  const auto t0 = std::chrono::steady_clock::now();
  const couette::RunConfig cfg = load_config(cli);
  const Pipeline p = build_pipeline(cfg, false);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);

  std::FILE* csv = open_csv(dir / "cycles.csv");
  std::fprintf(csv, "k,survival,stderr\n");
  std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.seed));
  for (int k = 1; k <= kmax; ++k) {
    const couette::SurvivalEstimate e =
        couette::estimate_cycle_survival(T0, k, samples, rng);
    std::fprintf(csv, "%d,%.17g,%.17g\n", k, e.survival, e.stderr_);
  }
  std::fclose(csv);

  // Peetre weight-ratio check along sampled cycles.
  const double bound =
      std::pow(1.0 + 4.0 * cfg.alpha * cfg.alpha, cfg.q) *
      std::exp(cfg.alpha * cfg.alpha);
  double worst = 0.0;
  std::mt19937_64 rng2(static_cast<std::uint64_t>(cfg.seed) + 1);
  for (int s = 0; s < samples; ++s) {
    const couette::Vec3 v = couette::sample_wall_velocity(-1.0, rng2);
    const couette::BounceCycle c =
        couette::sample_bounce_cycle(T0, -1.0, v, cfg.alpha, rng2, kmax);
    worst = std::max(worst, couette::weight_ratio_check(c, cfg.q, cfg.alpha));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json meta = base_meta(p, cli.threads, secs);
  meta["T0"] = T0;
  meta["kmax"] = kmax;
  meta["samples"] = samples;
  meta["max_weight_ratio"] = worst;
  meta["weight_ratio_bound"] = bound;
  couette::write_json((dir / "run_meta.json").string(), meta);
  std::printf("cycles: max weight ratio %.6f (bound %.6f)\n", worst, bound);
  return worst <= bound ? 0 : 1;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const Cli& cli, const std::string& input) {
  const auto t0 = std::chrono::steady_clock::now();
  const couette::RunConfig cfg = load_config(cli);
  const Pipeline p = build_pipeline(cfg, true);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);

  couette::Field f = couette::read_field(input, couette::grid_hash(p.grid, p.sg));
  // Norm/moment tables need the √μ representation; convert per tag.
  couette::Field g(couette::Rep::SqrtMu, f.n_v(), f.n_y());
  switch (f.rep) {
    case couette::Rep::SqrtMu:
      g.data = f.data;
      break;
    case couette::Rep::Absolute:
    case couette::Rep::Raw:
      g.data = f.data;
      for (int i = 0; i < p.grid.size(); ++i)
        g.data.row(i) /= p.tables.sqrt_mu[i];
      break;
  }
  const couette::MacroProjection mp = couette::moments(p.ops, p.grid, g);
  const couette::NormReport nr = couette::norm_report(p.grid, p.sg, p.tables, g);
  std::FILE* csv = open_csv(dir / "report.csv");
  std::fprintf(csv, "y,a,b1,b2,b3,c\n");
  for (int j = 0; j < f.n_y(); ++j)
    std::fprintf(csv, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.sg.y[j], mp.a[j],
                 mp.b[0][j], mp.b[1][j], mp.b[2][j], mp.c[j]);
  std::fclose(csv);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json meta = base_meta(p, cli.threads, secs);
  meta["input"] = input;
  meta["representation"] = couette::rep_name(f.rep);
  meta["sup_wq"] = nr.sup_wq;
  meta["l2"] = nr.l2;
  meta["trace_out"] = nr.trace_out;
  meta["trace_in"] = nr.trace_in;
  couette::write_json((dir / "run_meta.json").string(), meta);
  std::printf("report: sup_wq=%.6e l2=%.6e -> %s\n", nr.sup_wq, nr.l2,
              (dir / "report.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"discrete-velocity Couette flow solver"};
  app.require_subcommand(1);

  Cli steady_cli, unsteady_cli, verify_cli, cycles_cli, report_cli;
  CLI::App* steady = app.add_subcommand("steady", "solve the steady state");
  add_common_options(steady, steady_cli);
  CLI::App* unsteady = app.add_subcommand("unsteady", "relaxation toward the steady state");
  add_common_options(unsteady, unsteady_cli);
  CLI::App* verify = app.add_subcommand("verify-kernel", "collision-kernel sanity checks");
  add_common_options(verify, verify_cli);

  double T0 = 10.0;
  int kmax = 40, samples = 100000;
  CLI::App* cycles = app.add_subcommand("cycles", "bounce-cycle survival statistics");
  add_common_options(cycles, cycles_cli);
  cycles->add_option("--T0", T0, "starting time budget");
  cycles->add_option("--kmax", kmax, "maximum bounce count");
  cycles->add_option("--samples", samples, "Monte Carlo sample count");

  std::string report_input;
  CLI::App* report = app.add_subcommand("report", "render a field dump to CSV tables");
  add_common_options(report, report_cli);
  report->add_option("--input", report_input, "field dump to render")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (steady->parsed()) return cmd_steady(steady_cli);
    if (unsteady->parsed()) return cmd_unsteady(unsteady_cli);
    if (verify->parsed()) return cmd_verify_kernel(verify_cli);
    if (cycles->parsed()) return cmd_cycles(cycles_cli, T0, kmax, samples);
    if (report->parsed()) return cmd_report(report_cli, report_input);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
