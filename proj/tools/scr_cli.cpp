// Command-line front end: scenario in, CSV/JSON out.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "scr/driver.hpp"

namespace fs = std::filesystem;
using namespace scr;

namespace {

enum Exit { kOk = 0, kInfeasibleExit = 2, kSolverExit = 3, kInputExit = 4 };

struct Common {
  std::string scenario;
  std::string out = "out";
  double tol = 0.0;
  int max_iters = 0;
  double eps_safe = -1.0;
  long long seed = -1;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--scenario", c.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--tol", c.tol, "SCR stopping tolerance (absolute change in c_u)")
      ->check(CLI::PositiveNumber);
  app->add_option("--max-iters", c.max_iters, "SCR iteration cap")->check(CLI::PositiveNumber);
  app->add_option("--eps-safe", c.eps_safe, "Safety margin on obstacle rows")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--seed", c.seed, "Random seed")->check(CLI::NonNegativeNumber);
  app->add_flag("-v,--verbose", c.verbose, "Per-iteration progress on stderr");
}

Scenario load(const Common& c) {
  Scenario s = load_scenario(c.scenario);
  if (c.tol > 0.0) s.scr_tolerance = c.tol;
  if (c.max_iters > 0) s.scr_max_iterations = c.max_iters;
  if (c.eps_safe >= 0.0) s.eps_safe = c.eps_safe;
  if (c.seed >= 0) s.seed = static_cast<std::uint64_t>(c.seed);
  return s;
}

// The scenario with every default filled in, next to the results.
void echo_scenario(const Scenario& s, const fs::path& out) {
  fs::create_directories(out);
  std::FILE* f = std::fopen((out / "scenario.json").string().c_str(), "wb");
  require(f != nullptr, ErrorKind::kInput, (out / "scenario.json").string() + ": cannot write");
  const std::string text = emit_scenario(s);
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

CertifiedSolution solve(const Scenario& s, const RobustProblem& p, const conic::Backend& backend,
                        bool verbose) {
  const auto start = std::chrono::steady_clock::now();
  auto sol = scr_solve(p, initial_controls(s), scr_options(s), backend);
  if (verbose) {
    for (std::size_t k = 0; k < sol.history.size(); ++k) {
      const auto& h = sol.history[k];
      std::fprintf(stderr, "  iter %2zu  c_u %.9g  solver %s (%d its, %.1f ms)\n", k + 1,
                   h.cost_upper, h.solver_status.c_str(), h.solver_iterations, h.solve_ms);
    }
  }
  std::fprintf(stderr, "scr: %s after %d iterations, c_u = %.9g, %d constraints (%.2f s)\n",
               to_string(sol.status).c_str(), sol.iterations, sol.cost_upper,
               sol.constraint_count, seconds_since(start));
  if (!sol.message.empty()) std::fprintf(stderr, "scr: %s\n", sol.message.c_str());
  return sol;
}

int solve_exit(const CertifiedSolution& sol) {
  if (sol.certified) return kOk;
  return sol.status == ScrStatus::kInfeasibleAtSeed ? kInfeasibleExit : kSolverExit;
}

void report_written(const std::vector<fs::path>& files) {
  for (const auto& f : files) std::fprintf(stderr, "wrote %s\n", f.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust trajectory optimization by sequential convex restriction"};
  app.require_subcommand(1);

  Common c;
  auto* solve_cmd = app.add_subcommand("solve", "Run SCR and write the certified plan");
  add_common(solve_cmd, c);

  std::string mode = "joint";
  bool certify_solved = false;
  auto* certify_cmd =
      app.add_subcommand("certify", "Largest certified radius for the scenario's initial controls");
  add_common(certify_cmd, c);
  certify_cmd->add_option("--mode", mode, "Which radius to maximize")
      ->check(CLI::IsMember({"init", "dyn", "joint"}))
      ->capture_default_str();
  certify_cmd->add_flag("--solved", certify_solved, "Certify the SCR solution instead");

  int steps = 0, period = 0;
  bool disturbed = false;
  auto* mpc_cmd = app.add_subcommand("mpc", "Receding-horizon closed loop");
  add_common(mpc_cmd, c);
  mpc_cmd->add_option("--steps", steps, "Closed-loop steps (default: scenario)")
      ->check(CLI::PositiveNumber);
  mpc_cmd->add_option("--period", period, "Steps applied between replans (default: scenario)")
      ->check(CLI::PositiveNumber);
  mpc_cmd->add_flag("--disturbed", disturbed, "Sample disturbances from the ellipsoids");

  int samples = 0;
  auto* verify_cmd = app.add_subcommand("verify", "Solve, then Monte Carlo check the certificate");
  add_common(verify_cmd, c);
  verify_cmd->add_option("--samples", samples, "Disturbance samples (default: scenario)");

  std::vector<int> horizons;
  auto* bench_cmd = app.add_subcommand("bench-table", "Solve time, size, iterations and cost per N");
  add_common(bench_cmd, c);
  bench_cmd->add_option("--horizons", horizons, "Horizons (default: scenario)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputExit;
  }

  try {
    const Scenario s = load(c);
    const RobustProblem p = build_problem(s);
    const fs::path out = c.out;
    const auto backend = conic::make_ipm_backend();
    echo_scenario(s, out);

    if (*solve_cmd) {
      const auto sol = solve(s, p, *backend, c.verbose);
      report_written(emit_results({&p, &sol}, out));
      return solve_exit(sol);
    }

    if (*verify_cmd) {
      if (verify_cmd->count("--samples") == 0) samples = s.verify_samples;
      require(samples > 0, ErrorKind::kInput, "--samples must be positive");
      const auto sol = solve(s, p, *backend, c.verbose);
      if (!sol.certified) {
        report_written(emit_results({&p, &sol}, out));
        return solve_exit(sol);
      }
      const auto report = monte_carlo_verify(p, sol, samples, s.seed);
      std::fprintf(stderr,
                   "verify: %d samples, %d tube exits, %d obstacle hits, max cost %.9g <= %.9g: %s\n",
                   report.samples, report.tube_exits, report.obstacle_hits, report.max_cost,
                   report.cost_upper, report.passed() ? "pass" : "FAIL");
      RunArtifacts artifacts{&p, &sol, &report};
      report_written(emit_results(artifacts, out));
      return report.passed() ? kOk : kSolverExit;
    }

    if (*certify_cmd) {
      const MarginMode m = mode == "init"  ? MarginMode::kInit
                           : mode == "dyn" ? MarginMode::kDynamics
                                           : MarginMode::kJoint;
      Vector u = initial_controls(s);
      if (certify_solved) {
        const auto sol = solve(s, p, *backend, c.verbose);
        if (!sol.certified) return solve_exit(sol);
        u = sol.u;
      }
      const auto margin = certify_margin(p, u, m, scr_options(s), *backend);
      std::fprintf(stderr, "certify (%s): gamma = %.9g%s%s\n", mode.c_str(), margin.gamma,
                   margin.diagnostic.empty() ? "" : ", ", margin.diagnostic.c_str());
      RunArtifacts artifacts{&p};
      artifacts.margin = &margin;
      artifacts.margin_mode = mode;
      report_written(emit_results(artifacts, out));
      return margin.gamma > 0.0 ? kOk : kInfeasibleExit;
    }

    if (*mpc_cmd) {
      MpcOptions options;
      options.total_steps = steps > 0 ? steps : s.mpc_steps;
      options.replan_period = period > 0 ? period : s.mpc_period;
      options.sample_disturbance = disturbed;
      options.seed = s.seed;
      options.scr = scr_options(s);
      const auto start = std::chrono::steady_clock::now();
      const auto log = receding_horizon_run(p, initial_controls(s), options, *backend);
      if (c.verbose) {
        for (const auto& cycle : log.cycles) {
          std::fprintf(stderr, "  step %3d  %s  %s, %d iterations, c_u %.9g\n", cycle.step,
                       cycle.event.c_str(), to_string(cycle.plan.status).c_str(),
                       cycle.plan.iterations, cycle.plan.cost_upper);
        }
      }
      std::fprintf(stderr, "mpc: %d of %d steps, closed-loop cost %.9g (%.2f s)\n", log.steps_run,
                   options.total_steps, log.cost, seconds_since(start));
      RunArtifacts artifacts{&p};
      artifacts.mpc = &log;
      report_written(emit_results(artifacts, out));
      return log.steps_run == options.total_steps ? kOk : kInfeasibleExit;
    }

    if (*bench_cmd) {
      if (horizons.empty()) horizons = s.bench_horizons;
      std::vector<BenchRow> rows;
      std::printf("%4s %-16s %5s %6s %9s %9s %14s %14s\n", "N", "status", "iter", "rows",
                  "solve_s", "s/iter", "c_u", "nominal_cost");
      for (int N : horizons) {
        rows.push_back(bench_row(s, N, *backend));
        const auto& r = rows.back();
        std::printf("%4d %-16s %5d %6d %9.3f %9.4f %14.2f %14.2f\n", r.horizon, r.status.c_str(),
                    r.iterations, r.constraints, r.solve_seconds, r.seconds_per_iteration,
                    r.cost_upper, r.nominal_cost);
        std::fflush(stdout);
      }
      RunArtifacts artifacts{&p};
      artifacts.bench = &rows;
      report_written(emit_results(artifacts, out));
      return kOk;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.kind()) {
      case ErrorKind::kInfeasible:
        return kInfeasibleExit;
      case ErrorKind::kSolver:
        return kSolverExit;
      default:
        return kInputExit;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputExit;
  }
  return kOk;
}
