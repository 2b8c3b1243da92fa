#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scr/conic.hpp"
#include "scr/restriction.hpp"

namespace scr {

struct CertifiedSolution;

struct ScrOptions {
  /// Stop when |c_u(k) - c_u(k-1)| < tolerance.
  double tolerance = 1e-3;
  int max_iterations = 50;
  bool warm_start = true;
  /// After each step, also try continuing along it (x1, x2, x4, ...) and keep
  /// the cheapest point that certifies exactly.
  bool extrapolate = true;
  RestrictionConfig restriction;
  conic::Tolerances solver;
  /// Called with every certified iterate, extrapolated points included.
  std::function<void(const CertifiedSolution&)> on_iterate;
};

enum class ScrStatus {
  kConverged,
  kIterationLimit,
  kInfeasibleAtSeed,  // first restriction infeasible; no certificate
  kSolverFailure,     // later failure; the last certified iterate is returned
};

std::string to_string(ScrStatus status);

struct IterationRecord {
  double cost_upper = 0.0;
  int solver_iterations = 0;
  double solve_ms = 0.0;
  std::string solver_status;
};

/// Controls, tube and radii satisfying the restriction at `linearization`,
/// plus the rollout of the controls under the nominal disturbance.
struct CertifiedSolution {
  ScrStatus status = ScrStatus::kInfeasibleAtSeed;
  bool certified = false;
  Vector u;
  Tube tube;
  double gamma_init = 0.0;
  double gamma_dyn = 0.0;
  double cost_upper = 0.0;
  NominalPoint linearization;
  Vector nominal_x;
  int iterations = 0;
  std::vector<IterationRecord> history;
  std::map<std::string, int> census;
  int constraint_count = 0;
  CertificateCheck check;
  std::string message;
};

/// Sequential convex restriction from the seed controls init_u.
CertifiedSolution scr_solve(const RobustProblem& problem, const Vector& init_u,
                            const ScrOptions& options, const conic::Backend& backend);

struct MarginResult {
  double gamma = 0.0;         // exactly re-checked margin
  double solver_gamma = 0.0;  // optimum reported by the solver
  Tube tube;
  std::string diagnostic;
};

/// Largest radius gamma, applied to the ellipsoids selected by mode, for which
/// the fixed controls u remain certified.
MarginResult certify_margin(const RobustProblem& problem, const Vector& u, MarginMode mode,
                            const ScrOptions& options, const conic::Backend& backend);

/// Disturbance radii and seeds used by the samplers.
struct SampleSpec {
  double gamma_init = 0.0;
  double gamma_dyn = 0.0;
  std::uint64_t seed = 0;
};

/// Stacked disturbance for sample `index` of a run. Per-sample seeds are
/// derived from (seed, index), so the result does not depend on threading.
Vector sample_disturbance(const RobustProblem& problem, const SampleSpec& spec,
                          std::uint64_t index, bool on_boundary);

struct VerifyReport {
  int samples = 0;
  std::uint64_t seed = 0;
  int tube_exits = 0;
  int obstacle_hits = 0;
  int cost_exceedances = 0;
  double max_cost = 0.0;
  double cost_upper = 0.0;
  double worst_tube_excess = 0.0;  // max over samples of distance outside the tube

  bool passed() const { return tube_exits == 0 && obstacle_hits == 0 && cost_exceedances == 0; }
};

/// Rolls out `samples` disturbances (first half on the ellipsoid boundaries,
/// second half interior) through the true dynamics and counts tube exits,
/// obstacle hits and costs above c_u + 1e-6. gamma_scale inflates the radii.
VerifyReport monte_carlo_verify(const RobustProblem& problem, const CertifiedSolution& solution,
                                int samples, std::uint64_t seed, double gamma_scale = 1.0,
                                int threads = 0);

/// Smallest radius (within `iterations` bisection steps) at which sampled
/// rollouts of u hit an obstacle; an empirical upper estimate of the true margin.
double empirical_margin(const RobustProblem& problem, const Vector& u, MarginMode mode,
                        int samples, std::uint64_t seed, double upper = 64.0,
                        int iterations = 30);

struct MpcOptions {
  int total_steps = 0;
  int replan_period = 1;
  bool sample_disturbance = false;
  std::uint64_t seed = 0;
  ScrOptions scr;
};

struct MpcCycle {
  int step = 0;
  bool replanned = false;
  std::string event;
  CertifiedSolution plan;
};

struct MpcLog {
  Vector states;    // n (steps + 1)
  Vector controls;  // m steps
  std::vector<MpcCycle> cycles;
  double cost = 0.0;  // closed-loop stage costs plus terminal cost
  int steps_run = 0;
};

/// Receding horizon: plan with scr_solve from the measured state, apply the
/// first replan_period controls, and repeat. On a failed replan the tail of
/// the last certified plan is executed.
MpcLog receding_horizon_run(const RobustProblem& problem, const Vector& init_u,
                            const MpcOptions& options, const conic::Backend& backend);

}  // namespace scr
