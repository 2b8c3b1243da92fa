#include "scr/scr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

namespace scr {
namespace {

constexpr int kSafetyRetries = 3;
constexpr double kMaxExtrapolation = 8.0;

Vector clamp_controls(const RobustProblem& problem, const Vector& u) {
  const int m = problem.model.dims().m;
  Vector out = u;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    out(i) = std::clamp(u(i), problem.u_lower(i % m), problem.u_upper(i % m));
  }
  return out;
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// Uniform in the unit ball (or on the sphere).
Vector unit_ball(std::mt19937_64& rng, Eigen::Index dim, bool on_boundary) {
  if (dim == 0) return Vector(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector e(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (Eigen::Index i = 0; i < dim; ++i) e(i) = normal(rng);
    norm = e.norm();
  }
  e /= norm;
  if (!on_boundary) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    e *= std::pow(unit(rng), 1.0 / static_cast<double>(dim));
  }
  return e;
}

class DisturbanceSampler {
 public:
  explicit DisturbanceSampler(const RobustProblem& problem)
      : n_(problem.model.dims().n), r_(problem.model.dims().r), horizon_(problem.horizon()),
        nominal_(problem.w_nominal()),
        init_root_(psd_sqrt(problem.uncertainty.sigma_init, "Sigma_init")) {
    const auto& sigma = problem.uncertainty.sigma_stage;
    for (const auto& s : sigma) stage_roots_.push_back(psd_sqrt(s, "Sigma"));
  }

  Vector stage(std::mt19937_64& rng, int t, double gamma, bool on_boundary) const {
    const Matrix& root = stage_roots_.size() == 1 ? stage_roots_[0] : stage_roots_[t];
    return nominal_.segment(n_ + t * r_, r_) + gamma * root * unit_ball(rng, r_, on_boundary);
  }

  Vector full(std::mt19937_64& rng, double gamma_init, double gamma_dyn, bool on_boundary) const {
    Vector w = nominal_;
    w.head(n_) += gamma_init * init_root_ * unit_ball(rng, n_, on_boundary);
    for (int t = 0; t < horizon_; ++t) {
      w.segment(n_ + t * r_, r_) = stage(rng, t, gamma_dyn, on_boundary);
    }
    return w;
  }

 private:
  int n_;
  int r_;
  int horizon_;
  Vector nominal_;
  Matrix init_root_;
  std::vector<Matrix> stage_roots_;
};

template <typename Fn>
void parallel_for(int count, int threads, Fn fn) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(1, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

bool hits_obstacle(const RobustProblem& problem, const Vector& x) {
  const int n = problem.model.dims().n;
  for (int t = 1; t <= problem.horizon(); ++t) {
    const Vector xt = x.segment(t * n, n);
    for (const auto& obstacle : problem.obstacles) {
      if (contains(obstacle, xt)) return true;
    }
  }
  return false;
}

std::pair<double, double> radii_for(MarginMode mode, double gamma) {
  switch (mode) {
    case MarginMode::kInit:
      return {gamma, 0.0};
    case MarginMode::kDynamics:
      return {0.0, gamma};
    case MarginMode::kJoint:
      return {gamma, gamma};
    case MarginMode::kFixed:
      break;
  }
  throw Error(ErrorKind::kConfiguration, "margin mode must select an ellipsoid");
}

// Half-widths of a tube around z, the hint envelope builders tune against.
Vector tube_spread(const Tube& tube, const Vector& z) {
  return (tube.z_upper - z).cwiseMax(z - tube.z_lower).cwiseMax(0.0);
}

// Sets the spread of `nominal` to the tube its own restriction propagates for u.
void adapt_spread(const RobustProblem& problem, NominalPoint& nominal,
                  const SafetyRestriction& safety, const RestrictionConfig& config,
                  double gamma_init, double gamma_dyn) {
  RestrictionConfig plain = config;
  plain.margin = MarginMode::kFixed;
  plain.include_cost = false;
  const RestrictionProgram program = assemble_restriction(problem, nominal, safety, plain);
  const Tube tube = propagate_tube(problem, program, nominal.u, gamma_init, gamma_dyn);
  if (tube.z_upper.allFinite() && tube.z_lower.allFinite()) {
    nominal.spread = tube_spread(tube, nominal.z);
  }
}

struct PointCertificate {
  bool valid = false;
  Vector u;
  NominalPoint nominal;
  SafetyRestriction safety;
  Tube tube;
  CertificateCheck check;
};

// Exact certificate of fixed controls u, linearized at their own rollout.
PointCertificate certify_at(const RobustProblem& problem, const Vector& u,
                            const RestrictionConfig& config, double gamma_init, double gamma_dyn) {
  PointCertificate out;
  out.u = u;
  out.nominal = make_nominal(problem.model, u, problem.w_nominal());
  try {
    out.safety = safety_halfspaces(problem.model, out.nominal.x, problem.obstacles);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInfeasible) throw;
    return out;
  }
  adapt_spread(problem, out.nominal, out.safety, config, gamma_init, gamma_dyn);
  const RestrictionProgram program =
      assemble_restriction(problem, out.nominal, out.safety, config);
  out.tube = propagate_tube(problem, program, u, gamma_init, gamma_dyn);
  out.check = check_certificate(problem, program, out.safety, u, out.tube, gamma_init, gamma_dyn);
  out.valid = out.check.valid;
  return out;
}

std::map<std::string, int> census_with_total(const conic::ConicProgram& program) {
  auto census = program.census();
  census["total"] = program.num_rows();
  return census;
}

}  // namespace

std::string to_string(ScrStatus status) {
  switch (status) {
    case ScrStatus::kConverged:
      return "converged";
    case ScrStatus::kIterationLimit:
      return "iteration-limit";
    case ScrStatus::kInfeasibleAtSeed:
      return "infeasible-at-seed";
    case ScrStatus::kSolverFailure:
      return "solver-failure";
  }
  return "unknown";
}

CertifiedSolution scr_solve(const RobustProblem& problem, const Vector& init_u,
                            const ScrOptions& options, const conic::Backend& backend) {
  problem.validate();
  const auto& model = problem.model;
  const auto& d = model.dims();
  require(init_u.size() == d.m * problem.horizon(), ErrorKind::kDimension,
          "initial controls must have m N entries");
  require(options.max_iterations >= 1, ErrorKind::kInput, "SCR needs at least one iteration");

  const Vector w0 = problem.w_nominal();
  NominalPoint nominal = make_nominal(model, clamp_controls(problem, init_u), w0);
  SafetyRestriction safety;
  try {
    safety = safety_halfspaces(model, nominal.x, problem.obstacles);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInfeasible) throw;
    throw Error(ErrorKind::kInfeasible,
                std::string(e.what()) + "; supply initial controls whose rollout avoids obstacles");
  }

  CertifiedSolution best;
  best.gamma_init = problem.uncertainty.gamma_init;
  best.gamma_dyn = problem.uncertainty.gamma_dyn;
  adapt_spread(problem, nominal, safety, options.restriction, best.gamma_init, best.gamma_dyn);
  std::optional<Vector> guess;

  auto stop = [&](conic::Status status, const std::string& why) {
    if (!best.certified) {
      best.status = status == conic::Status::kInfeasible ? ScrStatus::kInfeasibleAtSeed
                                                         : ScrStatus::kSolverFailure;
    } else {
      best.status = ScrStatus::kSolverFailure;
    }
    best.message = why;
  };

  best.status = ScrStatus::kIterationLimit;
  for (int k = 0; k < options.max_iterations; ++k) {
    // A solver point can miss the safety rows by more than eps_safe; the
    // exact re-check catches that and the restriction is re-solved with the
    // margin widened by the observed shortfall.
    RestrictionConfig config = options.restriction;
    RestrictionProgram program;
    conic::ConicProgram conic_program;
    conic::SolveOutcome out;
    IterationRecord record;
    Vector u;
    Tube tube;
    CertificateCheck check;
    for (int attempt = 0;; ++attempt) {
      program = assemble_restriction(problem, nominal, safety, config);
      conic_program = canonicalize(program);
      conic::SolveOptions solve_options;
      solve_options.tolerances = options.solver;
      // The tube is rebuilt exactly from u below, so a loose solver point is fine.
      solve_options.tolerances.recheck = std::numeric_limits<double>::infinity();
      if (options.warm_start && guess && guess->size() == conic_program.num_variables()) {
        solve_options.initial_guess = guess;
      }
      out = conic::solve(conic_program, solve_options, &backend);
      record.solver_iterations += out.stats.iterations;
      record.solve_ms += out.stats.wall_ms;
      record.solver_status = conic::to_string(out.status);
      if (out.status != conic::Status::kOptimal) break;
      u = clamp_controls(problem, controls_of(program, out.primal));
      tube = propagate_tube(problem, program, u, best.gamma_init, best.gamma_dyn);
      check = check_certificate(problem, program, safety, u, tube, best.gamma_init,
                                best.gamma_dyn);
      const bool safety_only = check.worst_selfmap <= 0.0 && check.worst_bounds <= 0.0;
      if (check.valid || !safety_only || attempt == kSafetyRetries) break;
      config.eps_safe += 2.0 * (check.worst_safety + config.eps_safe);
    }
    if (out.status != conic::Status::kOptimal) {
      best.history.push_back(record);
      stop(out.status, "iteration " + std::to_string(k + 1) + ": " + record.solver_status +
                           " (" + out.message + ")");
      break;
    }

    record.cost_upper = check.cost_upper;
    best.history.push_back(record);
    if (!check.valid) {
      stop(conic::Status::kNumericalFailure,
           "iteration " + std::to_string(k + 1) + ": exact re-check failed (self-map " +
               std::to_string(check.worst_selfmap) + ", safety " +
               std::to_string(check.worst_safety) + ", bounds " +
               std::to_string(check.worst_bounds) + ")");
      break;
    }

    const bool first = !best.certified;
    const double previous = best.cost_upper;
    const Vector previous_u = best.u;
    best.certified = true;
    best.u = u;
    best.tube = tube;
    best.cost_upper = check.cost_upper;
    best.linearization = nominal;
    best.iterations = k + 1;
    best.census = census_with_total(conic_program);
    best.constraint_count = conic_program.num_rows();
    best.check = check;

    // Without nonlinear residuals or obstacles the program does not depend on
    // the nominal, so the first solution is already the fixed point.
    const bool independent = program.nonlinear.empty() && problem.obstacles.empty();
    const bool converged =
        independent || (!first && std::abs(check.cost_upper - previous) < options.tolerance);
    nominal = make_nominal(model, u, w0);
    nominal.spread = tube_spread(tube, nominal.z);
    best.nominal_x = nominal.x;
    if (options.on_iterate) options.on_iterate(best);
    if (converged) {
      best.status = ScrStatus::kConverged;
      break;
    }
    guess = out.primal;
    if (!first && options.extrapolate) {
      // Restrictions only allow short steps, so walk on along the last one
      // while the point certifies at its own linearization and is cheaper.
      const Vector step = u - previous_u;
      bool moved = false;
      for (double scale = 1.0; scale <= kMaxExtrapolation; scale *= 2.0) {
        PointCertificate cand = certify_at(problem, clamp_controls(problem, best.u + scale * step),
                                           options.restriction, best.gamma_init, best.gamma_dyn);
        if (!cand.valid || !(cand.check.cost_upper < best.cost_upper)) break;
        best.u = cand.u;
        best.tube = cand.tube;
        best.cost_upper = cand.check.cost_upper;
        best.linearization = cand.nominal;
        best.check = cand.check;
        best.nominal_x = cand.nominal.x;
        nominal = cand.nominal;
        nominal.spread = tube_spread(cand.tube, nominal.z);
        safety = cand.safety;
        moved = true;
        if (options.on_iterate) options.on_iterate(best);
      }
      if (moved) continue;
    }
    try {
      safety = safety_halfspaces(model, nominal.x, problem.obstacles);
    } catch (const Error& e) {
      stop(conic::Status::kNumericalFailure, e.what());
      break;
    }
  }
  return best;
}

MarginResult certify_margin(const RobustProblem& problem, const Vector& u, MarginMode mode,
                            const ScrOptions& options, const conic::Backend& backend) {
  problem.validate();
  require(mode != MarginMode::kFixed, ErrorKind::kInput, "certify needs init, dyn or joint mode");
  require(u.size() == problem.model.dims().m * problem.horizon(), ErrorKind::kDimension,
          "controls must have m N entries");
  MarginResult result;
  NominalPoint nominal = make_nominal(problem.model, u, problem.w_nominal());
  SafetyRestriction safety;
  try {
    safety = safety_halfspaces(problem.model, nominal.x, problem.obstacles);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInfeasible) throw;
    result.diagnostic = e.what();
    return result;
  }

  RestrictionConfig config = options.restriction;
  config.margin = mode;
  config.include_cost = false;
  config.fixed_controls = u;
  // Second pass re-tunes the envelopes to the tube found by the first; any
  // tuning is sound, so the larger margin wins.
  RestrictionProgram program;
  for (int pass = 0; pass < 2; ++pass) {
    RestrictionProgram candidate = assemble_restriction(problem, nominal, safety, config);
    const double gamma = propagated_margin(problem, candidate, safety, u, mode, config.gamma_cap);
    const auto [gi, gd] = radii_for(mode, gamma);
    const Tube tube = propagate_tube(problem, candidate, u, gi, gd);
    if (pass == 0 || gamma > result.gamma) {
      result.gamma = gamma;
      result.tube = tube;
      program = std::move(candidate);
    }
    if (gamma <= 0.0 || !tube.z_upper.allFinite() || !tube.z_lower.allFinite()) break;
    nominal.spread = tube_spread(tube, nominal.z);
  }
  if (result.gamma >= config.gamma_cap) {
    result.diagnostic = "margin reached the cap " + std::to_string(config.gamma_cap);
  } else if (result.gamma == 0.0) {
    result.diagnostic = "restriction is infeasible even at gamma = 0";
  }

  // The conic program gives the same number up to solver accuracy.
  conic::SolveOptions solve_options;
  solve_options.tolerances = options.solver;
  solve_options.tolerances.recheck = std::numeric_limits<double>::infinity();
  const auto out = conic::solve(canonicalize(program), solve_options, &backend);
  if (out.status == conic::Status::kOptimal) {
    result.solver_gamma = out.primal(program.layout.gamma);
  }
  return result;
}

Vector sample_disturbance(const RobustProblem& problem, const SampleSpec& spec,
                          std::uint64_t index, bool on_boundary) {
  const DisturbanceSampler sampler(problem);
  auto rng = derived_rng(spec.seed, index);
  return sampler.full(rng, spec.gamma_init, spec.gamma_dyn, on_boundary);
}

VerifyReport monte_carlo_verify(const RobustProblem& problem, const CertifiedSolution& solution,
                                int samples, std::uint64_t seed, double gamma_scale,
                                int threads) {
  require(samples >= 1, ErrorKind::kInput, "verify needs at least one sample");
  require(solution.certified, ErrorKind::kInput, "verify needs a certified solution");
  const auto& model = problem.model;
  const DisturbanceSampler sampler(problem);
  const double gi = solution.gamma_init * gamma_scale;
  const double gd = solution.gamma_dyn * gamma_scale;
  const int boundary = (samples + 1) / 2;

  struct Outcome {
    double excess = 0.0;
    double cost = 0.0;
    bool hit = false;
  };
  std::vector<Outcome> outcomes(samples);
  parallel_for(samples, threads, [&](int i) {
    auto rng = derived_rng(seed, static_cast<std::uint64_t>(i));
    const Vector w = sampler.full(rng, gi, gd, i < boundary);
    Outcome o;
    Vector x;
    try {
      x = rollout(model, solution.u, w);
    } catch (const Error&) {
      o.excess = std::numeric_limits<double>::infinity();
      o.cost = std::numeric_limits<double>::infinity();
      o.hit = true;
      outcomes[i] = o;
      return;
    }
    const Vector z = transform_states(model, x);
    o.excess = std::max((z - solution.tube.z_upper).maxCoeff(),
                        (solution.tube.z_lower - z).maxCoeff());
    o.cost = trajectory_cost(problem, x, solution.u);
    o.hit = hits_obstacle(problem, x);
    outcomes[i] = o;
  });

  VerifyReport report;
  report.samples = samples;
  report.seed = seed;
  report.cost_upper = solution.cost_upper;
  report.worst_tube_excess = -std::numeric_limits<double>::infinity();
  for (const auto& o : outcomes) {
    report.tube_exits += o.excess > 0.0 ? 1 : 0;
    report.obstacle_hits += o.hit ? 1 : 0;
    report.cost_exceedances += o.cost > solution.cost_upper + 1e-6 ? 1 : 0;
    report.max_cost = std::max(report.max_cost, o.cost);
    report.worst_tube_excess = std::max(report.worst_tube_excess, o.excess);
  }
  return report;
}

double empirical_margin(const RobustProblem& problem, const Vector& u, MarginMode mode,
                        int samples, std::uint64_t seed, double upper, int iterations) {
  require(samples >= 1, ErrorKind::kInput, "empirical margin needs at least one sample");
  const DisturbanceSampler sampler(problem);
  auto violated = [&](double gamma) {
    const auto [gi, gd] = radii_for(mode, gamma);
    std::vector<char> hit(samples, 0);
    parallel_for(samples, 0, [&](int i) {
      auto rng = derived_rng(seed, static_cast<std::uint64_t>(i));
      const Vector w = sampler.full(rng, gi, gd, i < (samples + 1) / 2);
      try {
        hit[i] = hits_obstacle(problem, rollout(problem.model, u, w)) ? 1 : 0;
      } catch (const Error&) {
        hit[i] = 1;
      }
    });
    return std::any_of(hit.begin(), hit.end(), [](char h) { return h != 0; });
  };
  if (violated(0.0)) return 0.0;
  if (!violated(upper)) return upper;
  double lo = 0.0;
  double hi = upper;
  for (int k = 0; k < iterations; ++k) {
    const double mid = 0.5 * (lo + hi);
    (violated(mid) ? hi : lo) = mid;
  }
  return hi;
}

MpcLog receding_horizon_run(const RobustProblem& problem, const Vector& init_u,
                            const MpcOptions& options, const conic::Backend& backend) {
  require(options.replan_period >= 1, ErrorKind::kInput, "replan period must be >= 1");
  require(options.total_steps >= 0, ErrorKind::kInput, "total steps must be >= 0");
  const auto& model = problem.model;
  const auto& d = model.dims();
  const int N = problem.horizon();
  const DisturbanceSampler sampler(problem);

  MpcLog log;
  log.states = Vector::Zero(d.n * (options.total_steps + 1));
  log.controls = Vector::Zero(d.m * options.total_steps);
  Vector x = problem.x0;
  log.states.head(d.n) = x;

  Vector plan;
  int plan_start = 0;
  int step = 0;
  while (step < options.total_steps) {
    MpcCycle cycle;
    cycle.step = step;
    Vector seed_u;
    if (plan.size() == 0) {
      seed_u = init_u;
    } else {
      const int shift = step - plan_start;
      seed_u = Vector::Zero(d.m * N);
      if (shift < N) seed_u.head(d.m * (N - shift)) = plan.tail(d.m * (N - shift));
    }
    RobustProblem local = problem;
    local.x0 = x;
    try {
      cycle.plan = scr_solve(local, seed_u, options.scr, backend);
      if (cycle.plan.certified) {
        plan = cycle.plan.u;
        plan_start = step;
        cycle.replanned = true;
        if (cycle.plan.status == ScrStatus::kSolverFailure) cycle.event = cycle.plan.message;
      } else {
        cycle.event = "replan failed: " + to_string(cycle.plan.status) + " " + cycle.plan.message;
      }
    } catch (const Error& e) {
      cycle.event = std::string("replan failed: ") + e.what();
    }
    if (plan.size() == 0) {
      log.cycles.push_back(std::move(cycle));
      break;
    }

    bool exhausted = false;
    for (int j = 0; j < options.replan_period && step < options.total_steps; ++j) {
      const int index = step - plan_start;
      if (index >= N) {
        exhausted = true;
        break;
      }
      const Vector u = plan.segment(index * d.m, d.m);
      Vector w = problem.w_stage_nominal.segment(index * d.r, d.r);
      if (options.sample_disturbance) {
        auto rng = derived_rng(options.seed, static_cast<std::uint64_t>(step));
        w = sampler.stage(rng, index, problem.uncertainty.gamma_dyn, false);
      }
      x = eval_dynamics(model, index, x, u, w);
      log.controls.segment(step * d.m, d.m) = u;
      log.states.segment((step + 1) * d.n, d.n) = x;
      ++step;
    }
    if (exhausted) {
      cycle.event += cycle.event.empty() ? "plan exhausted" : "; plan exhausted";
      log.cycles.push_back(std::move(cycle));
      break;
    }
    log.cycles.push_back(std::move(cycle));
  }

  log.steps_run = step;
  log.states.conservativeResize(d.n * (step + 1));
  log.controls.conservativeResize(d.m * step);
  for (int k = 0; k < step; ++k) {
    log.cost += 0.5 * (problem.cost.q(0, N) * log.states.segment(k * d.n, d.n)).squaredNorm();
    log.cost += 0.5 * (problem.cost.r(0) * log.controls.segment(k * d.m, d.m)).squaredNorm();
  }
  log.cost += 0.5 * (problem.cost.q(N, N) * log.states.segment(step * d.n, d.n)).squaredNorm();
  return log;
}

}  // namespace scr
