#include <cmath>

#include "doctest.h"
#include "scr/scr.hpp"

using namespace scr;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

// x' = x + w, N = 2, wall x >= 1, unit covariances.
RobustProblem chain(double gamma) {
  return {linear_model(Matrix::Ones(1, 1), Matrix::Zero(1, 1), Matrix::Ones(1, 1), 2, "chain"),
          vec({0.0}),
          Vector::Zero(2),
          {Matrix::Ones(1, 1), {Matrix::Ones(1, 1)}, gamma, gamma},
          {{"wall", {0}, Polytope{-Matrix::Ones(1, 1), vec({-1.0})}}},
          {{Matrix::Ones(1, 1)}, Matrix::Ones(1, 1), {Matrix::Ones(1, 1)}},
          vec({-1.0}),
          vec({1.0})};
}

RobustProblem vehicle(int N, double gamma) {
  return {ground_vehicle_model(0.05, N),
          vec({-25.0, -80.0, 0.0, 0.0}),
          Vector::Zero(2 * N),
          {Matrix::Identity(4, 4), {Matrix::Identity(2, 2)}, gamma, gamma},
          {{"A", {0, 1}, Box{vec({-36.0, -65.0}), vec({-28.0, -55.0})}},
           {"B", {0, 1}, Box{vec({-2.0, -40.0}), vec({6.0, -30.0})}}},
          {{Matrix::Identity(2, 4)}, Matrix::Identity(2, 4), {vec({0.1, 0.01}).asDiagonal()}},
          vec({-100.0, -1.5}),
          vec({20.0, 1.5})};
}

Vector schedule(int N) {
  Vector u(2 * N);
  for (int t = 0; t < N; ++t) {
    const double sign = t < N / 2 ? 1.0 : -1.0;
    u.segment(2 * t, 2) = sign * vec({15.0, 0.75});
  }
  return u;
}

}  // namespace

TEST_CASE("linear problem without obstacles converges to the LQ optimum in one step") {
  Matrix a(2, 2), b(2, 1);
  a << 1.0, 0.1, 0.0, 1.0;
  b << 0.0, 0.1;
  const int N = 5;
  RobustProblem p{linear_model(a, b, Matrix::Identity(2, 2), N),
                  vec({1.0, -0.5}),
                  Vector::Zero(2 * N),
                  {Matrix::Identity(2, 2), {Matrix::Identity(2, 2)}, 0.0, 0.0},
                  {},
                  {{Matrix::Identity(2, 2)}, 2.0 * Matrix::Identity(2, 2), {0.3 * Matrix::Ones(1, 1)}},
                  vec({-conic::kInf}),
                  vec({conic::kInf})};

  // Closed form: x = Phi x0 + Gamma u, minimize 1/2 |W x|^2 + 1/2 |R u|^2.
  Matrix phi = Matrix::Zero(2 * (N + 1), 2), gam = Matrix::Zero(2 * (N + 1), N);
  Matrix w = Matrix::Zero(2 * (N + 1), 2 * (N + 1));
  Matrix power = Matrix::Identity(2, 2);
  for (int t = 0; t <= N; ++t) {
    phi.middleRows(2 * t, 2) = power;
    power = a * power;
    for (int s = 0; s < t; ++s) {
      Matrix ap = Matrix::Identity(2, 2);
      for (int k = 0; k < t - 1 - s; ++k) ap = a * ap;
      gam.block(2 * t, s, 2, 1) = ap * b;
    }
    w.block(2 * t, 2 * t, 2, 2) = (t < N ? 1.0 : 2.0) * Matrix::Identity(2, 2);
  }
  const Matrix h = gam.transpose() * w.transpose() * w * gam + 0.09 * Matrix::Identity(N, N);
  const Vector expected = -h.ldlt().solve(gam.transpose() * w.transpose() * w * phi * p.x0);

  const auto ipm = conic::make_ipm_backend();
  const auto sol = scr_solve(p, Vector::Zero(N), ScrOptions{}, *ipm);
  REQUIRE(sol.certified);
  CHECK(sol.status == ScrStatus::kConverged);
  CHECK(sol.iterations == 1);
  CHECK((sol.u - expected).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("chain margin: one third minus the safety margin") {
  const auto p = chain(0.0);
  const auto ipm = conic::make_ipm_backend();
  const ScrOptions options;
  const auto margin = certify_margin(p, Vector::Zero(2), MarginMode::kJoint, options, *ipm);
  CHECK(std::abs(margin.gamma - 1.0 / 3.0) <= 1e-4 + options.restriction.eps_safe);
  CHECK(margin.gamma <= 1.0 / 3.0);
  CHECK(std::abs(margin.solver_gamma - margin.gamma) < 1e-5);

  // Init mode only sees x0: x_2 = gamma, so the margin is 1.
  const auto init = certify_margin(p, Vector::Zero(2), MarginMode::kInit, options, *ipm);
  CHECK(init.gamma == doctest::Approx(1.0 - options.restriction.eps_safe).epsilon(1e-6));
}

TEST_CASE("a nominal that touches an obstacle has zero margin") {
  auto p = chain(0.0);
  p.obstacles = {{"wall", {0}, Polytope{-Matrix::Ones(1, 1), vec({0.0})}}};  // x >= 0
  const auto ipm = conic::make_ipm_backend();
  const auto margin = certify_margin(p, Vector::Zero(2), MarginMode::kJoint, ScrOptions{}, *ipm);
  CHECK(margin.gamma == 0.0);
  CHECK_FALSE(margin.diagnostic.empty());
  CHECK_THROWS_AS(certify_margin(p, Vector::Zero(2), MarginMode::kFixed, ScrOptions{}, *ipm),
                  Error);
}

TEST_CASE("vehicle certificate survives sampling, inflated radii do not") {
  const auto p = vehicle(10, 0.5);
  const auto ipm = conic::make_ipm_backend();
  const auto sol = scr_solve(p, Vector::Zero(20), ScrOptions{}, *ipm);
  REQUIRE(sol.certified);
  CHECK(sol.status == ScrStatus::kConverged);
  CHECK(sol.check.valid);

  const auto report = monte_carlo_verify(p, sol, 1000, 7);
  CHECK(report.samples == 1000);
  CHECK(report.passed());
  CHECK(report.max_cost <= sol.cost_upper + 1e-6);

  const auto stressed = monte_carlo_verify(p, sol, 1000, 7, 10.0);
  CHECK(stressed.tube_exits > 0);

  CHECK_THROWS_AS(monte_carlo_verify(p, sol, 0, 7), Error);
}

TEST_CASE("seeds whose rollout enters an obstacle are rejected") {
  auto p = vehicle(10, 0.5);
  p.obstacles.push_back({"start", {0, 1}, Box{vec({-26.0, -81.0}), vec({-20.0, -79.0})}});
  const auto ipm = conic::make_ipm_backend();
  try {
    scr_solve(p, Vector::Zero(20), ScrOptions{}, *ipm);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasible);
    CHECK(std::string(e.what()).find("initial controls") != std::string::npos);
  }
}

TEST_CASE("every iterate is an exact certificate and c_u decreases") {
  const auto p = vehicle(10, 0.5);
  const auto ipm = conic::make_ipm_backend();
  Vector seed = Vector::Zero(20);
  for (int t = 0; t < 10; ++t) seed(2 * t + 1) = 1.5;
  ScrOptions options;
  options.extrapolate = false;
  options.max_iterations = 4;
  const auto sol = scr_solve(p, seed, options, *ipm);
  REQUIRE(sol.certified);
  REQUIRE(sol.history.size() >= 2);
  for (std::size_t k = 1; k < sol.history.size(); ++k) {
    CHECK(sol.history[k].cost_upper <= sol.history[k - 1].cost_upper + 1e-6);
  }
  CHECK(sol.nominal_x.isApprox(rollout(p.model, sol.u, p.w_nominal())));
}

TEST_CASE("propagated tube is contained in the solver tube") {
  const auto p = vehicle(10, 0.5);
  const auto nominal = make_nominal(p.model, Vector::Zero(20), p.w_nominal());
  const auto safety = safety_halfspaces(p.model, nominal.x, p.obstacles);
  const auto program = assemble_restriction(p, nominal, safety, RestrictionConfig{});
  const auto ipm = conic::make_ipm_backend();
  const auto out = conic::solve(canonicalize(program), {}, ipm.get());
  REQUIRE(out.status == conic::Status::kOptimal);
  const Vector u = controls_of(program, out.primal);
  const Tube solver = tube_of(program, out.primal);
  const Tube exact = propagate_tube(p, program, u, 0.5, 0.5);
  CHECK(((exact.z_upper - solver.z_upper).array() <= 1e-6).all());
  CHECK(((solver.z_lower - exact.z_lower).array() <= 1e-6).all());
  const auto check = check_certificate(p, program, safety, u, exact, 0.5, 0.5);
  CHECK(check.valid);
  CHECK(check.cost_upper <= out.objective + 1e-6 * std::abs(out.objective));
}

TEST_CASE("certified initial-state margin of the open-loop schedule is below the sampled one") {
  const auto p = vehicle(20, 0.0);
  const auto ipm = conic::make_ipm_backend();
  const auto margin = certify_margin(p, schedule(20), MarginMode::kInit, ScrOptions{}, *ipm);
  const double sampled = empirical_margin(p, schedule(20), MarginMode::kInit, 400, 3);
  CHECK(margin.gamma > 0.0);
  CHECK(margin.gamma <= sampled);
}

TEST_CASE("warm and cold starts agree") {
  const auto p = vehicle(10, 0.5);
  const auto ipm = conic::make_ipm_backend();
  ScrOptions warm, cold;
  cold.warm_start = false;
  const auto a = scr_solve(p, Vector::Zero(20), warm, *ipm);
  const auto b = scr_solve(p, Vector::Zero(20), cold, *ipm);
  REQUIRE(a.certified);
  REQUIRE(b.certified);
  CHECK(std::abs(a.cost_upper - b.cost_upper) <= 1e-6 * std::max(1.0, std::abs(a.cost_upper)));
}

TEST_CASE("receding horizon with zero disturbance replays the plan") {
  const auto p = vehicle(10, 0.5);
  const auto ipm = conic::make_ipm_backend();
  MpcOptions options;
  options.total_steps = 10;
  options.replan_period = 10;
  const auto log = receding_horizon_run(p, Vector::Zero(20), options, *ipm);
  REQUIRE(log.steps_run == 10);
  REQUIRE(log.cycles.size() == 1);
  const auto& plan = log.cycles[0].plan;
  CHECK(log.controls == plan.u);
  CHECK((log.states - plan.nominal_x).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(log.cost == doctest::Approx(trajectory_cost(p, plan.nominal_x, plan.u)));
}

TEST_CASE("seeded receding horizon runs are reproducible") {
  const auto p = vehicle(10, 0.5);
  const auto ipm = conic::make_ipm_backend();
  MpcOptions options;
  options.total_steps = 10;
  options.replan_period = 5;
  options.sample_disturbance = true;
  options.seed = 42;
  const auto a = receding_horizon_run(p, Vector::Zero(20), options, *ipm);
  const auto b = receding_horizon_run(p, Vector::Zero(20), options, *ipm);
  CHECK(a.steps_run == 10);
  CHECK(a.states == b.states);
  CHECK(a.controls == b.controls);
  CHECK_THROWS_AS(
      [&] {
        MpcOptions bad = options;
        bad.replan_period = 0;
        receding_horizon_run(p, Vector::Zero(20), bad, *ipm);
      }(),
      Error);
}

TEST_CASE("sampled disturbances lie in their ellipsoids") {
  const auto p = vehicle(10, 0.5);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Vector edge = sample_disturbance(p, {0.5, 0.5, 9}, i, true);
    const Vector inner = sample_disturbance(p, {0.5, 0.5, 9}, i, false);
    CHECK((edge.head(4) - p.x0).norm() == doctest::Approx(0.5));
    CHECK((inner.head(4) - p.x0).norm() <= 0.5 + 1e-12);
    for (int t = 0; t < 10; ++t) CHECK(edge.segment(4 + 2 * t, 2).norm() == doctest::Approx(0.5));
  }
  CHECK(sample_disturbance(p, {0.5, 0.5, 9}, 3, true) == sample_disturbance(p, {0.5, 0.5, 9}, 3, true));
}
