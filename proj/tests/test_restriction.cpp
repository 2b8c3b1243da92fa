#include <cmath>
#include <random>

#include "doctest.h"
#include "scr/restriction.hpp"

using namespace scr;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

Obstacle ball_obstacle(Vector center, double radius) {
  return {"ball", {0, 1}, Ball{std::move(center), radius}};
}

// x' = x + w over N = 2 with unit covariances and the obstacle x >= 1.
RobustProblem chain_problem(double gamma) {
  RobustProblem p{linear_model(Matrix::Ones(1, 1), Matrix::Zero(1, 1), Matrix::Ones(1, 1), 2,
                               "chain"),
                  vec({0.0}),
                  Vector::Zero(2),
                  {Matrix::Ones(1, 1), {Matrix::Ones(1, 1)}, gamma, gamma},
                  {{"wall", {0}, Polytope{-Matrix::Ones(1, 1), vec({-1.0})}}},
                  {{Matrix::Ones(1, 1)}, Matrix::Ones(1, 1), {Matrix::Ones(1, 1)}},
                  vec({-1.0}),
                  vec({1.0})};
  return p;
}

}  // namespace

TEST_CASE("projection onto simple shapes") {
  CHECK(project(vec({2.0, 0.0}), Ball{vec({0.0, 0.0}), 1.0}) == vec({1.0, 0.0}));
  CHECK(project(vec({2.0, 0.5}), Box{vec({0.0, 0.0}), vec({1.0, 1.0})}) == vec({1.0, 0.5}));
  CHECK(project(vec({0.2, 0.3}), Ball{vec({0.0, 0.0}), 1.0}) == vec({0.2, 0.3}));
  CHECK_THROWS_AS(validate_obstacle({"bad", {0}, Ball{vec({0.0}), -1.0}}, 2), Error);
}

TEST_CASE("polytope projection satisfies the variational inequality") {
  // Triangle with vertices (0,0), (2,0), (0,2).
  Polytope tri{Matrix(3, 2), vec({0.0, 0.0, 2.0})};
  tri.A << -1, 0, 0, -1, 1, 1;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-4.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector p = vec({dist(rng), dist(rng)});
    const Vector b = project(p, tri);
    CHECK(((tri.A * b - tri.b).array() <= 1e-12).all());
    // (p - b)'(y - b) <= 0 for every y in the triangle.
    for (int s = 0; s < 50; ++s) {
      double a = std::abs(dist(rng)) / 4.0, c = std::abs(dist(rng)) / 4.0;
      if (a + c > 1.0) {
        a = 1.0 - a;
        c = 1.0 - c;
      }
      const Vector y = vec({2.0 * a, 2.0 * c});
      CHECK((p - b).dot(y - b) <= 1e-10);
    }
  }
  CHECK(project(vec({3.0, 3.0}), tri).isApprox(vec({1.0, 1.0})));
  CHECK(project(vec({-1.0, -1.0}), tri).cwiseAbs().maxCoeff() < 1e-12);

  Polytope empty{Matrix(2, 1), vec({-1.0, -1.0})};
  empty.A << 1, -1;
  CHECK_THROWS_AS(project(vec({0.0}), empty), Error);
}

TEST_CASE("safety half-spaces by hand") {
  const auto model = linear_model(Matrix::Identity(2, 2), Matrix::Zero(2, 1),
                                  Matrix::Identity(2, 2), 1);
  const std::vector<Obstacle> unit{ball_obstacle(vec({0.0, 0.0}), 1.0)};
  const auto right = safety_halfspaces(model, vec({9.0, 9.0, 2.0, 0.0}), unit);
  CHECK(right.L[1] == vec({-1.0, 0.0}).transpose());
  CHECK(right.d[1](0) == doctest::Approx(1.0));
  const auto left = safety_halfspaces(model, vec({9.0, 9.0, -2.0, 0.0}), unit);
  CHECK(left.L[1] == vec({1.0, 0.0}).transpose());
  CHECK(left.d[1](0) == doctest::Approx(1.0));

  const std::vector<Obstacle> two{ball_obstacle(vec({0.0, 0.0}), 1.0),
                                  ball_obstacle(vec({5.0, 0.0}), 1.0)};
  CHECK(safety_halfspaces(model, vec({9.0, 9.0, 2.0, 0.0}), two).rows_per_stage() == 2);

  try {
    safety_halfspaces(model, vec({9.0, 9.0, 0.5, 0.0}), unit);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasible);
    CHECK(std::string(e.what()).find("stage 1") != std::string::npos);
  }
}

TEST_CASE("support term") {
  Matrix r = Matrix::Zero(1, 2 + 2 * 2);
  r(0, 2) = 3.0;
  r(0, 3) = 4.0;
  UncertaintyModel unc{Matrix::Identity(2, 2), {Matrix::Identity(2, 2)}, 0.0, 0.0};
  const auto xi = xi_support(r, unc, Vector::Zero(6), 2, 2, 2);
  CHECK(xi.at(0.0, 1.0)(0) == doctest::Approx(5.0));
  CHECK(xi.at(0.0, 0.0)(0) == 0.0);

  // Sampled maxima never exceed the support value and approach it.
  Matrix rr = Matrix::Zero(1, 6);
  rr << 1.0, -2.0, 0.5, 3.0, -1.0, 2.0;
  Matrix s(2, 2);
  s << 2.0, 0.3, 0.3, 0.5;
  UncertaintyModel shaped{s, {s}, 0.0, 0.0};
  const Vector w0 = vec({0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const auto sup = xi_support(rr, shaped, w0, 2, 2, 2);
  const double gamma = 0.7;
  const double bound = sup.at(gamma, gamma)(0);
  const Matrix root = psd_sqrt(s, "s");
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  double best = -1e300;
  for (int k = 0; k < 100000; ++k) {
    Vector w = w0;
    for (int b = 0; b < 3; ++b) {
      Vector e = vec({normal(rng), normal(rng)});
      e /= e.norm();
      w.segment(2 * b, 2) += gamma * root * e;
    }
    best = std::max(best, (rr * w)(0));
  }
  CHECK(best <= bound + 1e-12);
  CHECK(best >= bound - 0.05);
}

TEST_CASE("chain restriction: collapsed tube at gamma zero") {
  const auto p = chain_problem(0.0);
  const auto nominal = make_nominal(p.model, Vector::Zero(2), p.w_nominal());
  const auto safety = safety_halfspaces(p.model, nominal.x, p.obstacles);
  RestrictionConfig config;
  const auto program = assemble_restriction(p, nominal, safety, config);
  CHECK(program.selfmap.size() == 2 * 3);
  CHECK(program.safety.size() == 2);
  CHECK(program.nonlinear.empty());
  const Tube tube{nominal.z, nominal.z};
  const auto check = check_certificate(p, program, safety, Vector::Zero(2), tube, 0.0, 0.0);
  CHECK(check.worst_selfmap <= 1e-12);
  CHECK(check.worst_safety == doctest::Approx(-1.0));
}

TEST_CASE("chain margin is one third") {
  const auto p = chain_problem(0.0);
  const auto nominal = make_nominal(p.model, Vector::Zero(2), p.w_nominal());
  const auto safety = safety_halfspaces(p.model, nominal.x, p.obstacles);
  RestrictionConfig config;
  config.margin = MarginMode::kJoint;
  config.include_cost = false;
  config.fixed_controls = Vector::Zero(2);
  const auto program = assemble_restriction(p, nominal, safety, config);
  // Exact reachable tube for gamma = 1/3: |x_t| <= (t+1)/3.
  const double g = (1.0 - config.eps_safe) / 3.0;
  const Tube tube{vec({g, 2 * g, 3 * g}), vec({-g, -2 * g, -3 * g})};
  const double gamma = exact_margin(p, program, safety, Vector::Zero(2), tube, MarginMode::kJoint);
  CHECK(gamma == doctest::Approx(g).epsilon(1e-12));
}

TEST_CASE("cost epigraph over an interval") {
  auto p = chain_problem(0.0);
  const Tube tube{vec({2.0, 2.0, 2.0}), vec({-1.0, -1.0, -1.0})};
  // y = max(|-1|, |2|) = 2 per stage: 3 * 1/2 * 4.
  CHECK(tube_cost_upper(p, Vector::Zero(2), tube) == doctest::Approx(6.0));
  const Tube point{vec({0.5, 1.0, -1.5}), vec({0.5, 1.0, -1.5})};
  const Vector u = vec({0.3, -0.2});
  CHECK(tube_cost_upper(p, u, point) ==
        doctest::Approx(trajectory_cost(p, vec({0.5, 1.0, -1.5}), u)));
}

TEST_CASE("ground vehicle census") {
  const int N = 10;
  RobustProblem p{ground_vehicle_model(0.05, N),
                  vec({-25.0, -80.0, 0.0, 0.0}),
                  Vector::Zero(2 * N),
                  {Matrix::Identity(4, 4), {Matrix::Identity(2, 2)}, 0.5, 0.5},
                  {ball_obstacle(vec({-10.0, -40.0}), 3.0), ball_obstacle(vec({-20.0, -20.0}), 3.0)},
                  {{Matrix::Identity(2, 4)}, Matrix::Identity(2, 4), {vec({0.1, 0.01}).asDiagonal()}},
                  vec({-100.0, -1.5}),
                  vec({20.0, 1.5})};
  p.validate();
  const auto nominal = make_nominal(p.model, Vector::Zero(2 * N), p.w_nominal());
  const auto safety = safety_halfspaces(p.model, nominal.x, p.obstacles);
  const auto program = assemble_restriction(p, nominal, safety, RestrictionConfig{});
  const auto census = canonicalize(program).census();
  CHECK(census.at("selfmap") == 8 * (N + 1));
  CHECK(census.at("envelope") == 16 * N);
  CHECK(census.at("safety") == 2 * N);
  CHECK(census.at("cost") == 4 * (N + 1) + 1);
  CHECK(constraint_count_bound(4, 4, 2, 2, 10) == 460);
  CHECK(canonicalize(program).num_rows() <= 460);

  // Envelope rows are the only quadratic rows besides the cost epigraph.
  int quadratic = 0;
  for (const auto& row : canonicalize(program).rows()) quadratic += row.is_quadratic() ? 1 : 0;
  CHECK(quadratic == 16 * N + 1);
  CHECK_NOTHROW(canonicalize(program).validate());
}
