#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "scr/conic.hpp"
#include "sparse_ldl.hpp"

using namespace scr;
using namespace scr::conic;

namespace {

Row linear_row(std::vector<LinearTerm> terms, double rhs, std::string category = "test") {
  Row row;
  row.linear = std::move(terms);
  row.rhs = rhs;
  row.category = std::move(category);
  return row;
}

struct Solver {
  std::unique_ptr<Backend> backend;
  SolveOptions options;
};

std::vector<Solver> solvers() {
  std::vector<Solver> out;
  out.push_back({make_ipm_backend(), {}});
  return out;
}

}  // namespace

TEST_CASE("minimize x subject to x >= 1") {
  ConicProgram program;
  const int x = program.add_variable("x");
  program.add_row(linear_row({{x, -1.0}}, -1.0));
  program.objective_linear = {{x, 1.0}};
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    const SolveOutcome out = solve(program, solver.options, solver.backend.get());
    REQUIRE(out.status == Status::kOptimal);
    CHECK(out.primal(x) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(out.max_violation <= 1e-6);
  }
}

TEST_CASE("maximize gamma subject to 3 gamma <= 1") {
  ConicProgram program;
  const int g = program.add_variable("gamma", 0.0);
  program.add_row(linear_row({{g, 3.0}}, 1.0));
  program.sense = Sense::kMaximize;
  program.objective_linear = {{g, 1.0}};
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    const SolveOutcome out = solve(program, solver.options, solver.backend.get());
    REQUIRE(out.status == Status::kOptimal);
    CHECK(std::abs(out.primal(g) - 1.0 / 3.0) < 1e-6);
    CHECK(std::abs(out.objective - 1.0 / 3.0) < 1e-6);
  }
}

TEST_CASE("empty program is trivially valid") {
  ConicProgram program;
  program.validate();
  CHECK(program.num_rows() == 0);
  CHECK(program.objective(Vector()) == 0.0);
}

TEST_CASE("quadratic row: maximize x + y on the unit disk") {
  ConicProgram program;
  const int x = program.add_variable("x");
  const int y = program.add_variable("y");
  Row disk;
  disk.quad_vars = {x, y};
  disk.quad = 2.0 * Matrix::Identity(2, 2);  // 1/2 v'(2I)v = |v|^2 <= 1
  disk.rhs = 1.0;
  disk.category = "disk";
  program.add_row(disk);
  program.sense = Sense::kMaximize;
  program.objective_linear = {{x, 1.0}, {y, 1.0}};
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    const SolveOutcome out = solve(program, solver.options, solver.backend.get());
    REQUIRE(out.status == Status::kOptimal);
    CHECK(std::abs(out.objective - std::sqrt(2.0)) < 1e-6);
  }
  CHECK(program.census().at("disk") == 1);
}

TEST_CASE("quadratic objective with bounds") {
  // minimize 1/2 (x-3)^2 -> 1/2 x^2 - 3x, x <= 2
  ConicProgram program;
  const int x = program.add_variable("x", -kInf, 2.0);
  program.objective_quad_vars = {x};
  program.objective_quad = Matrix::Identity(1, 1);
  program.objective_linear = {{x, -3.0}};
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    const SolveOutcome out = solve(program, solver.options, solver.backend.get());
    REQUIRE(out.status == Status::kOptimal);
    CHECK(std::abs(out.primal(x) - 2.0) < 1e-6);
  }
}

TEST_CASE("equality rows and fixed variables") {
  // minimize x + 2y subject to x + y == 3, y fixed at 1 through its bounds.
  ConicProgram program;
  const int x = program.add_variable("x");
  const int y = program.add_variable("y", 1.0, 1.0);
  Row eq = linear_row({{x, 1.0}, {y, 1.0}}, 3.0);
  eq.sense = RowSense::kEqual;
  program.add_row(eq);
  program.objective_linear = {{x, 1.0}, {y, 2.0}};
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    const SolveOutcome out = solve(program, solver.options, solver.backend.get());
    REQUIRE(out.status == Status::kOptimal);
    CHECK(std::abs(out.primal(x) - 2.0) < 1e-6);
    CHECK(std::abs(out.objective - 4.0) < 1e-6);
  }
}

TEST_CASE("infeasible program reports status, not error") {
  ConicProgram program;
  const int x = program.add_variable("x");
  program.add_row(linear_row({{x, 1.0}}, 0.0));
  program.add_row(linear_row({{x, -1.0}}, -1.0));
  program.objective_linear = {{x, 1.0}};
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    CHECK(solve(program, solver.options, solver.backend.get()).status == Status::kInfeasible);
  }
}

TEST_CASE("unbounded program is not reported optimal") {
  ConicProgram program;
  const int x = program.add_variable("x");
  program.add_row(linear_row({{x, -1.0}}, 5.0));
  program.objective_linear = {{x, -1.0}};
  const auto ipm = make_ipm_backend();
  CHECK(solve(program, {}, ipm.get()).status == Status::kInfeasible);
}

TEST_CASE("interior point matches the closed form of a linear objective over an ellipsoid") {
  // minimize a'v subject to 1/2 v'Pv <= r: optimum -sqrt(2 r a'P^-1 a).
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  const auto ipm = make_ipm_backend();
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 2 + trial % 5;
    Matrix f(dim, dim);
    Vector a(dim);
    for (int i = 0; i < dim; ++i) {
      a(i) = normal(rng);
      for (int j = 0; j < dim; ++j) f(i, j) = normal(rng);
    }
    const Matrix p = f * f.transpose() + 0.5 * Matrix::Identity(dim, dim);
    const double r = 0.1 + std::abs(normal(rng)) * 1e3;
    ConicProgram program;
    Row row;
    for (int i = 0; i < dim; ++i) {
      row.quad_vars.push_back(program.add_variable("v" + std::to_string(i)));
      program.objective_linear.push_back({i, a(i)});
    }
    row.quad = p;
    row.rhs = r;
    row.scale = r;
    row.category = "ball";
    program.add_row(row);
    const SolveOutcome out = solve(program, {}, ipm.get());
    REQUIRE(out.status == Status::kOptimal);
    const double expected = -std::sqrt(2.0 * r * a.dot(p.ldlt().solve(a)));
    CHECK(out.objective == doctest::Approx(expected).epsilon(1e-7));
  }
}

TEST_CASE("random planar programs match vertex enumeration") {
  // minimize c'v over a bounded polygon: the optimum sits on a vertex, and
  // every vertex is the intersection of two constraint lines.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  const auto ipm = make_ipm_backend();
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<Eigen::RowVector2d> a;
    std::vector<double> b;
    for (int r = 0; r < 6; ++r) {
      a.push_back({normal(rng), normal(rng)});
      b.push_back(1.0 + std::abs(normal(rng)));  // v = 0 stays interior
    }
    for (int i = 0; i < 2; ++i) {
      Eigen::RowVector2d e = Eigen::RowVector2d::Zero();
      e(i) = 1.0;
      a.push_back(e);
      b.push_back(5.0);
      a.push_back(-e);
      b.push_back(5.0);
    }
    const Eigen::Vector2d c(normal(rng), normal(rng));

    double expected = kInf;
    for (std::size_t p = 0; p < a.size(); ++p) {
      for (std::size_t q = p + 1; q < a.size(); ++q) {
        Eigen::Matrix2d m;
        m << a[p], a[q];
        if (std::abs(m.determinant()) < 1e-9) continue;
        const Eigen::Vector2d v = m.partialPivLu().solve(Eigen::Vector2d(b[p], b[q]));
        bool feasible = true;
        for (std::size_t r = 0; r < a.size(); ++r) feasible = feasible && a[r] * v <= b[r] + 1e-9;
        if (feasible) expected = std::min(expected, c.dot(v));
      }
    }

    ConicProgram program;
    const int x = program.add_variable("x");
    const int y = program.add_variable("y");
    for (std::size_t r = 0; r < a.size(); ++r) {
      program.add_row(linear_row({{x, a[r](0)}, {y, a[r](1)}}, b[r]));
    }
    program.objective_linear = {{x, c(0)}, {y, c(1)}};
    const SolveOutcome out = solve(program, {}, ipm.get());
    REQUIRE(out.status == Status::kOptimal);
    CHECK(out.objective == doctest::Approx(expected).epsilon(1e-7));
    CHECK(out.max_violation <= 1e-7);
  }
}

TEST_CASE("sparse LDL solves quasi-definite systems") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  const int n = 6, m = 9;
  Matrix g(m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) g(i, j) = (i + j) % 3 == 0 ? normal(rng) : 0.0;
  }
  Matrix k = Matrix::Zero(n + m, n + m);
  k.topLeftCorner(n, n) = 1e-3 * Matrix::Identity(n, n);
  k.bottomLeftCorner(m, n) = g;
  k.topRightCorner(n, m) = g.transpose();
  for (int i = 0; i < m; ++i) k(n + i, n + i) = -std::exp(normal(rng));
  const Eigen::SparseMatrix<double> lower = Matrix(k.triangularView<Eigen::Lower>()).sparseView();
  Vector signs = Vector::Constant(n + m, -1.0);
  signs.head(n).setOnes();

  detail::SparseLdl ldl;
  ldl.analyze(lower);
  ldl.factor(lower, signs);
  CHECK(ldl.bumped() == 0);
  Vector rhs(n + m);
  for (int i = 0; i < n + m; ++i) rhs(i) = normal(rng);
  CHECK((k * ldl.solve(rhs) - rhs).lpNorm<Eigen::Infinity>() < 1e-10);

  // A decoupled zero pivot is bumped instead of failing; same pattern.
  Eigen::SparseMatrix<double> singular = lower;
  for (Eigen::SparseMatrix<double>::InnerIterator it(singular, 0); it; ++it) it.valueRef() = 0.0;
  ldl.factor(singular, signs);
  CHECK(ldl.bumped() > 0);
  CHECK(ldl.solve(rhs).allFinite());
}

TEST_CASE("missing backend is a configuration error") {
  ConicProgram program;
  program.add_variable("x");
  try {
    solve(program, {}, nullptr);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfiguration);
  }
}

TEST_CASE("non-PSD quadratic rows are rejected with the row category") {
  ConicProgram program;
  const int x = program.add_variable("x");
  Row bad;
  bad.quad_vars = {x};
  bad.quad = -Matrix::Identity(1, 1);
  bad.category = "envelope";
  program.add_row(bad);
  CHECK_THROWS_WITH_AS(program.validate(), doctest::Contains("envelope"), Error);
}

TEST_CASE("warm start from the optimum reproduces it") {
  ConicProgram program;
  const int x = program.add_variable("x");
  const int y = program.add_variable("y");
  program.add_row(linear_row({{x, -1.0}, {y, -1.0}}, -1.0));
  program.objective_quad_vars = {x, y};
  program.objective_quad = Matrix::Identity(2, 2);
  for (const auto& solver : solvers()) {
    CAPTURE(solver.backend->name());
    const SolveOutcome cold = solve(program, solver.options, solver.backend.get());
    REQUIRE(cold.status == Status::kOptimal);
    SolveOptions warm = solver.options;
    warm.initial_guess = cold.primal;
    const SolveOutcome hot = solve(program, warm, solver.backend.get());
    REQUIRE(hot.status == Status::kOptimal);
    CHECK(std::abs(hot.objective - cold.objective) < 1e-6);
    CHECK(std::abs(cold.primal(x) - 0.5) < 1e-6);
  }
}
