#include <cmath>
#include <numbers>

#include "doctest.h"
#include "scr/model.hpp"

using namespace scr;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

NominalPoint single_stage_nominal(const FeedbackModel& model, const Vector& x, const Vector& u) {
  NominalPoint nominal;
  const int N = model.horizon();
  nominal.x = x.replicate(N + 1, 1);
  nominal.z = (model.C(0) * x).replicate(N + 1, 1);
  nominal.u = u.replicate(N, 1);
  nominal.w = Vector::Zero(model.dims().n + N * model.dims().r);
  return nominal;
}

}  // namespace

TEST_CASE("ground vehicle dimensions") {
  const auto model = ground_vehicle_model(0.05, 10);
  const auto& d = model.dims();
  CHECK(d.n == 4);
  CHECK(d.m == 2);
  CHECK(d.p == 8);
  CHECK(d.q == 4);
  CHECK(d.r == 2);
  CHECK(model.sparsity_degree() == 2);
  CHECK(model.time_invariant());
}

TEST_CASE("ground vehicle Euler step by hand") {
  const double h = 0.05;
  const auto model = ground_vehicle_model(h, 3);
  const Vector x = vec({1.0, -2.0, 3.0, 0.4});
  const Vector u = vec({0.5, -0.25});
  const Vector w = vec({0.1, -0.2});
  const Vector next = eval_dynamics(model, 1, x, u, w);
  CHECK(next(0) == doctest::Approx(1.0 + h * (3.0 * std::cos(0.4) + 0.1)));
  CHECK(next(1) == doctest::Approx(-2.0 + h * (3.0 * std::sin(0.4) - 0.2)));
  CHECK(next(2) == doctest::Approx(3.0 + h * 0.5));
  CHECK(next(3) == doctest::Approx(0.4 - h * 0.25));
}

TEST_CASE("analytic basis Jacobian matches finite differences") {
  const auto model = ground_vehicle_model(0.05, 2);
  const Vector z = vec({0.3, 0.7, -1.5, 2.2});
  const Vector u = vec({1.0, 0.1});
  const Matrix analytic = model.stage(0).basis.jacobian(z, u);
  const Matrix numeric = basis_jacobian_fd(model, 0, z, u);
  CHECK((analytic - numeric).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("residual and linearization") {
  const auto model = ground_vehicle_model(0.05, 2);
  const Vector x0 = vec({0.0, 0.0, 2.0, 0.5});
  const Vector u0 = vec({0.0, 0.0});
  const auto nominal = single_stage_nominal(model, x0, u0);

  // f(x) = J_f x + M g(Cx, u).
  const Vector x = vec({1.0, 1.0, 2.5, 0.9});
  const Vector u = vec({0.3, -0.2});
  const Vector f = eval_dynamics(model, 0, x, u, Vector::Zero(2));
  const Vector lin = jacobian_dynamics(model, 0, nominal) * x +
                     model.stage(0).M * residual(model, 0, x, u, nominal);
  CHECK((f - lin).cwiseAbs().maxCoeff() < 1e-12);

  // Identity components have zero residual.
  const Vector g = residual(model, 0, x, u, nominal);
  CHECK(g.head(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual envelopes are sound") {
  const auto model = ground_vehicle_model(0.05, 2);
  const Vector x0 = vec({0.0, 0.0, 2.0, 0.5});
  const Vector u0 = vec({1.0, 0.2});
  const auto nominal = single_stage_nominal(model, x0, u0);
  for (int k = 0; k < model.dims().p; ++k) {
    const auto env = residual_envelope(model, 0, k, nominal);
    CHECK(env.is_convex_pair());
    const auto& set = model.stage(0).sparsity[k];
    const auto local = static_cast<Eigen::Index>(set.size());
    auto fn = [&](const Vector& y) {
      Vector z = x0;
      for (Eigen::Index i = 0; i < local; ++i) z(set[i]) = y(i);
      return residual(model, 0, z, y.tail(2), nominal)(k);
    };
    Vector lo = env.anchor.array() - 3.0;
    Vector hi = env.anchor.array() + 3.0;
    const auto report = soundness_falsify(env, fn, lo, hi, 4000, 3);
    CHECK(report.worst <= 1e-10);
    if (k < 4 || k >= 6) CHECK(env.is_exact_affine());
  }
}

TEST_CASE("declared sparsity is honest") {
  const auto model = ground_vehicle_model(0.05, 2);
  const auto bad = find_sparsity_violation(model, 0, vec({0.1, 0.2, 1.0, 0.3}), vec({0.0, 0.0}));
  CHECK(bad.first == -1);
}

TEST_CASE("linear model is exact") {
  Matrix a(2, 2), bu(2, 1), bw(2, 1);
  a << 1.0, 0.1, 0.0, 1.0;
  bu << 0.0, 0.1;
  bw << 1.0, 0.0;
  const auto model = linear_model(a, bu, bw, 4);
  CHECK(model.sparsity_degree() == 1);
  const Vector x = vec({1.0, 2.0});
  const Vector u = vec({3.0});
  const Vector w = vec({0.5});
  CHECK((eval_dynamics(model, 2, x, u, w) - (a * x + bu * u + bw * w)).norm() < 1e-15);
  const auto nominal = single_stage_nominal(model, x, u);
  CHECK(residual(model, 0, x, u, nominal).head(2).norm() == 0.0);
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(ground_vehicle_model(0.0, 3), Error);
  CHECK_THROWS_AS(ground_vehicle_model(0.05, 0), Error);

  Matrix a = Matrix::Identity(2, 2);
  const auto model = linear_model(a, Matrix::Zero(2, 1), Matrix::Identity(2, 2), 3);
  CHECK_THROWS_AS(residual(model, 0, vec({0.0, 0.0}), vec({0.0}), NominalPoint{}), Error);
  CHECK_THROWS_AS(eval_dynamics(model, 0, vec({0.0}), vec({0.0}), vec({0.0, 0.0})), Error);
  CHECK_THROWS_AS(model.stage(3), Error);

  StageModel s = model.stage(0);
  s.C = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(FeedbackModel("rank", 3, {s}), Error);

  StageModel t = model.stage(0);
  CHECK_THROWS_AS(FeedbackModel("count", 3, {t, t}), Error);
  CHECK_NOTHROW(FeedbackModel("per-stage", 2, {t, t}));
}

TEST_CASE("with_horizon keeps dynamics") {
  const auto model = ground_vehicle_model(0.05, 5).with_horizon(12);
  CHECK(model.horizon() == 12);
  CHECK(model.dims().p == 8);
}

TEST_CASE("ground vehicle hand evaluations") {
  const double h = 0.05;
  const auto model = ground_vehicle_model(h, 2);
  const Vector zero2 = Vector::Zero(2);
  const Vector next = eval_dynamics(model, 0, vec({0.0, 0.0, 1.0, 0.0}), zero2, zero2);
  CHECK((next - vec({0.05, 0.0, 1.0, 0.0})).cwiseAbs().maxCoeff() < 1e-15);

  const Vector turned =
      eval_dynamics(model, 0, vec({0.0, 0.0, 2.0, std::numbers::pi / 2}), zero2, zero2);
  CHECK(turned(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(turned(1) == doctest::Approx(2.0 * h));

  const auto nominal = single_stage_nominal(model, vec({0.0, 0.0, 1.0, 0.0}), zero2);
  Matrix expected(4, 4);
  expected << 1, 0, h, 0, 0, 1, 0, h, 0, 0, 1, 0, 0, 0, 0, 1;
  const Matrix jf = jacobian_dynamics(model, 0, nominal);
  CHECK((jf - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dynamics Jacobian agrees with finite differences") {
  const auto model = ground_vehicle_model(0.05, 2);
  const Vector x0 = vec({-3.0, 4.0, 1.7, -0.6});
  const Vector u0 = vec({0.4, 0.9});
  const auto nominal = single_stage_nominal(model, x0, u0);
  const Matrix jf = jacobian_dynamics(model, 0, nominal);
  for (int j = 0; j < 4; ++j) {
    const double step = 1e-6 * (1.0 + std::abs(x0(j)));
    Vector plus = x0, minus = x0;
    plus(j) += step;
    minus(j) -= step;
    const Vector col = (eval_dynamics(model, 0, plus, u0, Vector::Zero(2)) -
                        eval_dynamics(model, 0, minus, u0, Vector::Zero(2))) /
                       (2 * step);
    CHECK((col - jf.col(j)).cwiseAbs().maxCoeff() < 1e-6);
  }
}
