#include <cmath>
#include <numbers>

#include "doctest.h"
#include "scr/envelope.hpp"

using namespace scr;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Vector vec1(double a) {
  Vector v(1);
  v << a;
  return v;
}

}  // namespace

TEST_CASE("bilinear envelope at the origin") {
  const auto env = bilinear_envelope(0.0, 0.0, 1.0, 1.0);
  const Vector y = vec2(1.0, -1.0);
  CHECK(env.upper(y) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(env.lower(y) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(env.is_convex_pair());
}

TEST_CASE("bilinear envelope away from the origin") {
  const auto env = bilinear_envelope(1.0, 2.0, 1.0, 1.0);
  const Vector y = vec2(2.0, 3.0);
  // xy = 6; the upper bound is tight along dx = dy.
  CHECK(env.upper(y) == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(env.lower(y) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(env.upper(vec2(1.0, 2.0)) == doctest::Approx(2.0));
  CHECK(env.lower(vec2(1.0, 2.0)) == doctest::Approx(2.0));
}

TEST_CASE("sin and cos envelopes") {
  const double half_pi = std::numbers::pi / 2.0;
  const auto s = sin_envelope(0.0);
  CHECK(s.upper(vec1(half_pi)) == doctest::Approx(half_pi + half_pi * half_pi / 2.0));
  CHECK(s.upper(vec1(half_pi)) == doctest::Approx(2.8045).epsilon(1e-4));
  CHECK(s.lower(vec1(half_pi)) == doctest::Approx(0.3371).epsilon(1e-3));

  const double pi = std::numbers::pi;
  const auto c = cos_envelope(0.0);
  CHECK(c.upper(vec1(pi)) == doctest::Approx(1.0 + pi * pi / 2.0));
  CHECK(c.lower(vec1(pi)) == doctest::Approx(1.0 - pi * pi / 2.0));
}

TEST_CASE("bilinear envelope survives falsification") {
  for (double x0 : {-2.0, 0.0, 3.0}) {
    for (double rho : {0.5, 1.0, 2.0}) {
      const auto env = bilinear_envelope(x0, 1.0 - x0, rho, 1.0 / rho);
      const auto report = soundness_falsify(
          env, [](const Vector& y) { return y(0) * y(1); }, vec2(-5, -5), vec2(5, 5), 10000, 7);
      CHECK(report.worst <= 1e-12);
      CHECK(report.samples >= 10000);
    }
  }
}

TEST_CASE("falsification detects a shifted envelope") {
  auto env = bilinear_envelope(0.0, 0.0, 1.0, 1.0);
  env.upper.c -= 0.1;
  const auto report = soundness_falsify(
      env, [](const Vector& y) { return y(0) * y(1); }, vec2(-5, -5), vec2(5, 5), 10000, 7);
  CHECK(report.worst >= 0.1 - 1e-12);
  CHECK(report.worst_upper >= 0.1 - 1e-12);
}

TEST_CASE("product-trig envelopes are sound") {
  for (Trig trig : {Trig::kSin, Trig::kCos}) {
    for (double v0 : {-3.0, 0.0, 2.5}) {
      for (double th0 : {-1.0, 0.3, 2.0}) {
        const auto env = product_trig_envelope(v0, th0, trig, 1.0);
        CHECK(env.is_convex_pair());
        CHECK(env.upper(env.anchor) == doctest::Approx(env.lower(env.anchor)));
        const auto fn = [trig](const Vector& y) {
          return y(0) * (trig == Trig::kSin ? std::sin(y(1)) : std::cos(y(1)));
        };
        const auto report =
            soundness_falsify(env, fn, vec2(v0 - 6, th0 - 4), vec2(v0 + 6, th0 + 4), 10000, 11);
        CHECK(report.worst <= 1e-12);
      }
    }
  }
}

TEST_CASE("embedding preserves values") {
  const auto local = bilinear_envelope(1.0, 2.0, 1.0, 1.0);
  Vector anchor = Vector::Zero(4);
  anchor(1) = 1.0;
  anchor(3) = 2.0;
  const auto env = embed(local, 4, {1, 3}, anchor);
  Vector y(4);
  y << 9.0, 2.0, -4.0, 3.0;
  CHECK(env.upper(y) == doctest::Approx(local.upper(vec2(2.0, 3.0))));
  CHECK(env.lower(y) == doctest::Approx(local.lower(vec2(2.0, 3.0))));
}

TEST_CASE("vertex constraints count and values") {
  // psi = v cos(theta) over y = [v, theta, u1, u2].
  const auto local = product_trig_envelope(1.0, 0.2, Trig::kCos, 1.0);
  Vector anchor = Vector::Zero(4);
  anchor.head(2) = local.anchor;
  const auto env = embed(local, 4, {0, 1}, anchor);

  VertexVariables vars{{0, 1}, {2, 3}, {4, 5}, 6, 7};
  const auto rows = vertex_bound_constraints(env, vars, 0.0);
  REQUIRE(rows.size() == 8);
  for (const auto& row : rows) {
    CHECK(row.category == "envelope");
    CHECK(row.is_quadratic());
  }

  // Every row is satisfied by g_upper = max upper, g_lower = min lower.
  const Vector z_hi = vec2(1.5, 0.6);
  const Vector z_lo = vec2(0.5, -0.1);
  const Vector u = vec2(0.0, 0.0);
  const auto ext = vertex_extrema(env, z_lo, z_hi, u);
  Vector point(8);
  point << z_hi, z_lo, u, ext.upper_max, ext.lower_min;
  for (const auto& row : rows) CHECK(row.lhs(point) <= row.rhs + 1e-12);
  // And tighter bounds break at least one row.
  point(6) -= 1e-6;
  bool broken = false;
  for (const auto& row : rows) broken = broken || row.lhs(point) > row.rhs;
  CHECK(broken);
}

TEST_CASE("vertex constraints enforce the sparsity cap") {
  const auto env = affine_envelope<double>(0.0, Vector::Zero(3), Vector::Zero(3));
  VertexVariables vars{{0, 1, 2}, {3, 4, 5}, {}, 6, 7};
  CHECK_THROWS_AS(vertex_bound_constraints(env, vars, 0.0, 2), Error);
  CHECK(vertex_bound_constraints(env, vars, 0.0, 3).size() == 16);
}

TEST_CASE("rejects nonpositive rho") {
  CHECK_THROWS_AS(bilinear_envelope(0.0, 0.0, 0.0, 1.0), Error);
  CHECK_THROWS_AS(product_trig_envelope(0.0, 0.0, Trig::kSin, -1.0), Error);
}
