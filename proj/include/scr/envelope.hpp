#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "scr/common.hpp"
#include "scr/conic.hpp"

namespace scr {

/// q(y) = c + a'y + 1/2 y'Hy.
template <typename Scalar>
struct QuadraticForm {
  Scalar c = Scalar(0);
  VectorX<Scalar> a;
  MatrixX<Scalar> H;

  static QuadraticForm zero(Eigen::Index dim) {
    return {Scalar(0), VectorX<Scalar>::Zero(dim), MatrixX<Scalar>::Zero(dim, dim)};
  }

  Eigen::Index dim() const { return a.size(); }

  template <typename Derived>
  Scalar operator()(const Eigen::MatrixBase<Derived>& y) const {
    return c + a.dot(y) + Scalar(0.5) * y.dot(H * y);
  }

  /// Eigenvalue bounds of H, used for convexity checks.
  Scalar min_curvature() const {
    if (dim() == 0) return Scalar(0);
    return Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>>(H, Eigen::EigenvaluesOnly)
        .eigenvalues()
        .minCoeff();
  }
  Scalar max_curvature() const {
    if (dim() == 0) return Scalar(0);
    return Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>>(H, Eigen::EigenvaluesOnly)
        .eigenvalues()
        .maxCoeff();
  }
};

/// Convex over-estimator / concave under-estimator pair of one scalar
/// function, over local coordinates y (for residual components: the sparsity
/// coordinates of z followed by the control u).
template <typename Scalar>
struct QuadraticEnvelope {
  QuadraticForm<Scalar> upper;
  QuadraticForm<Scalar> lower;
  VectorX<Scalar> anchor;

  Eigen::Index dim() const { return anchor.size(); }

  bool is_convex_pair(Scalar tolerance = Scalar(1e-10)) const {
    return upper.min_curvature() >= -tolerance && lower.max_curvature() <= tolerance;
  }

  /// Upper and lower coincide and carry no curvature: the function is affine.
  bool is_exact_affine(Scalar tolerance = Scalar(1e-14)) const {
    return upper.H.cwiseAbs().maxCoeff() <= tolerance &&
           lower.H.cwiseAbs().maxCoeff() <= tolerance &&
           (upper.a - lower.a).cwiseAbs().maxCoeff() <= tolerance &&
           std::abs(upper.c - lower.c) <= tolerance;
  }

  /// Subtracts a linear function s'y from both sides.
  QuadraticEnvelope minus_linear(const VectorX<Scalar>& slope) const {
    QuadraticEnvelope out = *this;
    out.upper.a -= slope;
    out.lower.a -= slope;
    return out;
  }
};

using QuadraticEnvelopeD = QuadraticEnvelope<double>;

/// Bilinear x*y around (x0, y0):
///   lower = x0y0 + y0 dx + x0 dy - 1/4 (rho1 dx - dy/rho1)^2
///   upper = x0y0 + y0 dx + x0 dy + 1/4 (rho2 dx + dy/rho2)^2
template <typename Scalar>
QuadraticEnvelope<Scalar> bilinear_envelope(Scalar x0, Scalar y0, Scalar rho1, Scalar rho2) {
  require(rho1 > Scalar(0) && rho2 > Scalar(0), ErrorKind::kInput,
          "bilinear envelope needs positive rho");
  // In absolute coordinates, (alpha dx + beta dy)^2 / 4 with d = (x - x0, y - y0).
  auto square_term = [&](Scalar alpha, Scalar beta, Scalar sign) {
    VectorX<Scalar> w(2);
    w << alpha, beta;
    VectorX<Scalar> y0v(2);
    y0v << x0, y0;
    const Scalar shift = w.dot(y0v);
    QuadraticForm<Scalar> q;
    q.H = sign * Scalar(0.5) * w * w.transpose();  // 1/2 y'Hy = sign/4 (w'y)^2
    q.a = -sign * Scalar(0.5) * shift * w;
    q.c = sign * Scalar(0.25) * shift * shift;
    return q;
  };
  // Linearization: x0y0 + y0(x - x0) + x0(y - y0) = -x0y0 + y0 x + x0 y.
  QuadraticForm<Scalar> linear = QuadraticForm<Scalar>::zero(2);
  linear.c = -x0 * y0;
  linear.a << y0, x0;

  QuadraticEnvelope<Scalar> env;
  const auto lo = square_term(rho1, -Scalar(1) / rho1, Scalar(-1));
  const auto up = square_term(rho2, Scalar(1) / rho2, Scalar(1));
  env.lower = {linear.c + lo.c, linear.a + lo.a, lo.H};
  env.upper = {linear.c + up.c, linear.a + up.a, up.H};
  env.anchor.resize(2);
  env.anchor << x0, y0;
  return env;
}

/// f(y0) + grad'(y - y0) +/- 1/2 (y - y0)' D (y - y0), where D bounds the
/// curvature of f in the Loewner order (-D <= Hess f <= D) on the whole space.
template <typename Scalar>
QuadraticEnvelope<Scalar> curvature_envelope(const VectorX<Scalar>& y0, Scalar value,
                                             const VectorX<Scalar>& gradient,
                                             const MatrixX<Scalar>& curvature_bound) {
  require(gradient.size() == y0.size() && curvature_bound.rows() == y0.size() &&
              curvature_bound.cols() == y0.size(),
          ErrorKind::kDimension, "curvature envelope: inconsistent sizes");
  const Scalar base = value - gradient.dot(y0);
  const VectorX<Scalar> dy0 = curvature_bound * y0;
  const Scalar quad0 = Scalar(0.5) * y0.dot(dy0);
  QuadraticEnvelope<Scalar> env;
  env.upper = {base + quad0, gradient - dy0, curvature_bound};
  env.lower = {base - quad0, gradient + dy0, -curvature_bound};
  env.anchor = y0;
  return env;
}

/// sin(theta0) + cos(theta0) d +/- 1/2 d^2.
template <typename Scalar>
QuadraticEnvelope<Scalar> sin_envelope(Scalar theta0) {
  using std::cos;
  using std::sin;
  VectorX<Scalar> y0(1), grad(1);
  y0 << theta0;
  grad << cos(theta0);
  return curvature_envelope<Scalar>(y0, sin(theta0), grad, MatrixX<Scalar>::Identity(1, 1));
}

/// cos(theta0) - sin(theta0) d +/- 1/2 d^2.
template <typename Scalar>
QuadraticEnvelope<Scalar> cos_envelope(Scalar theta0) {
  using std::cos;
  using std::sin;
  VectorX<Scalar> y0(1), grad(1);
  y0 << theta0;
  grad << -sin(theta0);
  return curvature_envelope<Scalar>(y0, cos(theta0), grad, MatrixX<Scalar>::Identity(1, 1));
}

enum class Trig { kSin, kCos };

/// Global envelope of v*trig(theta) on (v, theta) around (v0, theta0).
/// With dv, dth the offsets, the remainder after linearization is
///   v0 (trig(th) - trig(th0) - trig'(th0) dth) + dv (trig(th) - trig(th0)),
/// bounded by |v0|/2 dth^2 (|trig''| <= 1) plus |dv||dth| <= (rho dv^2 + dth^2/rho)/2
/// (|trig'| <= 1).
template <typename Scalar>
QuadraticEnvelope<Scalar> product_trig_envelope(Scalar v0, Scalar theta0, Trig trig,
                                                Scalar rho = Scalar(1)) {
  using std::abs;
  using std::cos;
  using std::sin;
  require(rho > Scalar(0), ErrorKind::kInput, "product-trig envelope needs positive rho");
  const Scalar t0 = trig == Trig::kSin ? sin(theta0) : cos(theta0);
  const Scalar dt0 = trig == Trig::kSin ? cos(theta0) : -sin(theta0);
  VectorX<Scalar> y0(2), grad(2);
  y0 << v0, theta0;
  grad << t0, v0 * dt0;
  MatrixX<Scalar> bound = MatrixX<Scalar>::Zero(2, 2);
  bound(0, 0) = rho;
  bound(1, 1) = abs(v0) + Scalar(1) / rho;
  return curvature_envelope<Scalar>(y0, v0 * t0, grad, bound);
}

/// Exact envelope of the affine function c + a'y.
template <typename Scalar>
QuadraticEnvelope<Scalar> affine_envelope(Scalar c, const VectorX<Scalar>& a,
                                          const VectorX<Scalar>& anchor) {
  QuadraticEnvelope<Scalar> env;
  env.upper = {c, a, MatrixX<Scalar>::Zero(a.size(), a.size())};
  env.lower = env.upper;
  env.anchor = anchor;
  return env;
}

/// Re-expresses an envelope over a subset of a larger coordinate vector:
/// local coordinate i maps to position positions[i] of a dim-sized vector.
template <typename Scalar>
QuadraticEnvelope<Scalar> embed(const QuadraticEnvelope<Scalar>& env, Eigen::Index dim,
                                const std::vector<Eigen::Index>& positions,
                                const VectorX<Scalar>& anchor) {
  require(static_cast<Eigen::Index>(positions.size()) == env.dim(), ErrorKind::kDimension,
          "embed: position count does not match envelope dimension");
  auto lift = [&](const QuadraticForm<Scalar>& q) {
    QuadraticForm<Scalar> out = QuadraticForm<Scalar>::zero(dim);
    out.c = q.c;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      out.a(positions[i]) = q.a(i);
      for (std::size_t j = 0; j < positions.size(); ++j) {
        out.H(positions[i], positions[j]) = q.H(i, j);
      }
    }
    return out;
  };
  return {lift(env.upper), lift(env.lower), anchor};
}

/// Worst signed estimator violation found by sampling.
struct ViolationReport {
  double worst = 0.0;        // max(f - upper, lower - f) over samples
  double worst_upper = 0.0;  // max(f - upper)
  double worst_lower = 0.0;  // max(lower - f)
  Vector worst_point;
  int samples = 0;
};

/// Samples the box [lo, hi] uniformly (plus its corners and the anchor) and
/// reports how far the envelope fails to bracket true_fn. A sound envelope
/// reports worst <= 0 up to rounding.
ViolationReport soundness_falsify(const QuadraticEnvelopeD& envelope,
                                  const std::function<double(const Vector&)>& true_fn,
                                  const Vector& lo, const Vector& hi, int samples,
                                  std::uint64_t seed);

/// Decision-variable indices the vertex constraints refer to.
struct VertexVariables {
  std::vector<int> z_upper;  // per sparsity coordinate
  std::vector<int> z_lower;  // per sparsity coordinate
  std::vector<int> u;        // per control coordinate (may be empty if m == 0)
  int g_upper = -1;
  int g_lower = -1;
};

inline constexpr int kDefaultSparsityCap = 8;

/// For every vertex of the box spanned by the sparsity coordinates, emits
///   upper(vertex, u) - g_upper <= -margin   and   g_lower - lower(vertex, u) <= -margin.
/// The envelope must be expressed over y = [z_I; u]. Yields 2^{|I|+1} rows.
std::vector<conic::Row> vertex_bound_constraints(const QuadraticEnvelopeD& envelope,
                                                 const VertexVariables& vars,
                                                 double margin = 0.0,
                                                 int sparsity_cap = kDefaultSparsityCap);

/// Max of the upper envelope and min of the lower envelope over the vertices
/// of [z_lo, z_hi] (sparsity coordinates) at fixed u.
struct VertexExtrema {
  double upper_max;
  double lower_min;
};
VertexExtrema vertex_extrema(const QuadraticEnvelopeD& envelope, const Vector& z_lo,
                             const Vector& z_hi, const Vector& u);

}  // namespace scr
