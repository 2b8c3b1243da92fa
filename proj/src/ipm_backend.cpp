#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include <Eigen/SparseCore>

#include "cone_form.hpp"
#include "sparse_ldl.hpp"
#include "scr/conic.hpp"

// Homogeneous self-dual interior point method for
//   minimize c'x  s.t.  G x + s = h,  A x = b,  s in K = R+^l x Q^q1 x ...
// with Nesterov-Todd scaling and a Mehrotra corrector. Directions come from
// the reduced system [G'W^-2 G, A'; A, 0], which is dense but small for the
// programs built here.

namespace scr::conic {
namespace {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

struct Cones {
  int l = 0;
  std::vector<int> soc;
  std::vector<int> soc_start;
  int m = 0;

  int degree() const { return l + static_cast<int>(soc.size()); }
};

// W = diag(d) on the orthant and beta (2 v v' - J) on each second-order cone.
struct Scaling {
  Vector d;
  std::vector<double> beta;
  std::vector<Vector> v;
};

double soc_residual(const Eigen::Ref<const Vector>& u) {
  return u(0) * u(0) - u.tail(u.size() - 1).squaredNorm();
}

Vector identity(const Cones& k) {
  Vector e = Vector::Zero(k.m);
  e.head(k.l).setOnes();
  for (std::size_t c = 0; c < k.soc.size(); ++c) e(k.soc_start[c]) = 1.0;
  return e;
}

// Jordan product u o w.
Vector product(const Cones& k, const Vector& u, const Vector& w) {
  Vector out(k.m);
  out.head(k.l) = u.head(k.l).cwiseProduct(w.head(k.l));
  for (std::size_t c = 0; c < k.soc.size(); ++c) {
    const int s = k.soc_start[c];
    const int n = k.soc[c];
    out(s) = u.segment(s, n).dot(w.segment(s, n));
    out.segment(s + 1, n - 1) = u(s) * w.segment(s + 1, n - 1) + w(s) * u.segment(s + 1, n - 1);
  }
  return out;
}

// Solves lambda o x = r.
Vector divide(const Cones& k, const Vector& lambda, const Vector& r) {
  Vector out(k.m);
  out.head(k.l) = r.head(k.l).cwiseQuotient(lambda.head(k.l));
  for (std::size_t c = 0; c < k.soc.size(); ++c) {
    const int s = k.soc_start[c];
    const int n = k.soc[c];
    const auto l1 = lambda.segment(s + 1, n - 1);
    const double rho = soc_residual(lambda.segment(s, n));
    const double x0 = (lambda(s) * r(s) - l1.dot(r.segment(s + 1, n - 1))) / rho;
    out(s) = x0;
    out.segment(s + 1, n - 1) = (r.segment(s + 1, n - 1) - x0 * l1) / lambda(s);
  }
  return out;
}

// Largest a with u + a du in the cone, capped at `cap`.
double max_step(const Cones& k, const Vector& u, const Vector& du, double cap) {
  double alpha = cap;
  for (int i = 0; i < k.l; ++i) {
    if (du(i) < 0.0) alpha = std::min(alpha, -u(i) / du(i));
  }
  for (std::size_t c = 0; c < k.soc.size(); ++c) {
    const int s = k.soc_start[c];
    const int n = k.soc[c];
    const auto x1 = u.segment(s + 1, n - 1);
    const auto d1 = du.segment(s + 1, n - 1);
    const double a = du(s) * du(s) - d1.squaredNorm();
    const double b = u(s) * du(s) - x1.dot(d1);
    const double cc = std::max(soc_residual(u.segment(s, n)), 0.0);
    // Smallest positive root of a t^2 + 2 b t + cc.
    double root = std::numeric_limits<double>::infinity();
    if (std::abs(a) <= 1e-300) {
      if (b < 0.0) root = -cc / (2.0 * b);
    } else {
      const double disc = b * b - a * cc;
      if (disc >= 0.0) {
        const double q = -(b + std::copysign(std::sqrt(disc), b));
        for (double t : {q / a, q != 0.0 ? cc / q : std::numeric_limits<double>::infinity()}) {
          if (t > 0.0) root = std::min(root, t);
        }
      }
    }
    alpha = std::min(alpha, root);
  }
  return alpha;
}

// Shifts u into the interior when it is not already there.
Vector interior(const Cones& k, const Vector& u) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k.l; ++i) worst = std::max(worst, -u(i));
  for (std::size_t c = 0; c < k.soc.size(); ++c) {
    const int s = k.soc_start[c];
    worst = std::max(worst, u.segment(s + 1, k.soc[c] - 1).norm() - u(s));
  }
  if (worst < 0.0) return u;
  return u + (1.0 + worst) * identity(k);
}

Scaling nt_scaling(const Cones& k, const Vector& s, const Vector& z) {
  Scaling w;
  w.d = (s.head(k.l).cwiseQuotient(z.head(k.l))).cwiseSqrt();
  for (std::size_t c = 0; c < k.soc.size(); ++c) {
    const int st = k.soc_start[c];
    const int n = k.soc[c];
    const double sn = std::sqrt(soc_residual(s.segment(st, n)));
    const double zn = std::sqrt(soc_residual(z.segment(st, n)));
    const Vector sb = s.segment(st, n) / sn;
    Vector zb = z.segment(st, n) / zn;
    const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
    zb.tail(n - 1) *= -1.0;
    Vector wb = (sb + zb) / (2.0 * gamma);
    wb(0) += 1.0;
    w.v.push_back(wb / std::sqrt(2.0 * wb(0)));
    w.beta.push_back(std::sqrt(sn / zn));
  }
  return w;
}

// W u (inverse = false) or W^-1 u.
Vector apply(const Cones& k, const Scaling& w, const Vector& u, bool inverse) {
  Vector out(k.m);
  if (inverse) {
    out.head(k.l) = u.head(k.l).cwiseQuotient(w.d);
  } else {
    out.head(k.l) = u.head(k.l).cwiseProduct(w.d);
  }
  for (std::size_t c = 0; c < k.soc.size(); ++c) {
    const int s = k.soc_start[c];
    const int n = k.soc[c];
    Vector v = w.v[c];
    Vector ju = u.segment(s, n);
    ju.tail(n - 1) *= -1.0;
    if (inverse) {
      v.tail(n - 1) *= -1.0;
      out.segment(s, n) = (2.0 * v.dot(u.segment(s, n)) * v - ju) / w.beta[c];
    } else {
      out.segment(s, n) = w.beta[c] * (2.0 * v.dot(u.segment(s, n)) * v - ju);
    }
  }
  return out;
}

// Dense W^2 block of cone c.
Matrix square_block(const Cones& k, const Scaling& w, std::size_t c) {
  const int n = k.soc[c];
  const Vector& v = w.v[c];
  Matrix j = Matrix::Identity(n, n);
  j.bottomRightCorner(n - 1, n - 1) *= -1.0;
  const Matrix once = w.beta[c] * (2.0 * v * v.transpose() - j);
  return once * once;
}

// Quasi-definite KKT system [d I, A', G'; A, -d I, 0; G, 0, -W^2 - d I],
// factored with a sparse LDL' and refined against the unregularized matrix.
class KktSystem {
 public:
  KktSystem(const SparseRows& g, const Eigen::SparseMatrix<double>& a)
      : g_(g), a_(a), n_(static_cast<int>(g.cols())), p_(static_cast<int>(a.rows())),
        m_(static_cast<int>(g.rows())) {}

  void factor(const Cones& k, const Scaling& w) {
    w_ = &w;
    k_ = &k;
    const int size = n_ + p_ + m_;
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(size + a_.nonZeros() + g_.nonZeros()));
    // Lower triangle only.
    for (int i = 0; i < n_; ++i) t.emplace_back(i, i, kReg);
    for (int r = 0; r < p_; ++r) {
      t.emplace_back(n_ + r, n_ + r, -kReg);
    }
    const SparseRows a_rows(a_);
    for (int r = 0; r < p_; ++r) {
      for (SparseRows::InnerIterator it(a_rows, r); it; ++it) t.emplace_back(n_ + r, it.col(), it.value());
    }
    const int z0 = n_ + p_;
    for (int r = 0; r < m_; ++r) {
      for (SparseRows::InnerIterator it(g_, r); it; ++it) t.emplace_back(z0 + r, it.col(), it.value());
    }
    for (int i = 0; i < k.l; ++i) t.emplace_back(z0 + i, z0 + i, -w.d(i) * w.d(i) - kReg);
    for (std::size_t c = 0; c < k.soc.size(); ++c) {
      const int s = z0 + k.soc_start[c];
      const Matrix block = square_block(k, w, c);
      for (int i = 0; i < k.soc[c]; ++i) {
        for (int j = 0; j <= i; ++j) t.emplace_back(s + i, s + j, -block(i, j) - (i == j ? kReg : 0.0));
      }
    }
    Eigen::SparseMatrix<double> kkt(size, size);
    kkt.setFromTriplets(t.begin(), t.end());
    if (!analyzed_) {
      ldl_.analyze(kkt);
      signs_ = Vector::Constant(size, -1.0);
      signs_.head(n_).setOnes();
      analyzed_ = true;
    }
    ldl_.factor(kkt, signs_);
  }

  // [0 A' G'; A 0 0; G 0 -W^2] [x; y; z] = [r1; r2; r3].
  void solve(const Vector& r1, const Vector& r2, const Vector& r3, Vector& x, Vector& y,
             Vector& z) const {
    Vector rhs(n_ + p_ + m_);
    rhs << r1, r2, r3;
    Vector sol = ldl_.solve(rhs);
    double last = std::numeric_limits<double>::infinity();
    for (int step = 0; step < kRefine; ++step) {
      const Vector e = rhs - multiply(sol);
      const double norm = e.lpNorm<Eigen::Infinity>();
      if (norm <= 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>()) || norm >= last) break;
      last = norm;
      sol += ldl_.solve(e);
    }
    x = sol.head(n_);
    y = sol.segment(n_, p_);
    z = sol.tail(m_);
  }

 private:
  static constexpr double kReg = 1e-8;
  static constexpr int kRefine = 8;

  Vector multiply(const Vector& v) const {
    const auto x = v.head(n_);
    const auto y = v.segment(n_, p_);
    const Vector z = v.tail(m_);
    Vector out(n_ + p_ + m_);
    out.head(n_) = a_.transpose() * y + g_.transpose() * z;
    out.segment(n_, p_) = a_ * x;
    out.tail(m_) = g_ * x - apply(*k_, *w_, apply(*k_, *w_, z, false), false);
    return out;
  }

  const SparseRows& g_;
  const Eigen::SparseMatrix<double>& a_;
  int n_;
  int p_;
  int m_;
  const Cones* k_ = nullptr;
  const Scaling* w_ = nullptr;
  bool analyzed_ = false;
  Vector signs_;
  detail::SparseLdl ldl_;
};

struct Iterate {
  Vector x, y, z, s;
  double tau = 1.0;
  double kappa = 1.0;
};

class IpmBackend final : public Backend {
 public:
  std::string name() const override { return "ipm"; }

  SolveOutcome solve(const ConicProgram& program, const SolveOptions& options) const override {
    const detail::ConeForm form = detail::lower_program(program);
    const int n = static_cast<int>(form.A.cols());
    const SparseRows all(form.A);
    const SparseRows g = all.bottomRows(all.rows() - form.zero);
    const Eigen::SparseMatrix<double> a = all.topRows(form.zero);
    const Vector h = form.b.tail(form.b.size() - form.zero);
    const Vector b = form.b.head(form.zero);
    const Vector& c = form.c;

    Cones k;
    k.l = form.positive;
    int start = k.l;
    for (int size : form.soc) {
      k.soc.push_back(size);
      k.soc_start.push_back(start);
      start += size;
    }
    k.m = start;
    const double degree = k.degree();

    SolveOutcome outcome;
    KktSystem kkt(g, a);
    Iterate it;
    {
      Scaling unit;
      unit.d = Vector::Ones(k.l);
      for (std::size_t i = 0; i < k.soc.size(); ++i) {
        unit.beta.push_back(1.0);
        Vector v = Vector::Zero(k.soc[i]);
        v(0) = 1.0;
        unit.v.push_back(v);
      }
      kkt.factor(k, unit);
      Vector x, y, z;
      kkt.solve(Vector::Zero(n), b, h, x, y, z);
      it.x = x;
      it.s = interior(k, -z);
      kkt.solve(-c, Vector::Zero(form.zero), Vector::Zero(k.m), x, y, z);
      it.y = y;
      it.z = interior(k, z);
    }

    const double norm_c = std::max(1.0, c.norm());
    const double norm_bh = std::max({1.0, b.size() ? b.norm() : 0.0, h.norm()});
    const double feastol = options.tolerances.feasibility;
    const double gaptol = options.tolerances.gap;
    const Vector e = identity(k);

    double pres = 0, dres = 0, gap = 0, relgap = 0, pcost = 0;
    // Late iterates can lose accuracy to rounding; keep the best seen.
    Iterate best = it;
    double best_merit = std::numeric_limits<double>::infinity();
    double best_pinf = std::numeric_limits<double>::infinity();
    double best_dinf = std::numeric_limits<double>::infinity();
    int last_progress = 0;
    int iter = 0;
    bool done = false;
    for (; iter < options.tolerances.max_iterations; ++iter) {
      const Vector rx = a.transpose() * it.y + g.transpose() * it.z + c * it.tau;
      const Vector ry = -(a * it.x) + b * it.tau;
      const Vector rz = -(g * it.x) + h * it.tau - it.s;
      const double cx = c.dot(it.x);
      const double byhz = b.dot(it.y) + h.dot(it.z);
      const double rt = -cx - byhz - it.kappa;
      const double sz = it.s.dot(it.z);
      const double mu = (sz + it.tau * it.kappa) / (degree + 1.0);

      pres = std::max(ry.norm(), rz.norm()) / it.tau / norm_bh;
      dres = rx.norm() / it.tau / norm_c;
      pcost = cx / it.tau;
      const double dcost = -byhz / it.tau;
      gap = sz / (it.tau * it.tau);
      relgap = gap / std::max(1.0, std::min(std::abs(pcost), std::abs(dcost)));
      const double merit = std::max({pres / feastol, dres / feastol, std::min(gap, relgap) / gaptol});
      if (merit < best_merit) {
        best_merit = merit;
        best = it;
        last_progress = iter;
      }
      if (merit < 1.0) {
        outcome.status = Status::kOptimal;
        done = true;
        break;
      }
      if (byhz < 0.0) {
        const double cert = (a.transpose() * it.y + g.transpose() * it.z).norm() / -byhz;
        if (cert < best_pinf) {
          best_pinf = cert;
          last_progress = iter;
        }
        if (cert < feastol) {
          outcome.status = Status::kInfeasible;
          outcome.message = "primal infeasible";
          done = true;
          break;
        }
      }
      if (cx < 0.0) {
        const double cert = std::max((a * it.x).norm(), (g * it.x + it.s).norm()) / -cx;
        if (cert < best_dinf) {
          best_dinf = cert;
          last_progress = iter;
        }
        if (cert < feastol) {
          outcome.status = Status::kInfeasible;
          outcome.message = "dual infeasible (unbounded)";
          done = true;
          break;
        }
      }

      if (iter - last_progress > 15) break;

      const Scaling w = nt_scaling(k, it.s, it.z);
      const Vector lambda = apply(k, w, it.z, false);
      kkt.factor(k, w);
      Vector x2, y2, z2;
      kkt.solve(-c, b, h, x2, y2, z2);
      const double denom_base = c.dot(x2) + b.dot(y2) + h.dot(z2);

      struct Direction {
        Vector x, y, z, s;
        double tau = 0.0, kappa = 0.0;
      };
      auto direction = [&](double sigma, const Vector& rc, double rtk) {
        const double f = 1.0 - sigma;
        const Vector ws = apply(k, w, divide(k, lambda, rc), false);
        Vector x1, y1, z1;
        kkt.solve(-f * rx, f * ry, f * rz - ws, x1, y1, z1);
        Direction d;
        d.tau = (-f * rt + rtk / it.tau + c.dot(x1) + b.dot(y1) + h.dot(z1)) /
                (it.kappa / it.tau - denom_base);
        d.x = x1 + d.tau * x2;
        d.y = y1 + d.tau * y2;
        d.z = z1 + d.tau * z2;
        d.s = ws - apply(k, w, apply(k, w, d.z, false), false);
        d.kappa = (rtk - it.kappa * d.tau) / it.tau;
        return d;
      };
      auto step_length = [&](const Direction& d) {
        double alpha = std::min(max_step(k, it.s, d.s, 1.0), max_step(k, it.z, d.z, 1.0));
        if (d.tau < 0.0) alpha = std::min(alpha, -it.tau / d.tau);
        if (d.kappa < 0.0) alpha = std::min(alpha, -it.kappa / d.kappa);
        return alpha;
      };

      const Direction affine = direction(0.0, -product(k, lambda, lambda), -it.tau * it.kappa);
      const double alpha_aff = step_length(affine);
      const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3), 0.0, 1.0);
      const Vector corr = product(k, apply(k, w, affine.s, true), apply(k, w, affine.z, false));
      const Direction comb =
          direction(sigma, -product(k, lambda, lambda) - corr + sigma * mu * e,
                    -it.tau * it.kappa - affine.tau * affine.kappa + sigma * mu);
      const double alpha = std::min(1.0, 0.99 * step_length(comb));
      if (options.verbose) {
        std::fprintf(stderr, "%3d pres %.2e dres %.2e gap %.2e pcost % .6e tau %.2e kappa %.2e step %.3f\n",
                     iter, pres, dres, gap, pcost, it.tau, it.kappa, alpha);
      }
      if (!(alpha > 1e-10) || !comb.x.allFinite()) break;

      it.x += alpha * comb.x;
      it.y += alpha * comb.y;
      it.z += alpha * comb.z;
      it.s += alpha * comb.s;
      it.tau += alpha * comb.tau;
      it.kappa += alpha * comb.kappa;
    }

    outcome.stats.iterations = iter;
    if (!done) {
      // Accept a slightly inaccurate point rather than nothing.
      const bool close = best_merit < 1e3;
      if (close) {
        it = best;
        outcome.status = Status::kOptimal;
        outcome.message = "solved (inaccurate)";
      } else if (std::min(best_pinf, best_dinf) < 1e3 * feastol) {
        outcome.status = Status::kInfeasible;
        outcome.message = best_pinf <= best_dinf ? "primal infeasible (inaccurate)"
                                                 : "dual infeasible (inaccurate)";
      } else {
        outcome.status = iter >= options.tolerances.max_iterations ? Status::kIterationLimit
                                                                   : Status::kNumericalFailure;
        outcome.message = "stalled";
      }
    } else if (outcome.status == Status::kOptimal) {
      outcome.message = "solved";
    }
    if (outcome.status == Status::kOptimal) {
      outcome.primal = (it.x / it.tau).head(program.num_variables());
    }
    return outcome;
  }
};

}  // namespace

std::unique_ptr<Backend> make_ipm_backend() { return std::make_unique<IpmBackend>(); }

}  // namespace scr::conic
