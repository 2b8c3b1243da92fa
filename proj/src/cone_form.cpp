#include "cone_form.hpp"

#include <cmath>

namespace scr::conic::detail {
namespace {

using Triplet = Eigen::Triplet<double, int>;

struct RowSink {
  std::vector<Triplet> triplets;
  std::vector<double> b;

  int start(double rhs) {
    b.push_back(rhs);
    return static_cast<int>(b.size()) - 1;
  }
};

// Factor a PSD block as F'F, dropping directions with negligible curvature.
Matrix psd_factor(const Matrix& p) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (p + p.transpose()));
  const double cutoff = 1e-14 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    if (eig.eigenvalues()(i) > cutoff) keep.push_back(i);
  }
  Matrix f(keep.size(), p.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    f.row(r) = std::sqrt(eig.eigenvalues()(keep[r])) * eig.eigenvectors().col(keep[r]).transpose();
  }
  return f;
}

// 1/2 |F v_S|^2 <= s with s = rhs - a'v is |F v_S|^2 <= 2 (s/tau) tau, i.e.
// |((s/tau - tau)/sqrt2, F v_S)| <= (s/tau + tau)/sqrt2. tau = sqrt(scale)
// keeps both legs of the rotated cone the same size.
int add_rotated_cone(RowSink& sink, const std::vector<LinearTerm>& linear,
                     const std::vector<int>& vars, const Matrix& quad, double rhs, double scale) {
  const Matrix f = psd_factor(quad);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const double tau = std::sqrt(std::max(scale, 1e-12));
  const int r0 = sink.start((rhs / tau + tau) * inv_sqrt2);
  const int r1 = sink.start((rhs / tau - tau) * inv_sqrt2);
  for (const auto& t : linear) {
    sink.triplets.emplace_back(r0, t.var, t.coef * inv_sqrt2 / tau);
    sink.triplets.emplace_back(r1, t.var, t.coef * inv_sqrt2 / tau);
  }
  for (Eigen::Index k = 0; k < f.rows(); ++k) {
    const int rk = sink.start(0.0);
    for (std::size_t j = 0; j < vars.size(); ++j) {
      if (f(k, j) != 0.0) sink.triplets.emplace_back(rk, vars[j], -f(k, j));
    }
  }
  return static_cast<int>(2 + f.rows());
}

SparseMatrix to_sparse(int rows, int cols, const std::vector<Triplet>& triplets) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

}  // namespace

ConeForm lower_program(const ConicProgram& program) {
  ConeForm out;
  out.sign = program.sense == Sense::kMinimize ? 1.0 : -1.0;
  const int n = program.num_variables();
  out.epigraph = !program.objective_quad_vars.empty();
  const int cols = n + (out.epigraph ? 1 : 0);
  RowSink sink;

  for (const Row& row : program.rows()) {
    if (row.sense != RowSense::kEqual) continue;
    const int r = sink.start(row.rhs);
    for (const auto& t : row.linear) sink.triplets.emplace_back(r, t.var, t.coef);
    ++out.zero;
  }
  for (const Row& row : program.rows()) {
    if (row.sense != RowSense::kLessEqual || row.is_quadratic()) continue;
    const int r = sink.start(row.rhs);
    for (const auto& t : row.linear) sink.triplets.emplace_back(r, t.var, t.coef);
    ++out.positive;
  }
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(program.upper()(i))) {
      sink.triplets.emplace_back(sink.start(program.upper()(i)), i, 1.0);
      ++out.positive;
    }
    if (std::isfinite(program.lower()(i))) {
      sink.triplets.emplace_back(sink.start(-program.lower()(i)), i, -1.0);
      ++out.positive;
    }
  }
  for (const Row& row : program.rows()) {
    if (!row.is_quadratic()) continue;
    out.soc.push_back(
        add_rotated_cone(sink, row.linear, row.quad_vars, row.quad, row.rhs, row.scale));
  }

  out.c = Vector::Zero(cols);
  for (const auto& t : program.objective_linear) out.c(t.var) += out.sign * t.coef;
  if (out.epigraph) {
    // 1/2 v'(sign P0)v - t <= 0 with t minimized.
    out.soc.push_back(add_rotated_cone(sink, {{n, -1.0}}, program.objective_quad_vars,
                                       out.sign * program.objective_quad, 0.0, 1.0));
    out.c(n) = 1.0;
  }

  out.A = to_sparse(static_cast<int>(sink.b.size()), cols, sink.triplets);
  out.b = Eigen::Map<const Vector>(sink.b.data(), static_cast<Eigen::Index>(sink.b.size()));
  return out;
}

}  // namespace scr::conic::detail
