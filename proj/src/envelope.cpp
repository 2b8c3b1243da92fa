#include "scr/envelope.hpp"

#include <random>

namespace scr {

ViolationReport soundness_falsify(const QuadraticEnvelopeD& envelope,
                                  const std::function<double(const Vector&)>& true_fn,
                                  const Vector& lo, const Vector& hi, int samples,
                                  std::uint64_t seed) {
  const Eigen::Index dim = envelope.dim();
  require(lo.size() == dim && hi.size() == dim, ErrorKind::kDimension,
          "falsify: domain box does not match envelope dimension");
  require(lo.allFinite() && hi.allFinite() && (lo.array() <= hi.array()).all(),
          ErrorKind::kInput, "falsify: domain box must be finite and ordered");

  ViolationReport report;
  report.worst = -std::numeric_limits<double>::infinity();
  report.worst_upper = report.worst_lower = report.worst;
  auto visit = [&](const Vector& y) {
    const double f = true_fn(y);
    const double up = f - envelope.upper(y);
    const double low = envelope.lower(y) - f;
    report.worst_upper = std::max(report.worst_upper, up);
    report.worst_lower = std::max(report.worst_lower, low);
    if (std::max(up, low) > report.worst) {
      report.worst = std::max(up, low);
      report.worst_point = y;
    }
    ++report.samples;
  };

  visit(envelope.anchor.cwiseMax(lo).cwiseMin(hi));
  if (dim <= 12) {
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << dim); ++mask) {
      Vector corner(dim);
      for (Eigen::Index i = 0; i < dim; ++i) corner(i) = (mask >> i) & 1 ? hi(i) : lo(i);
      visit(corner);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector y(dim);
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < dim; ++i) y(i) = lo(i) + (hi(i) - lo(i)) * unit(rng);
    visit(y);
  }
  return report;
}

namespace {

// Coordinates that carry curvature; the quadratic part of a vertex row only
// needs these.
std::vector<Eigen::Index> curved_coordinates(const Matrix& h) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    if (h.row(i).cwiseAbs().maxCoeff() > 0.0) out.push_back(i);
  }
  return out;
}

conic::Row make_vertex_row(const QuadraticForm<double>& form, double form_sign,
                           const std::vector<int>& y_vars, int bound_var, double bound_sign,
                           double margin) {
  // form_sign * form(y) + bound_sign * bound <= -margin
  conic::Row row;
  row.category = "envelope";
  for (std::size_t i = 0; i < y_vars.size(); ++i) {
    if (form.a(i) != 0.0) row.linear.push_back({y_vars[i], form_sign * form.a(i)});
  }
  row.linear.push_back({bound_var, bound_sign});
  const auto curved = curved_coordinates(form.H);
  if (!curved.empty()) {
    row.quad.resize(curved.size(), curved.size());
    for (std::size_t i = 0; i < curved.size(); ++i) {
      row.quad_vars.push_back(y_vars[curved[i]]);
      for (std::size_t j = 0; j < curved.size(); ++j) {
        row.quad(i, j) = form_sign * form.H(curved[i], curved[j]);
      }
    }
  }
  row.rhs = -form_sign * form.c - margin;
  return row;
}

}  // namespace

std::vector<conic::Row> vertex_bound_constraints(const QuadraticEnvelopeD& envelope,
                                                 const VertexVariables& vars, double margin,
                                                 int sparsity_cap) {
  const auto k = static_cast<int>(vars.z_upper.size());
  require(vars.z_lower.size() == vars.z_upper.size(), ErrorKind::kDimension,
          "vertex constraints: upper/lower variable lists differ in length");
  require(k <= sparsity_cap, ErrorKind::kInput,
          "vertex constraints: sparsity " + std::to_string(k) + " exceeds the cap of " +
              std::to_string(sparsity_cap) + "; use a coarser decomposition");
  require(envelope.dim() == k + static_cast<Eigen::Index>(vars.u.size()),
          ErrorKind::kDimension, "vertex constraints: envelope dimension mismatch");

  std::vector<conic::Row> rows;
  rows.reserve(std::size_t{2} << k);
  std::vector<int> y_vars(k + vars.u.size());
  std::copy(vars.u.begin(), vars.u.end(), y_vars.begin() + k);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
    for (int i = 0; i < k; ++i) y_vars[i] = (mask >> i) & 1 ? vars.z_upper[i] : vars.z_lower[i];
    rows.push_back(make_vertex_row(envelope.upper, 1.0, y_vars, vars.g_upper, -1.0, margin));
    rows.push_back(make_vertex_row(envelope.lower, -1.0, y_vars, vars.g_lower, 1.0, margin));
  }
  return rows;
}

VertexExtrema vertex_extrema(const QuadraticEnvelopeD& envelope, const Vector& z_lo,
                             const Vector& z_hi, const Vector& u) {
  const auto k = z_lo.size();
  require(z_hi.size() == k && envelope.dim() == k + u.size(), ErrorKind::kDimension,
          "vertex extrema: dimension mismatch");
  VertexExtrema out{-std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity()};
  Vector y(envelope.dim());
  y.tail(u.size()) = u;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
    for (Eigen::Index i = 0; i < k; ++i) y(i) = (mask >> i) & 1 ? z_hi(i) : z_lo(i);
    out.upper_max = std::max(out.upper_max, envelope.upper(y));
    out.lower_min = std::min(out.lower_min, envelope.lower(y));
  }
  return out;
}

}  // namespace scr
