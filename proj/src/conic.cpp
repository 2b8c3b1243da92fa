#include "scr/conic.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace scr::conic {

double Row::lhs(const Vector& v) const {
  double value = 0.0;
  for (const auto& term : linear) value += term.coef * v(term.var);
  if (is_quadratic()) {
    Vector local(quad_vars.size());
    for (std::size_t i = 0; i < quad_vars.size(); ++i) local(i) = v(quad_vars[i]);
    value += 0.5 * local.dot(quad * local);
  }
  return value;
}

int ConicProgram::add_variable(std::string name, double lower, double upper) {
  names_.push_back(std::move(name));
  const auto n = static_cast<Eigen::Index>(names_.size());
  lower_.conservativeResize(n);
  upper_.conservativeResize(n);
  lower_(n - 1) = lower;
  upper_(n - 1) = upper;
  return static_cast<int>(n - 1);
}

void ConicProgram::set_bounds(int var, double lower, double upper) {
  lower_(var) = lower;
  upper_(var) = upper;
}

void ConicProgram::add_row(Row row) { rows_.push_back(std::move(row)); }

namespace {

bool is_psd(const Matrix& p, double tolerance) {
  if (p.size() == 0) return true;
  const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (p + p.transpose()),
                                           Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -tolerance * scale;
}

std::string describe(const Row& row, int index) {
  std::ostringstream out;
  out << "row " << index;
  if (!row.category.empty()) out << " (" << row.category << ")";
  return out.str();
}

}  // namespace

void ConicProgram::validate(double psd_tolerance) const {
  const int n = num_variables();
  auto check_var = [&](int var, const std::string& where) {
    require(var >= 0 && var < n, ErrorKind::kDimension,
            where + ": variable index " + std::to_string(var) + " out of range");
  };
  for (int i = 0; i < n; ++i) {
    require(!(lower_(i) > upper_(i)), ErrorKind::kInput,
            "variable '" + names_[i] + "' has empty bounds");
  }
  for (int i = 0; i < num_rows(); ++i) {
    const Row& row = rows_[i];
    const std::string where = describe(row, i);
    require(std::isfinite(row.rhs), ErrorKind::kInput, where + ": non-finite rhs");
    for (const auto& term : row.linear) {
      check_var(term.var, where);
      require(std::isfinite(term.coef), ErrorKind::kInput, where + ": non-finite coefficient");
    }
    if (row.is_quadratic()) {
      require(row.sense == RowSense::kLessEqual, ErrorKind::kInput,
              where + ": quadratic equality rows are not convex");
      const auto k = static_cast<Eigen::Index>(row.quad_vars.size());
      require(row.quad.rows() == k && row.quad.cols() == k, ErrorKind::kDimension,
              where + ": quadratic block size mismatch");
      for (int var : row.quad_vars) check_var(var, where);
      require(row.quad.allFinite(), ErrorKind::kInput, where + ": non-finite quadratic");
      require(is_psd(row.quad, psd_tolerance), ErrorKind::kInput,
              where + ": quadratic part is not positive semidefinite");
    }
  }
  for (const auto& term : objective_linear) check_var(term.var, "objective");
  if (!objective_quad_vars.empty()) {
    for (int var : objective_quad_vars) check_var(var, "objective");
    const Matrix p = sense == Sense::kMinimize ? objective_quad : Matrix(-objective_quad);
    require(is_psd(p, psd_tolerance), ErrorKind::kInput,
            "objective: quadratic part is not convex for the requested sense");
  }
}

std::map<std::string, int> ConicProgram::census() const {
  std::map<std::string, int> counts;
  for (const Row& row : rows_) ++counts[row.category];
  return counts;
}

double ConicProgram::objective(const Vector& v) const {
  double value = 0.0;
  for (const auto& term : objective_linear) value += term.coef * v(term.var);
  if (!objective_quad_vars.empty()) {
    Vector local(objective_quad_vars.size());
    for (std::size_t i = 0; i < objective_quad_vars.size(); ++i) {
      local(i) = v(objective_quad_vars[i]);
    }
    value += 0.5 * local.dot(objective_quad * local);
  }
  return value;
}

double ConicProgram::max_violation(const Vector& v) const {
  double worst = 0.0;
  for (int i = 0; i < num_variables(); ++i) {
    worst = std::max({worst, lower_(i) - v(i), v(i) - upper_(i)});
  }
  for (const Row& row : rows_) {
    const double gap = row.lhs(v) - row.rhs;
    worst = std::max(worst, row.sense == RowSense::kEqual ? std::abs(gap) : gap);
  }
  return worst;
}

std::string to_string(Status status) {
  switch (status) {
    case Status::kOptimal: return "optimal";
    case Status::kInfeasible: return "infeasible";
    case Status::kNumericalFailure: return "numerical-failure";
    case Status::kIterationLimit: return "iteration-limit";
  }
  return "unknown";
}

SolveOutcome solve(const ConicProgram& program, const SolveOptions& options,
                   const Backend* backend) {
  require(backend != nullptr, ErrorKind::kConfiguration, "no conic solver backend attached");
  program.validate();
  const auto start = std::chrono::steady_clock::now();
  SolveOutcome outcome = backend->solve(program, options);
  outcome.stats.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
  if (outcome.status == Status::kOptimal) {
    require(outcome.primal.size() == program.num_variables(), ErrorKind::kSolver,
            backend->name() + " returned a primal of the wrong size");
    outcome.max_violation = program.max_violation(outcome.primal);
    outcome.objective = program.objective(outcome.primal);
    if (!(outcome.max_violation <= options.tolerances.recheck)) {
      outcome.status = Status::kNumericalFailure;
      std::ostringstream msg;
      msg << "re-check rejected solver point: residual " << outcome.max_violation;
      outcome.message = msg.str();
    }
  }
  return outcome;
}

}  // namespace scr::conic
