#pragma once

#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scr/common.hpp"

namespace scr::conic {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct LinearTerm {
  int var;
  double coef;
};

enum class RowSense { kLessEqual, kEqual };

/// One constraint of the form
///   sum_j coef_j v_j + 1/2 v_S' P v_S  (<= | ==)  rhs
/// where S = quad_vars indexes a (small) subset of the variables. Quadratic
/// parts are only allowed on inequality rows and P must be PSD.
struct Row {
  std::vector<LinearTerm> linear;
  std::vector<int> quad_vars;
  Matrix quad;  // |quad_vars| x |quad_vars|
  double rhs = 0.0;
  RowSense sense = RowSense::kLessEqual;
  std::string category;
  /// Typical size of rhs - linear part; balances the cone lowering of quadratic rows.
  double scale = 1.0;

  bool is_quadratic() const { return !quad_vars.empty(); }
  double lhs(const Vector& v) const;
};

enum class Sense { kMinimize, kMaximize };

/// Solver-agnostic convex program: linear/quadratic rows, variable bounds and a
/// convex quadratic objective 1/2 v' P0 v + a0' v (P0 over objective_quad_vars).
class ConicProgram {
 public:
  int add_variable(std::string name, double lower = -kInf, double upper = kInf);
  void add_row(Row row);

  int num_variables() const { return static_cast<int>(names_.size()); }
  int num_rows() const { return static_cast<int>(rows_.size()); }
  const std::vector<Row>& rows() const { return rows_; }
  const std::vector<std::string>& names() const { return names_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  void set_bounds(int var, double lower, double upper);

  Sense sense = Sense::kMinimize;
  std::vector<LinearTerm> objective_linear;
  std::vector<int> objective_quad_vars;
  Matrix objective_quad;

  /// Throws Error naming the first offending row on non-PSD quadratics,
  /// non-finite data or out-of-range variable indices.
  void validate(double psd_tolerance = 1e-10) const;

  /// Row counts keyed by category.
  std::map<std::string, int> census() const;

  double objective(const Vector& v) const;

  /// Largest violation over rows and variable bounds (0 when feasible).
  double max_violation(const Vector& v) const;

 private:
  std::vector<std::string> names_;
  Vector lower_;
  Vector upper_;
  std::vector<Row> rows_;
};

enum class Status { kOptimal, kInfeasible, kNumericalFailure, kIterationLimit };

std::string to_string(Status status);

struct SolverStats {
  int iterations = 0;
  double wall_ms = 0.0;
};

struct SolveOutcome {
  Status status = Status::kNumericalFailure;
  Vector primal;
  double objective = 0.0;
  double max_violation = 0.0;
  SolverStats stats;
  std::string message;
};

struct Tolerances {
  double feasibility = 1e-8;
  double gap = 1e-8;
  /// Backend iteration cap.
  int max_iterations = 200;
  /// Accepted primal residual when independently re-checking an optimum.
  double recheck = 1e-6;
};

struct SolveOptions {
  Tolerances tolerances;
  std::optional<Vector> initial_guess;
  /// Per-iteration progress on stderr.
  bool verbose = false;
};

/// Adapter contract: accept the program as-is and return primal values for all
/// variables in program order.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual SolveOutcome solve(const ConicProgram& program,
                             const SolveOptions& options) const = 0;
};

/// Primal-dual interior point backend (homogeneous self-dual embedding, NT
/// scaling); quadratic rows are lowered to second-order cones.
std::unique_ptr<Backend> make_ipm_backend();

/// Validates, delegates to the backend and re-checks the returned point.
/// A null backend is a configuration error; infeasibility is reported via the
/// outcome status.
SolveOutcome solve(const ConicProgram& program, const SolveOptions& options,
                   const Backend* backend);

}  // namespace scr::conic
