#include "scr/restriction.hpp"

#include <cmath>

namespace scr {
namespace {

using conic::LinearTerm;
using conic::Row;

constexpr double kPsdTolerance = 1e-12;

void check_psd(const Matrix& m, Eigen::Index dim, const std::string& what) {
  require(m.rows() == dim && m.cols() == dim, ErrorKind::kDimension,
          what + " must be " + std::to_string(dim) + " x " + std::to_string(dim));
  require(m.allFinite(), ErrorKind::kInput, what + " must be finite");
  if (dim == 0) return;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorKind::kInput,
          what + " must be symmetric");
  const double min_eig =
      Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  require(min_eig >= -kPsdTolerance * scale, ErrorKind::kInput, what + " must be PSD");
}

// Appends sum_j coef(j) v_{offset + j} for nonzero coefficients.
void append_terms(std::vector<LinearTerm>& out, const Eigen::Ref<const Eigen::RowVectorXd>& coef, int offset) {
  for (Eigen::Index j = 0; j < coef.size(); ++j) {
    const double c = coef(j);
    if (c != 0.0) out.push_back({offset + static_cast<int>(j), c});
  }
}

Row dense_row(const Eigen::Ref<const Eigen::RowVectorXd>& coef, double rhs, const std::string& category) {
  Row row;
  append_terms(row.linear, coef, 0);
  row.rhs = rhs;
  row.category = category;
  return row;
}

std::string indexed(const std::string& base, int t, int i) {
  return base + "[" + std::to_string(t) + "][" + std::to_string(i) + "]";
}

// Residual value of an inlined affine slot: c + a'u_t.
double affine_value(const AffineSlot& slot, const Vector& u, int m) {
  return slot.c + slot.a_u.dot(u.segment(slot.stage * m, m));
}

Vector selected_spread(const SupportTerm& xi, MarginMode mode) {
  switch (mode) {
    case MarginMode::kInit:
      return xi.spread_init;
    case MarginMode::kDynamics:
      return xi.spread_dyn;
    case MarginMode::kJoint:
      return xi.spread_init + xi.spread_dyn;
    case MarginMode::kFixed:
      break;
  }
  throw Error(ErrorKind::kConfiguration, "margin mode has no decision variable");
}

// lhs - rhs of every self-map row, with gamma = 0 and the bound variables taken
// from envelope vertices. Rows follow the top/bottom stacking of K.
Vector selfmap_base(const RestrictionProgram& program, const FeedbackModel& model,
                    const Vector& u, const Tube& tube) {
  const auto& d = model.dims();
  const int N = model.horizon();
  Vector value = program.xi.nominal;
  for (const auto& slot : program.nonlinear) {
    const auto& set = model.stage(slot.stage).sparsity[slot.component];
    Vector lo(static_cast<Eigen::Index>(set.size())), hi(lo.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      lo(i) = tube.z_lower(slot.stage * d.q + set[i]);
      hi(i) = tube.z_upper(slot.stage * d.q + set[i]);
    }
    const auto ext = vertex_extrema(slot.envelope, lo, hi, u.segment(slot.stage * d.m, d.m));
    value += program.km.K_plus.col(slot.column) * ext.upper_max +
             program.km.K_minus.col(slot.column) * ext.lower_min;
  }
  for (const auto& slot : program.affine) {
    value += program.km.K.col(slot.column) * affine_value(slot, u, d.m);
  }
  const int rows = d.q * (N + 1);
  value.head(rows) -= tube.z_upper;
  value.tail(rows) += tube.z_lower;
  return value;
}

double worst_safety_value(const FeedbackModel& model, const SafetyRestriction& safety,
                          const Tube& tube) {
  const auto& d = model.dims();
  double worst = -std::numeric_limits<double>::infinity();
  for (int t = 1; t <= model.horizon(); ++t) {
    const Matrix& l = safety.L[t];
    if (l.rows() == 0) continue;
    const Vector v = positive_part(l) * tube.z_upper.segment(t * d.q, d.q) +
                     negative_part(l) * tube.z_lower.segment(t * d.q, d.q) + safety.d[t];
    worst = std::max(worst, v.maxCoeff());
  }
  return worst;
}

}  // namespace

const Matrix& UncertaintyModel::stage(int t) const {
  require(!sigma_stage.empty(), ErrorKind::kInput, "uncertainty: no stage covariance");
  return sigma_stage.size() == 1 ? sigma_stage.front() : sigma_stage.at(t);
}

void UncertaintyModel::validate(int n, int r, int horizon) const {
  check_psd(sigma_init, n, "Sigma_init");
  require(sigma_stage.size() == 1 || static_cast<int>(sigma_stage.size()) == horizon,
          ErrorKind::kInput, "uncertainty: need one stage covariance or one per stage");
  for (std::size_t t = 0; t < sigma_stage.size(); ++t) {
    check_psd(sigma_stage[t], r, "Sigma_" + std::to_string(t));
  }
  require(std::isfinite(gamma_init) && gamma_init >= 0.0 && std::isfinite(gamma_dyn) &&
              gamma_dyn >= 0.0,
          ErrorKind::kInput, "uncertainty: radii must be finite and nonnegative");
}

const Matrix& CostWeights::q(int t, int horizon) const {
  if (t == horizon) return q_terminal_sqrt;
  return q_sqrt.size() == 1 ? q_sqrt.front() : q_sqrt.at(t);
}

const Matrix& CostWeights::r(int t) const {
  return r_sqrt.size() == 1 ? r_sqrt.front() : r_sqrt.at(t);
}

Matrix psd_sqrt(const Matrix& weight, const std::string& what) {
  check_psd(weight, weight.rows(), what);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(weight);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

void RobustProblem::validate() const {
  const auto& d = model.dims();
  const int N = horizon();
  require(x0.size() == d.n && x0.allFinite(), ErrorKind::kInput,
          "initial state must have " + std::to_string(d.n) + " finite entries");
  require(w_stage_nominal.size() == d.r * N && w_stage_nominal.allFinite(), ErrorKind::kInput,
          "nominal disturbance must have " + std::to_string(d.r * N) + " finite entries");
  uncertainty.validate(d.n, d.r, N);
  for (const auto& obstacle : obstacles) validate_obstacle(obstacle, d.n);

  auto check_shared = [&](std::size_t count, const std::string& what) {
    require(count == 1 || static_cast<int>(count) == N, ErrorKind::kInput,
            what + ": need one factor or one per stage");
  };
  check_shared(cost.q_sqrt.size(), "Q_sqrt");
  check_shared(cost.r_sqrt.size(), "R_sqrt");
  for (const auto& q : cost.q_sqrt) {
    require(q.cols() == d.n && q.allFinite(), ErrorKind::kInput, "Q_sqrt must have n columns");
  }
  require(cost.q_terminal_sqrt.cols() == d.n && cost.q_terminal_sqrt.allFinite(),
          ErrorKind::kInput, "Q_N_sqrt must have n columns");
  for (const auto& r : cost.r_sqrt) {
    require(r.cols() == d.m && r.allFinite(), ErrorKind::kInput, "R_sqrt must have m columns");
  }
  require(u_lower.size() == d.m && u_upper.size() == d.m, ErrorKind::kInput,
          "control bounds must have m entries");
  require(!u_lower.hasNaN() && !u_upper.hasNaN() && (u_lower.array() <= u_upper.array()).all(),
          ErrorKind::kInput, "control bounds need lower <= upper");
}

double trajectory_cost(const RobustProblem& problem, const Vector& x, const Vector& u) {
  const auto& d = problem.model.dims();
  const int N = problem.horizon();
  double cost = 0.0;
  for (int t = 0; t <= N; ++t) {
    cost += 0.5 * (problem.cost.q(t, N) * x.segment(t * d.n, d.n)).squaredNorm();
  }
  for (int t = 0; t < N; ++t) {
    cost += 0.5 * (problem.cost.r(t) * u.segment(t * d.m, d.m)).squaredNorm();
  }
  return cost;
}

int SafetyRestriction::rows_per_stage() const {
  return L.size() > 1 ? static_cast<int>(L[1].rows()) : 0;
}

SafetyRestriction safety_halfspaces(const FeedbackModel& model, const Vector& nominal_x,
                                    const std::vector<Obstacle>& obstacles) {
  const auto& d = model.dims();
  const int N = model.horizon();
  require(nominal_x.size() == d.n * (N + 1), ErrorKind::kDimension,
          "safety: nominal trajectory has wrong size");
  const auto s = static_cast<Eigen::Index>(obstacles.size());
  SafetyRestriction out;
  out.L.assign(N + 1, Matrix(0, d.q));
  out.d.assign(N + 1, Vector(0));
  out.witness.assign(N + 1, {});
  for (int t = 1; t <= N; ++t) {
    const Vector xt = nominal_x.segment(t * d.n, d.n);
    Matrix l(s, d.q);
    Vector dt(s);
    for (Eigen::Index i = 0; i < s; ++i) {
      const Vector b = project_to_obstacle(xt, obstacles[i]);
      const Vector diff = b - xt;
      if (diff.norm() <= 1e-12 * (1.0 + xt.norm())) {
        throw Error(ErrorKind::kInfeasible, "stage " + std::to_string(t) +
                                                ": nominal state is inside or on obstacle '" +
                                                obstacles[i].name + "'");
      }
      l.row(i) = diff.transpose() * model.C_pinv(t);
      dt(i) = -diff.dot(b);
      out.witness[t].push_back(b);
    }
    out.L[t] = std::move(l);
    out.d[t] = std::move(dt);
  }
  return out;
}

SupportTerm xi_support(const Matrix& R, const UncertaintyModel& uncertainty,
                       const Vector& w_nominal, int n, int r, int horizon) {
  require(R.cols() == n + r * horizon && w_nominal.size() == R.cols(), ErrorKind::kDimension,
          "support term: R and w do not match the disturbance stacking");
  SupportTerm xi;
  xi.nominal = R * w_nominal;
  xi.spread_init = (R.leftCols(n) * psd_sqrt(uncertainty.sigma_init, "Sigma_init"))
                       .rowwise()
                       .norm();
  xi.spread_dyn = Vector::Zero(R.rows());
  Matrix shared;
  if (uncertainty.sigma_stage.size() == 1) shared = psd_sqrt(uncertainty.sigma_stage[0], "Sigma");
  for (int t = 0; t < horizon; ++t) {
    const Matrix root =
        uncertainty.sigma_stage.size() == 1 ? shared : psd_sqrt(uncertainty.stage(t), "Sigma");
    xi.spread_dyn += (R.middleCols(n + t * r, r) * root).rowwise().norm();
  }
  return xi;
}

void classify_residuals(const FeedbackModel& model, const NominalPoint& nominal,
                        std::vector<NonlinearSlot>& nonlinear, std::vector<AffineSlot>& affine) {
  const auto& d = model.dims();
  for (int t = 0; t < model.horizon(); ++t) {
    const StageModel& s = model.stage(t);
    for (int k = 0; k < d.p; ++k) {
      require(static_cast<bool>(s.envelopes[k]), ErrorKind::kInput,
              "stage " + std::to_string(t) + ": no envelope for residual component " +
                  std::to_string(k));
      const int column = d.n + t * d.p + k;
      QuadraticEnvelopeD env = residual_envelope(model, t, k, nominal);
      const auto local = static_cast<Eigen::Index>(s.sparsity[k].size());
      if (env.is_exact_affine()) {
        const Vector& a = env.upper.a;
        const double scale = 1.0 + a.cwiseAbs().maxCoeff();
        const bool no_z = local == 0 || a.head(local).cwiseAbs().maxCoeff() <= 1e-12 * scale;
        if (no_z) {
          const Vector a_u = a.tail(d.m);
          if (env.upper.c == 0.0 && (d.m == 0 || a_u.cwiseAbs().maxCoeff() == 0.0)) continue;
          affine.push_back({t, k, column, env.upper.c, a_u});
          continue;
        }
      }
      nonlinear.push_back({t, k, column, std::move(env)});
    }
  }
}


void build_selfmap_constraints(RestrictionProgram& program, const RobustProblem& problem,
                               const RestrictionConfig& config) {
  const auto& d = problem.model.dims();
  const auto& lay = program.layout;
  const auto& km = program.km;
  const auto rows = km.K.rows();
  const auto half = rows / 2;

  Matrix coef = Matrix::Zero(rows, lay.total);
  Vector rhs = -program.xi.nominal - Vector::Constant(rows, config.solver_margin);
  for (std::size_t g = 0; g < program.nonlinear.size(); ++g) {
    const int column = program.nonlinear[g].column;
    coef.col(lay.g_upper + static_cast<int>(g)) += km.K_plus.col(column);
    coef.col(lay.g_lower + static_cast<int>(g)) += km.K_minus.col(column);
  }
  for (const auto& slot : program.affine) {
    rhs -= km.K.col(slot.column) * slot.c;
    for (int j = 0; j < d.m; ++j) {
      if (slot.a_u(j) != 0.0) {
        coef.col(lay.u + slot.stage * d.m + j) += km.K.col(slot.column) * slot.a_u(j);
      }
    }
  }
  for (Eigen::Index i = 0; i < half; ++i) {
    coef(i, lay.z_upper + i) -= 1.0;
    coef(half + i, lay.z_lower + i) += 1.0;
  }
  if (lay.gamma >= 0) {
    coef.col(lay.gamma) += selected_spread(program.xi, config.margin);
  } else {
    rhs -= problem.uncertainty.gamma_init * program.xi.spread_init +
           problem.uncertainty.gamma_dyn * program.xi.spread_dyn;
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    program.selfmap.push_back(dense_row(coef.row(i), rhs(i), "selfmap"));
  }

  for (std::size_t g = 0; g < program.nonlinear.size(); ++g) {
    const auto& slot = program.nonlinear[g];
    const auto& set = problem.model.stage(slot.stage).sparsity[slot.component];
    VertexVariables vars;
    for (int i : set) {
      vars.z_upper.push_back(lay.z_upper + slot.stage * d.q + i);
      vars.z_lower.push_back(lay.z_lower + slot.stage * d.q + i);
    }
    for (int j = 0; j < d.m; ++j) vars.u.push_back(lay.u + slot.stage * d.m + j);
    vars.g_upper = lay.g_upper + static_cast<int>(g);
    vars.g_lower = lay.g_lower + static_cast<int>(g);
    auto vertex_rows =
        vertex_bound_constraints(slot.envelope, vars, config.solver_margin, config.sparsity_cap);
    for (auto& row : vertex_rows) program.envelope.push_back(std::move(row));
  }
}

void build_safety_constraints(RestrictionProgram& program, const FeedbackModel& model,
                              const SafetyRestriction& safety, double eps_safe) {
  require(eps_safe >= 0.0, ErrorKind::kInput, "eps_safe must be nonnegative");
  const auto& d = model.dims();
  const auto& lay = program.layout;
  for (int t = 1; t <= model.horizon(); ++t) {
    const Matrix& l = safety.L[t];
    const Matrix lp = positive_part(l);
    const Matrix ln = negative_part(l);
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      Row row;
      append_terms(row.linear, lp.row(i), lay.z_upper + t * d.q);
      append_terms(row.linear, ln.row(i), lay.z_lower + t * d.q);
      row.rhs = -safety.d[t](i) - eps_safe;
      row.category = "safety";
      program.safety.push_back(std::move(row));
    }
  }
}

void build_cost_epigraph(RestrictionProgram& program, const RobustProblem& problem) {
  const auto& d = problem.model.dims();
  const int N = problem.horizon();
  const auto& lay = program.layout;
  require(lay.cost >= 0, ErrorKind::kConfiguration, "cost epigraph needs a cost variable");

  int y = lay.y;
  for (int t = 0; t <= N; ++t) {
    const Matrix a = problem.cost.q(t, N) * problem.model.C_pinv(t);
    const Matrix ap = positive_part(a);
    const Matrix an = negative_part(a);
    for (Eigen::Index j = 0; j < a.rows(); ++j, ++y) {
      Row upper;
      append_terms(upper.linear, ap.row(j), lay.z_upper + t * d.q);
      append_terms(upper.linear, an.row(j), lay.z_lower + t * d.q);
      upper.linear.push_back({y, -1.0});
      upper.category = "cost";
      Row lower;
      append_terms(lower.linear, -ap.row(j), lay.z_lower + t * d.q);
      append_terms(lower.linear, -an.row(j), lay.z_upper + t * d.q);
      lower.linear.push_back({y, -1.0});
      lower.category = "cost";
      program.cost.push_back(std::move(upper));
      program.cost.push_back(std::move(lower));
    }
  }

  // 1/2 sum y^2 + 1/2 sum u' R'R u - c_u <= 0.
  Row epigraph;
  epigraph.category = "cost";
  const int quad_dim = lay.num_y + lay.num_u;
  epigraph.quad = Matrix::Zero(quad_dim, quad_dim);
  for (int i = 0; i < lay.num_y; ++i) {
    epigraph.quad_vars.push_back(lay.y + i);
    epigraph.quad(i, i) = 1.0;
  }
  for (int t = 0; t < N; ++t) {
    const Matrix& r = problem.cost.r(t);
    epigraph.quad.block(lay.num_y + t * d.m, lay.num_y + t * d.m, d.m, d.m) = r.transpose() * r;
  }
  for (int i = 0; i < lay.num_u; ++i) epigraph.quad_vars.push_back(lay.u + i);
  epigraph.linear.push_back({lay.cost, -1.0});
  epigraph.rhs = 0.0;
  program.cost.push_back(std::move(epigraph));
}

RestrictionProgram assemble_restriction(const RobustProblem& problem, const NominalPoint& nominal,
                                        const SafetyRestriction& safety,
                                        const RestrictionConfig& config) {
  const auto& model = problem.model;
  const auto& d = model.dims();
  const int N = model.horizon();
  require(!nominal.empty(), ErrorKind::kInput, "restriction: no nominal point registered");
  require(safety.L.size() == static_cast<std::size_t>(N + 1), ErrorKind::kDimension,
          "restriction: safety half-spaces do not match the horizon");

  RestrictionProgram program;
  program.km = build_K_R(model, SensitivityBlocks(model, nominal));
  classify_residuals(model, nominal, program.nonlinear, program.affine);
  program.xi = xi_support(program.km.R, problem.uncertainty, nominal.w, d.n, d.r, N);

  auto& lay = program.layout;
  int next = 0;
  lay.u = next;
  lay.num_u = d.m * N;
  next += lay.num_u;
  lay.num_z = d.q * (N + 1);
  lay.z_upper = next;
  next += lay.num_z;
  lay.z_lower = next;
  next += lay.num_z;
  lay.num_g = static_cast<int>(program.nonlinear.size());
  lay.g_upper = next;
  next += lay.num_g;
  lay.g_lower = next;
  next += lay.num_g;
  lay.y = next;
  if (config.include_cost) {
    for (int t = 0; t <= N; ++t) lay.num_y += static_cast<int>(problem.cost.q(t, N).rows());
    next += lay.num_y;
    lay.cost = next++;
  }
  if (config.margin != MarginMode::kFixed) lay.gamma = next++;
  lay.total = next;

  program.lower = Vector::Constant(lay.total, -conic::kInf);
  program.upper = Vector::Constant(lay.total, conic::kInf);
  program.names.resize(lay.total);
  if (config.fixed_controls) {
    require(config.fixed_controls->size() == lay.num_u, ErrorKind::kDimension,
            "restriction: fixed controls have wrong size");
  }
  for (int t = 0; t < N; ++t) {
    for (int j = 0; j < d.m; ++j) {
      const int v = lay.u + t * d.m + j;
      program.names[v] = indexed("u", t, j);
      if (config.fixed_controls) {
        program.lower(v) = program.upper(v) = (*config.fixed_controls)(t * d.m + j);
      } else {
        program.lower(v) = problem.u_lower(j);
        program.upper(v) = problem.u_upper(j);
      }
    }
  }
  for (int t = 0; t <= N; ++t) {
    for (int i = 0; i < d.q; ++i) {
      program.names[lay.z_upper + t * d.q + i] = indexed("zu", t, i);
      program.names[lay.z_lower + t * d.q + i] = indexed("zl", t, i);
    }
  }
  for (int g = 0; g < lay.num_g; ++g) {
    const auto& slot = program.nonlinear[g];
    program.names[lay.g_upper + g] = indexed("gu", slot.stage, slot.component);
    program.names[lay.g_lower + g] = indexed("gl", slot.stage, slot.component);
  }
  if (config.include_cost) {
    int y = lay.y;
    for (int t = 0; t <= N; ++t) {
      for (Eigen::Index j = 0; j < problem.cost.q(t, N).rows(); ++j) {
        program.names[y++] = indexed("y", t, static_cast<int>(j));
      }
    }
    program.names[lay.cost] = "cu";
  }
  if (lay.gamma >= 0) {
    program.names[lay.gamma] = "gamma";
    program.lower(lay.gamma) = 0.0;
    program.upper(lay.gamma) = config.gamma_cap;
  }

  build_selfmap_constraints(program, problem, config);
  build_safety_constraints(program, model, safety, config.eps_safe);
  if (config.include_cost) {
    build_cost_epigraph(program, problem);
    program.cost.back().scale = std::max(1.0, trajectory_cost(problem, nominal.x, nominal.u));
  }

  if (lay.gamma >= 0) {
    program.sense = conic::Sense::kMaximize;
    program.objective = {{lay.gamma, 1.0}};
  } else if (lay.cost >= 0) {
    program.objective = {{lay.cost, 1.0}};
  }
  return program;
}

conic::ConicProgram canonicalize(const RestrictionProgram& program) {
  conic::ConicProgram out;
  for (int v = 0; v < program.layout.total; ++v) {
    out.add_variable(program.names[v], program.lower(v), program.upper(v));
  }
  for (const auto* group : {&program.selfmap, &program.envelope, &program.safety, &program.cost}) {
    for (const auto& row : *group) out.add_row(row);
  }
  out.sense = program.sense;
  out.objective_linear = program.objective;
  return out;
}

Vector controls_of(const RestrictionProgram& program, const Vector& primal) {
  return primal.segment(program.layout.u, program.layout.num_u);
}

Tube tube_of(const RestrictionProgram& program, const Vector& primal) {
  return {primal.segment(program.layout.z_upper, program.layout.num_z),
          primal.segment(program.layout.z_lower, program.layout.num_z)};
}

long constraint_count_bound(int n, int q, int s, int sparsity_degree, int horizon) {
  return static_cast<long>(n) * (horizon + 1) * (2L << sparsity_degree) +
         2L * q * (horizon + 1) + static_cast<long>(s) * horizon;
}

double tube_cost_upper(const RobustProblem& problem, const Vector& u, const Tube& tube) {
  const auto& d = problem.model.dims();
  const int N = problem.horizon();
  double cost = 0.0;
  for (int t = 0; t <= N; ++t) {
    const Matrix a = problem.cost.q(t, N) * problem.model.C_pinv(t);
    const Vector zu = tube.z_upper.segment(t * d.q, d.q);
    const Vector zl = tube.z_lower.segment(t * d.q, d.q);
    const Vector hi = positive_part(a) * zu + negative_part(a) * zl;
    const Vector lo = positive_part(a) * zl + negative_part(a) * zu;
    cost += 0.5 * hi.cwiseAbs().cwiseMax(lo.cwiseAbs()).squaredNorm();
  }
  for (int t = 0; t < N; ++t) {
    cost += 0.5 * (problem.cost.r(t) * u.segment(t * d.m, d.m)).squaredNorm();
  }
  return cost;
}

CertificateCheck check_certificate(const RobustProblem& problem, const RestrictionProgram& program,
                                   const SafetyRestriction& safety, const Vector& u,
                                   const Tube& tube, double gamma_init, double gamma_dyn) {
  const auto& model = problem.model;
  const auto& d = model.dims();
  require(u.size() == d.m * model.horizon() && tube.z_upper.size() == program.layout.num_z &&
              tube.z_lower.size() == program.layout.num_z,
          ErrorKind::kDimension, "certificate check: sizes do not match the program");
  CertificateCheck out;
  const Vector selfmap = selfmap_base(program, model, u, tube) +
                         gamma_init * program.xi.spread_init +
                         gamma_dyn * program.xi.spread_dyn;
  out.worst_selfmap = selfmap.maxCoeff();
  out.worst_safety = worst_safety_value(model, safety, tube);
  for (int t = 0; t < model.horizon(); ++t) {
    const Vector ut = u.segment(t * d.m, d.m);
    out.worst_bounds = std::max(out.worst_bounds, (problem.u_lower - ut).maxCoeff());
    out.worst_bounds = std::max(out.worst_bounds, (ut - problem.u_upper).maxCoeff());
  }
  out.cost_upper = tube_cost_upper(problem, u, tube);
  out.valid = out.worst_selfmap <= 0.0 && out.worst_safety < 0.0 && out.worst_bounds <= 0.0 &&
              tube.z_upper.allFinite() && tube.z_lower.allFinite();
  return out;
}

double exact_margin(const RobustProblem& problem, const RestrictionProgram& program,
                    const SafetyRestriction& safety, const Vector& u, const Tube& tube,
                    MarginMode mode) {
  if (worst_safety_value(problem.model, safety, tube) >= 0.0) return 0.0;
  const Vector base = selfmap_base(program, problem.model, u, tube);
  const Vector spread = selected_spread(program.xi, mode);
  double gamma = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    if (spread(i) > 0.0) {
      gamma = std::min(gamma, -base(i) / spread(i));
    } else if (base(i) > 0.0) {
      return 0.0;
    }
  }
  return std::max(0.0, gamma);
}

Tube propagate_tube(const RobustProblem& problem, const RestrictionProgram& program,
                    const Vector& u, double gamma_init, double gamma_dyn) {
  const auto& model = problem.model;
  const auto& d = model.dims();
  const int N = model.horizon();
  const int rows = d.q * (N + 1);
  require(u.size() == d.m * N, ErrorKind::kDimension, "propagate: controls must have m N entries");
  Vector value = program.xi.at(gamma_init, gamma_dyn);
  for (const auto& slot : program.affine) {
    value += program.km.K.col(slot.column) * affine_value(slot, u, d.m);
  }
  auto pad = [](double v) { return 1e-10 * (1.0 + std::abs(v)); };

  Tube tube{Vector::Zero(rows), Vector::Zero(rows)};
  std::size_t next = 0;
  for (int t = 0; t <= N; ++t) {
    // Only slots of earlier stages have touched these rows.
    for (int i = 0; i < d.q; ++i) {
      const double hi = value(t * d.q + i);
      const double lo = -value(rows + t * d.q + i);
      tube.z_upper(t * d.q + i) = hi + pad(hi);
      tube.z_lower(t * d.q + i) = lo - pad(lo);
    }
    for (; next < program.nonlinear.size() && program.nonlinear[next].stage == t; ++next) {
      const auto& slot = program.nonlinear[next];
      const auto& set = model.stage(t).sparsity[slot.component];
      Vector lo(static_cast<Eigen::Index>(set.size())), hi(lo.size());
      for (std::size_t i = 0; i < set.size(); ++i) {
        lo(i) = tube.z_lower(t * d.q + set[i]);
        hi(i) = tube.z_upper(t * d.q + set[i]);
      }
      const auto ext = vertex_extrema(slot.envelope, lo, hi, u.segment(t * d.m, d.m));
      value += program.km.K_plus.col(slot.column) * ext.upper_max +
               program.km.K_minus.col(slot.column) * ext.lower_min;
    }
  }
  require(next == program.nonlinear.size(), ErrorKind::kConfiguration,
          "propagate: nonlinear slots are not ordered by stage");
  return tube;
}

double propagated_margin(const RobustProblem& problem, const RestrictionProgram& program,
                         const SafetyRestriction& safety, const Vector& u, MarginMode mode,
                         double cap, double tolerance) {
  require(mode != MarginMode::kFixed, ErrorKind::kConfiguration,
          "margin mode must select an ellipsoid");
  const bool use_init = mode != MarginMode::kDynamics;
  const bool use_dyn = mode != MarginMode::kInit;
  auto safe = [&](double gamma) {
    const Tube tube = propagate_tube(problem, program, u, use_init ? gamma : 0.0,
                                     use_dyn ? gamma : 0.0);
    return tube.z_upper.allFinite() && tube.z_lower.allFinite() &&
           worst_safety_value(problem.model, safety, tube) < 0.0;
  };
  if (!safe(0.0)) return 0.0;
  if (safe(cap)) return cap;
  double lo = 0.0;
  double hi = cap;
  while (hi - lo > tolerance * std::max(1.0, lo)) {
    const double mid = 0.5 * (lo + hi);
    (safe(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace scr
