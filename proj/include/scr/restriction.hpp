#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scr/conic.hpp"
#include "scr/envelope.hpp"
#include "scr/model.hpp"
#include "scr/obstacle.hpp"
#include "scr/trajectory.hpp"

namespace scr {

/// Box outer bound of the transformed states, z_lower <= C_t x_t <= z_upper,
/// stacked over t = 0..N.
struct Tube {
  Vector z_upper;
  Vector z_lower;
};

/// w_init in {x0 + Sigma_init^{1/2} e : |e| <= gamma_init} and, per stage,
/// w_t in {w0_t + Sigma_t^{1/2} e : |e| <= gamma_dyn}. One Sigma_t is shared
/// by all stages when sigma_stage has a single entry.
struct UncertaintyModel {
  Matrix sigma_init;
  std::vector<Matrix> sigma_stage;
  double gamma_init = 0.0;
  double gamma_dyn = 0.0;

  const Matrix& stage(int t) const;
  void validate(int n, int r, int horizon) const;
};

/// Stage cost 1/2 |Q^{1/2}_t x_t|^2 + 1/2 |R^{1/2}_t u_t|^2 for t < N and
/// terminal 1/2 |Q^{1/2}_N x_N|^2. Single-entry vectors are shared by stages.
struct CostWeights {
  std::vector<Matrix> q_sqrt;
  Matrix q_terminal_sqrt;
  std::vector<Matrix> r_sqrt;

  const Matrix& q(int t, int horizon) const;
  const Matrix& r(int t) const;
};

/// Symmetric square root of a PSD weight; throws when the weight is not PSD.
Matrix psd_sqrt(const Matrix& weight, const std::string& what);

/// Everything the restriction needs besides the current nominal point.
struct RobustProblem {
  FeedbackModel model;
  Vector x0;
  Vector w_stage_nominal;  // r N, usually zero
  UncertaintyModel uncertainty;
  std::vector<Obstacle> obstacles;
  CostWeights cost;
  Vector u_lower;  // m, may be -inf
  Vector u_upper;  // m, may be +inf

  int horizon() const { return model.horizon(); }
  Vector w_nominal() const { return stack_disturbance(x0, w_stage_nominal); }
  void validate() const;
};

/// Realized cost of a trajectory.
double trajectory_cost(const RobustProblem& problem, const Vector& x, const Vector& u);

/// Per-stage half-spaces L_t z + d_t < 0, t = 1..N (index 0 unused).
struct SafetyRestriction {
  std::vector<Matrix> L;                   // s x q
  std::vector<Vector> d;                   // s
  std::vector<std::vector<Vector>> witness;  // projections b_{t,i}

  int rows_per_stage() const;
};

/// Projects every nominal state onto every obstacle. Throws naming the stage
/// and obstacle when a nominal state is inside or on an obstacle.
SafetyRestriction safety_halfspaces(const FeedbackModel& model, const Vector& nominal_x,
                                    const std::vector<Obstacle>& obstacles);

/// xi(gamma_init, gamma_dyn) = nominal + gamma_init * spread_init + gamma_dyn * spread_dyn,
/// the support function of the product of per-stage ellipsoids along each row of R.
struct SupportTerm {
  Vector nominal;
  Vector spread_init;
  Vector spread_dyn;

  Vector at(double gamma_init, double gamma_dyn) const {
    return nominal + gamma_init * spread_init + gamma_dyn * spread_dyn;
  }
};

SupportTerm xi_support(const Matrix& R, const UncertaintyModel& uncertainty,
                       const Vector& w_nominal, int n, int r, int horizon);

/// How gamma enters the program: fixed at the problem's radii, or as one
/// decision variable scaling the initial, dynamic, or both ellipsoids (the
/// other one is zeroed).
enum class MarginMode { kFixed, kInit, kDynamics, kJoint };

struct RestrictionConfig {
  MarginMode margin = MarginMode::kFixed;
  bool include_cost = true;
  /// Pins u to these values (margin certification).
  std::optional<Vector> fixed_controls;
  double eps_safe = 1e-6;
  /// Extra tightening of self-map and envelope rows so solver round-off does
  /// not break the exact re-check.
  double solver_margin = 1e-7;
  double gamma_cap = 1e3;
  int sparsity_cap = kDefaultSparsityCap;
};

/// Decision variable offsets, in canonical order
/// u, z_upper, z_lower, g_upper, g_lower, y, c_u, gamma.
struct VariableLayout {
  int u = 0, num_u = 0;
  int z_upper = 0, z_lower = 0, num_z = 0;
  int g_upper = 0, g_lower = 0, num_g = 0;
  int y = 0, num_y = 0;
  int cost = -1;
  int gamma = -1;
  int total = 0;
};

/// A residual component needing bound variables (index into g_upper/g_lower).
struct NonlinearSlot {
  int stage;
  int component;
  int column;  // column of K
  QuadraticEnvelopeD envelope;
};

/// A residual component that is exactly c + a'u_t and is inlined.
struct AffineSlot {
  int stage;
  int component;
  int column;
  double c;
  Vector a_u;
};

struct RestrictionProgram {
  VariableLayout layout;
  std::vector<NonlinearSlot> nonlinear;
  std::vector<AffineSlot> affine;
  SelfMapMatrices km;
  SupportTerm xi;
  std::vector<conic::Row> selfmap;
  std::vector<conic::Row> envelope;
  std::vector<conic::Row> safety;
  std::vector<conic::Row> cost;
  Vector lower;
  Vector upper;
  conic::Sense sense = conic::Sense::kMinimize;
  std::vector<conic::LinearTerm> objective;
  std::vector<std::string> names;
};

/// Classifies residual components at the nominal into zero, inlined affine,
/// or nonlinear slots; throws when a nonlinear component lacks an envelope.
void classify_residuals(const FeedbackModel& model, const NominalPoint& nominal,
                        std::vector<NonlinearSlot>& nonlinear, std::vector<AffineSlot>& affine);

/// Self-map rows K+ g_u + K- g_l + xi <= [z_u; -z_l] plus the vertex rows
/// linking g_u, g_l to the envelopes.
void build_selfmap_constraints(RestrictionProgram& program, const RobustProblem& problem,
                               const RestrictionConfig& config);

/// L+ z_u + L- z_l + d <= -eps_safe for t = 1..N.
void build_safety_constraints(RestrictionProgram& program, const FeedbackModel& model,
                              const SafetyRestriction& safety, double eps_safe);

/// y_t >= |Q^{1/2} C^+ z| over the tube and c_u >= 1/2 sum |y_t|^2 + 1/2 sum |R^{1/2} u_t|^2.
void build_cost_epigraph(RestrictionProgram& program, const RobustProblem& problem);

/// Full restriction at a nominal point.
RestrictionProgram assemble_restriction(const RobustProblem& problem, const NominalPoint& nominal,
                                        const SafetyRestriction& safety,
                                        const RestrictionConfig& config);

conic::ConicProgram canonicalize(const RestrictionProgram& program);

/// Pieces of a primal vector.
Vector controls_of(const RestrictionProgram& program, const Vector& primal);
Tube tube_of(const RestrictionProgram& program, const Vector& primal);

/// n(N+1) 2^{|I|+1} + 2q(N+1) + sN.
long constraint_count_bound(int n, int q, int s, int sparsity_degree, int horizon);

/// Independent re-check of the restriction at (u, tube) with the bound
/// variables recomputed from envelope vertices.
struct CertificateCheck {
  bool valid = false;
  double worst_selfmap = 0.0;  // max over rows of lhs - rhs (<= 0 when valid)
  double worst_safety = 0.0;   // max over rows of L+ z_u + L- z_l + d (< 0 when valid)
  double worst_bounds = 0.0;   // control bound violation
  double cost_upper = 0.0;     // exact c_u of the tube
};

CertificateCheck check_certificate(const RobustProblem& problem, const RestrictionProgram& program,
                                   const SafetyRestriction& safety, const Vector& u,
                                   const Tube& tube, double gamma_init, double gamma_dyn);

/// Largest gamma for which (u, tube) still certifies when gamma scales the
/// ellipsoids selected by `mode`; 0 when even gamma = 0 fails.
double exact_margin(const RobustProblem& problem, const RestrictionProgram& program,
                    const SafetyRestriction& safety, const Vector& u, const Tube& tube,
                    MarginMode mode);

/// Smallest tube satisfying the self-map rows for fixed u. K is strictly
/// causal, so one forward sweep over the stages computes it exactly; every
/// bound is padded by 1e-10 relative so the re-check is not lost to rounding.
Tube propagate_tube(const RobustProblem& problem, const RestrictionProgram& program,
                    const Vector& u, double gamma_init, double gamma_dyn);

/// Largest gamma (by bisection to `tolerance`) for which the propagated tube
/// of u is safe, with gamma scaling the ellipsoids selected by mode. Since the
/// propagated tube is the smallest certificate, this is the restriction's
/// margin for u, independent of any solver.
double propagated_margin(const RobustProblem& problem, const RestrictionProgram& program,
                         const SafetyRestriction& safety, const Vector& u, MarginMode mode,
                         double cap, double tolerance = 1e-9);

/// Exact c_u of a tube: 1/2 sum |y_t|^2 + 1/2 sum |R^{1/2} u_t|^2 with y_t the
/// componentwise max of |Q^{1/2} C^+ z| over the box.
double tube_cost_upper(const RobustProblem& problem, const Vector& u, const Tube& tube);

}  // namespace scr
