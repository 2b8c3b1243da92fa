#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scr/common.hpp"
#include "scr/envelope.hpp"

namespace scr {

/// Basis vector psi_t(z, u) and its Jacobian with respect to z (p x q).
struct Basis {
  std::function<Vector(const Vector& z, const Vector& u)> eval;
  std::function<Matrix(const Vector& z, const Vector& u)> jacobian;
};

/// Builds an envelope of one basis component psi_k over y = [z_I; u]
/// (I = the component's sparsity set, in increasing order) anchored at the
/// full nominal (z0, u0). `spread` is either empty or the expected half-widths
/// of the tube around z0 (length q); builders may use it to tune free
/// parameters, never for soundness.
using EnvelopeBuilder = std::function<QuadraticEnvelopeD(const Vector& z0, const Vector& u0,
                                                         const Vector& spread)>;

/// One stage of f_t(x, u) = M psi(C x, u), disturbance entering through B.
struct StageModel {
  Matrix M;  // n x p
  Matrix C;  // q x n, rank n
  Matrix B;  // n x r
  int num_controls = 0;
  Basis basis;
  std::vector<std::vector<int>> sparsity;  // p sets of z indices
  std::vector<EnvelopeBuilder> envelopes;  // p builders
};

struct Dimensions {
  int n = 0;  // state
  int m = 0;  // control
  int p = 0;  // basis
  int q = 0;  // transformed state
  int r = 0;  // disturbance
};

/// Discrete-time model in nonlinear feedback form over a horizon of N >= 1
/// stages. A single stage is shared by all times (time-invariant), otherwise
/// exactly N stages are required; C_N reuses the last stage's C.
class FeedbackModel {
 public:
  FeedbackModel(std::string name, int horizon, std::vector<StageModel> stages);

  const std::string& name() const { return name_; }
  int horizon() const { return horizon_; }
  const Dimensions& dims() const { return dims_; }
  bool time_invariant() const { return stages_.size() == 1; }

  const StageModel& stage(int t) const;
  const Matrix& C(int t) const;
  const Matrix& C_pinv(int t) const;

  /// Largest sparsity set over all stages and components.
  int sparsity_degree() const;

  /// Same dynamics over a different horizon (time-invariant models only).
  FeedbackModel with_horizon(int horizon) const;

 private:
  std::string name_;
  int horizon_;
  Dimensions dims_;
  std::vector<StageModel> stages_;
  std::vector<Matrix> c_pinv_;
};

/// Nominal trajectories x^(0), u^(0), w^(0) and z^(0) = C x^(0), stacked in
/// time order; w = (w_init, w_0, ..., w_{N-1}).
struct NominalPoint {
  Vector x;
  Vector u;
  Vector w;
  Vector z;
  Vector spread;  // optional q(N+1) tube half-widths passed to envelope builders

  bool empty() const { return x.size() == 0; }
};

/// f_t(x, u) + B_t w evaluated through M_t psi_t(C_t x, u).
Vector eval_dynamics(const FeedbackModel& model, int t, const Vector& x, const Vector& u,
                     const Vector& w);

/// Central differences of psi_t in z; validation only.
Matrix basis_jacobian_fd(const FeedbackModel& model, int t, const Vector& z, const Vector& u);

/// J_psi at the nominal point of stage t.
Matrix basis_jacobian_nominal(const FeedbackModel& model, int t, const NominalPoint& nominal);

/// g_t(z, u) = psi_t(z, u) - J_psi^(0) z.
Vector residual(const FeedbackModel& model, int t, const Vector& z, const Vector& u,
                const NominalPoint& nominal);

/// J_f^(0) = M_t J_psi^(0) C_t.
Matrix jacobian_dynamics(const FeedbackModel& model, int t, const NominalPoint& nominal);

/// Envelope of residual component g_{t,k} over y = [z_I; u], anchored at the
/// nominal point.
QuadraticEnvelopeD residual_envelope(const FeedbackModel& model, int t, int k,
                                     const NominalPoint& nominal);

/// Returns the first (component, index) pair for which perturbing z_j outside
/// the declared sparsity set changes psi, or {-1, -1} when honest.
std::pair<int, int> find_sparsity_violation(const FeedbackModel& model, int t, const Vector& z,
                                            const Vector& u);

/// x' = A x + Bu u + Bw w with C = I and psi = [z; u].
FeedbackModel linear_model(const Matrix& a, const Matrix& bu, const Matrix& bw, int horizon,
                           std::string name = "linear");

/// Continuous right-hand side dx/dt = M psi(C x, u) + B w.
struct ContinuousModel {
  int num_states = 0;
  int num_controls = 0;
  Matrix C;
  Matrix M;
  Matrix B;
  Basis basis;
  std::vector<std::vector<int>> sparsity;
  std::vector<EnvelopeBuilder> envelopes;
};

/// Forward Euler: f(x, u) = x + h M psi(Cx, u). The discrete basis is
/// [z; psi_c] with M_d = [C^+, h M], and B_d = h B.
FeedbackModel discretize_euler(const ContinuousModel& rhs, double h, int horizon,
                               std::string name);

/// Unicycle with state (x1, x2, v, theta), controls (acceleration, turn rate)
/// and additive position disturbance; C = I, basis
/// {x1, x2, v, theta, v cos(theta), v sin(theta), u1, u2}. The product
/// envelopes take rho from the nominal's tube spread when one is set, and
/// fall back to `rho` otherwise.
FeedbackModel ground_vehicle_model(double h, int horizon, double rho = 1.0);

}  // namespace scr
