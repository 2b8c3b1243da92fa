#pragma once

#include <vector>

#include "scr/model.hpp"

namespace scr {

/// Stacked trajectories x = (x_0..x_N), u = (u_0..u_{N-1}) and
/// w = (w_init, w_0..w_{N-1}). The initial state is x_0 = w_init.
struct TrajectoryBundle {
  Vector x;
  Vector u;
  Vector w;
};

/// Packs (x0, w_0..w_{N-1}) into the stacked disturbance vector.
Vector stack_disturbance(const Vector& x0, const Vector& stage_w);

/// Forward simulation from x_0 = w_init. Throws naming the first stage whose
/// state is not finite.
Vector rollout(const FeedbackModel& model, const Vector& u, const Vector& w);

/// z = blkdiag(C_0..C_N) x.
Vector transform_states(const FeedbackModel& model, const Vector& x);

/// Rolls out (u, w) and records it, with z, as the linearization point.
NominalPoint make_nominal(const FeedbackModel& model, const Vector& u, const Vector& w);

/// Largest deviation between nominal.x and the rollout of (nominal.u, nominal.w).
double nominal_inconsistency(const FeedbackModel& model, const NominalPoint& nominal);

/// F(x) = (w_init - x_0, f_0(x_0, u_0) + B_0 w_0 - x_1, ...).
Vector assemble_F(const FeedbackModel& model, const TrajectoryBundle& bundle);

/// J_f(i, j) = J_f_{i-1} ... J_f_j for j < i, identity for i == j. Together
/// they form L = -J_F^{-1}, block lower triangular.
class SensitivityBlocks {
 public:
  SensitivityBlocks(const FeedbackModel& model, const NominalPoint& nominal);

  int horizon() const { return horizon_; }
  int state_dim() const { return n_; }

  /// Requires 0 <= j <= i <= N.
  const Matrix& operator()(int i, int j) const;

  /// Dense L, for tests at small N.
  Matrix dense() const;

 private:
  int horizon_;
  int n_;
  std::vector<Matrix> blocks_;  // row-major over the lower triangle
};

/// T[x]_t = J_f(t,0) w_init + sum_{tau < t} J_f(t, tau+1) (M g_tau(C x_tau, u_tau) + B w_tau).
Vector apply_T(const FeedbackModel& model, const NominalPoint& nominal,
               const SensitivityBlocks& blocks, const Vector& x, const Vector& u, const Vector& w);

/// K = [C L M; -C L M] and R = [C L B; -C L B] with
/// M = blkdiag(I_n, M_0..M_{N-1}) and B = blkdiag(I_n, B_0..B_{N-1}).
/// Columns of K follow (init, g_0..g_{N-1}); the init block of g is zero.
struct SelfMapMatrices {
  Matrix K;
  Matrix R;
  Matrix K_plus;
  Matrix K_minus;
};

SelfMapMatrices build_K_R(const FeedbackModel& model, const SensitivityBlocks& blocks);

}  // namespace scr
