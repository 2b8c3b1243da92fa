#include "scr/trajectory.hpp"

namespace scr {
namespace {

void check_bundle_sizes(const FeedbackModel& model, const Vector* x, const Vector& u,
                        const Vector& w) {
  const auto& d = model.dims();
  const int N = model.horizon();
  require(u.size() == d.m * N, ErrorKind::kDimension,
          "u has size " + std::to_string(u.size()) + ", expected " + std::to_string(d.m * N));
  require(w.size() == d.n + d.r * N, ErrorKind::kDimension,
          "w has size " + std::to_string(w.size()) + ", expected " +
              std::to_string(d.n + d.r * N));
  if (x != nullptr) {
    require(x->size() == d.n * (N + 1), ErrorKind::kDimension,
            "x has size " + std::to_string(x->size()) + ", expected " +
                std::to_string(d.n * (N + 1)));
  }
}

}  // namespace

Vector stack_disturbance(const Vector& x0, const Vector& stage_w) {
  Vector w(x0.size() + stage_w.size());
  w << x0, stage_w;
  return w;
}

Vector rollout(const FeedbackModel& model, const Vector& u, const Vector& w) {
  check_bundle_sizes(model, nullptr, u, w);
  const auto& d = model.dims();
  const int N = model.horizon();
  Vector x(d.n * (N + 1));
  x.head(d.n) = w.head(d.n);
  require(x.head(d.n).allFinite(), ErrorKind::kInput, "rollout: initial state is not finite");
  for (int t = 0; t < N; ++t) {
    x.segment((t + 1) * d.n, d.n) =
        eval_dynamics(model, t, x.segment(t * d.n, d.n), u.segment(t * d.m, d.m),
                      w.segment(d.n + t * d.r, d.r));
    if (!x.segment((t + 1) * d.n, d.n).allFinite()) {
      throw Error(ErrorKind::kInput,
                  "rollout: state became non-finite at stage " + std::to_string(t + 1));
    }
  }
  return x;
}

Vector transform_states(const FeedbackModel& model, const Vector& x) {
  const auto& d = model.dims();
  const int N = model.horizon();
  require(x.size() == d.n * (N + 1), ErrorKind::kDimension, "transform: x has wrong size");
  Vector z(d.q * (N + 1));
  for (int t = 0; t <= N; ++t) z.segment(t * d.q, d.q) = model.C(t) * x.segment(t * d.n, d.n);
  return z;
}

NominalPoint make_nominal(const FeedbackModel& model, const Vector& u, const Vector& w) {
  NominalPoint nominal;
  nominal.x = rollout(model, u, w);
  nominal.u = u;
  nominal.w = w;
  nominal.z = transform_states(model, nominal.x);
  return nominal;
}

double nominal_inconsistency(const FeedbackModel& model, const NominalPoint& nominal) {
  require(!nominal.empty(), ErrorKind::kInput, "no nominal point registered");
  const Vector x = rollout(model, nominal.u, nominal.w);
  return (x - nominal.x).cwiseAbs().maxCoeff();
}

Vector assemble_F(const FeedbackModel& model, const TrajectoryBundle& bundle) {
  check_bundle_sizes(model, &bundle.x, bundle.u, bundle.w);
  const auto& d = model.dims();
  const int N = model.horizon();
  Vector f(d.n * (N + 1));
  f.head(d.n) = bundle.w.head(d.n) - bundle.x.head(d.n);
  for (int t = 0; t < N; ++t) {
    f.segment((t + 1) * d.n, d.n) =
        eval_dynamics(model, t, bundle.x.segment(t * d.n, d.n), bundle.u.segment(t * d.m, d.m),
                      bundle.w.segment(d.n + t * d.r, d.r)) -
        bundle.x.segment((t + 1) * d.n, d.n);
  }
  return f;
}

SensitivityBlocks::SensitivityBlocks(const FeedbackModel& model, const NominalPoint& nominal)
    : horizon_(model.horizon()), n_(model.dims().n) {
  require(!nominal.empty(), ErrorKind::kInput, "sensitivity blocks: no nominal point registered");
  blocks_.reserve(static_cast<std::size_t>(horizon_ + 1) * (horizon_ + 2) / 2);
  std::vector<Matrix> jf;
  jf.reserve(horizon_);
  for (int t = 0; t < horizon_; ++t) jf.push_back(jacobian_dynamics(model, t, nominal));
  // Row i: J(i, j) = J_f_{i-1} J(i-1, j), accumulated in increasing time.
  for (int i = 0; i <= horizon_; ++i) {
    for (int j = 0; j < i; ++j) blocks_.push_back(jf[i - 1] * (*this)(i - 1, j));
    blocks_.push_back(Matrix::Identity(n_, n_));
  }
}

const Matrix& SensitivityBlocks::operator()(int i, int j) const {
  require(j >= 0 && j <= i && i <= horizon_, ErrorKind::kDimension,
          "sensitivity block (" + std::to_string(i) + ", " + std::to_string(j) +
              ") outside the lower triangle");
  return blocks_[static_cast<std::size_t>(i) * (i + 1) / 2 + j];
}

Matrix SensitivityBlocks::dense() const {
  Matrix l = Matrix::Zero(n_ * (horizon_ + 1), n_ * (horizon_ + 1));
  for (int i = 0; i <= horizon_; ++i) {
    for (int j = 0; j <= i; ++j) l.block(i * n_, j * n_, n_, n_) = (*this)(i, j);
  }
  return l;
}

Vector apply_T(const FeedbackModel& model, const NominalPoint& nominal,
               const SensitivityBlocks& blocks, const Vector& x, const Vector& u, const Vector& w) {
  check_bundle_sizes(model, &x, u, w);
  const auto& d = model.dims();
  const int N = model.horizon();

  // Forcing term per state index: e_0 = w_init, e_{t+1} = M g_t + B w_t.
  std::vector<Vector> forcing;
  forcing.reserve(N + 1);
  forcing.push_back(w.head(d.n));
  for (int t = 0; t < N; ++t) {
    const StageModel& s = model.stage(t);
    const Vector z = s.C * x.segment(t * d.n, d.n);
    forcing.push_back(s.M * residual(model, t, z, u.segment(t * d.m, d.m), nominal) +
                      s.B * w.segment(d.n + t * d.r, d.r));
  }
  Vector out = Vector::Zero(d.n * (N + 1));
  for (int i = 0; i <= N; ++i) {
    for (int j = 0; j <= i; ++j) out.segment(i * d.n, d.n) += blocks(i, j) * forcing[j];
  }
  return out;
}

SelfMapMatrices build_K_R(const FeedbackModel& model, const SensitivityBlocks& blocks) {
  const auto& d = model.dims();
  const int N = model.horizon();
  require(blocks.horizon() == N && blocks.state_dim() == d.n, ErrorKind::kDimension,
          "K/R: sensitivity blocks do not match the model");
  const int rows = d.q * (N + 1);
  Matrix clm = Matrix::Zero(rows, d.n + d.p * N);
  Matrix clb = Matrix::Zero(rows, d.n + d.r * N);
  for (int i = 0; i <= N; ++i) {
    const Matrix& c = model.C(i);
    clm.block(i * d.q, 0, d.q, d.n) = c * blocks(i, 0);
    clb.block(i * d.q, 0, d.q, d.n) = c * blocks(i, 0);
    for (int tau = 0; tau < i; ++tau) {
      const StageModel& s = model.stage(tau);
      const Matrix cl = c * blocks(i, tau + 1);
      clm.block(i * d.q, d.n + tau * d.p, d.q, d.p) = cl * s.M;
      clb.block(i * d.q, d.n + tau * d.r, d.q, d.r) = cl * s.B;
    }
  }
  SelfMapMatrices out;
  out.K.resize(2 * rows, clm.cols());
  out.K << clm, -clm;
  out.R.resize(2 * rows, clb.cols());
  out.R << clb, -clb;
  out.K_plus = positive_part(out.K);
  out.K_minus = negative_part(out.K);
  return out;
}

}  // namespace scr
