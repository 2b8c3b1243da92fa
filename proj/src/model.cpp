#include "scr/model.hpp"

#include <algorithm>
#include <sstream>

namespace scr {
namespace {

std::string stage_field(int t, const std::string& field) {
  std::ostringstream out;
  out << "stage " << t << ": " << field;
  return out.str();
}

void check_size(const Vector& v, Eigen::Index expected, int t, const std::string& field) {
  if (v.size() != expected) {
    std::ostringstream out;
    out << "stage " << t << ": " << field << " has size " << v.size() << ", expected "
        << expected;
    throw Error(ErrorKind::kDimension, out.str());
  }
}

Vector segment(const Vector& v, int index, int size) { return v.segment(index * size, size); }

}  // namespace

FeedbackModel::FeedbackModel(std::string name, int horizon, std::vector<StageModel> stages)
    : name_(std::move(name)), horizon_(horizon), stages_(std::move(stages)) {
  require(horizon_ >= 1, ErrorKind::kInput, "model '" + name_ + "': horizon must be >= 1");
  require(!stages_.empty() &&
              (stages_.size() == 1 || static_cast<int>(stages_.size()) == horizon_),
          ErrorKind::kInput, "model '" + name_ + "': need one stage or one per time step");

  const StageModel& first = stages_.front();
  dims_ = {static_cast<int>(first.M.rows()), first.num_controls,
           static_cast<int>(first.M.cols()), static_cast<int>(first.C.rows()),
           static_cast<int>(first.B.cols())};
  for (std::size_t t = 0; t < stages_.size(); ++t) {
    const StageModel& s = stages_[t];
    const int ti = static_cast<int>(t);
    require(s.M.rows() == dims_.n && s.M.cols() == dims_.p, ErrorKind::kDimension,
            stage_field(ti, "M must be n x p"));
    require(s.C.rows() == dims_.q && s.C.cols() == dims_.n, ErrorKind::kDimension,
            stage_field(ti, "C must be q x n"));
    require(s.B.rows() == dims_.n && s.B.cols() == dims_.r, ErrorKind::kDimension,
            stage_field(ti, "B must be n x r"));
    require(s.num_controls == dims_.m, ErrorKind::kDimension,
            stage_field(ti, "control count differs between stages"));
    require(static_cast<int>(s.sparsity.size()) == dims_.p &&
                static_cast<int>(s.envelopes.size()) == dims_.p,
            ErrorKind::kDimension, stage_field(ti, "need one sparsity set and envelope per basis"));
    require(static_cast<bool>(s.basis.eval) && static_cast<bool>(s.basis.jacobian),
            ErrorKind::kInput, stage_field(ti, "basis evaluator missing"));
    for (const auto& set : s.sparsity) {
      require(std::is_sorted(set.begin(), set.end()) &&
                  std::adjacent_find(set.begin(), set.end()) == set.end(),
              ErrorKind::kInput, stage_field(ti, "sparsity sets must be sorted and unique"));
      for (int j : set) {
        require(j >= 0 && j < dims_.q, ErrorKind::kInput,
                stage_field(ti, "sparsity index out of range"));
      }
    }

    // Condition: z = C x is one-to-one.
    Eigen::JacobiSVD<Matrix> svd(s.C);
    const auto& sigma = svd.singularValues();
    const double largest = sigma.size() > 0 ? sigma(0) : 0.0;
    const bool full_rank = dims_.n == 0 || (sigma.size() >= dims_.n && largest > 0.0 &&
                                            sigma(dims_.n - 1) > 1e-10 * largest);
    require(full_rank, ErrorKind::kInput, stage_field(ti, "C must have rank n"));
    c_pinv_.push_back(s.C.completeOrthogonalDecomposition().pseudoInverse());
  }
}

const StageModel& FeedbackModel::stage(int t) const {
  require(t >= 0 && t < horizon_, ErrorKind::kDimension,
          "stage index " + std::to_string(t) + " outside [0, N)");
  return time_invariant() ? stages_.front() : stages_[t];
}

const Matrix& FeedbackModel::C(int t) const {
  require(t >= 0 && t <= horizon_, ErrorKind::kDimension,
          "state index " + std::to_string(t) + " outside [0, N]");
  return time_invariant() ? stages_.front().C : stages_[std::min(t, horizon_ - 1)].C;
}

const Matrix& FeedbackModel::C_pinv(int t) const {
  require(t >= 0 && t <= horizon_, ErrorKind::kDimension,
          "state index " + std::to_string(t) + " outside [0, N]");
  return time_invariant() ? c_pinv_.front() : c_pinv_[std::min(t, horizon_ - 1)];
}

int FeedbackModel::sparsity_degree() const {
  int degree = 0;
  for (const auto& s : stages_) {
    for (const auto& set : s.sparsity) degree = std::max(degree, static_cast<int>(set.size()));
  }
  return degree;
}

FeedbackModel FeedbackModel::with_horizon(int horizon) const {
  require(time_invariant(), ErrorKind::kInput,
          "model '" + name_ + "': only time-invariant models can change horizon");
  return FeedbackModel(name_, horizon, stages_);
}

Vector eval_dynamics(const FeedbackModel& model, int t, const Vector& x, const Vector& u,
                     const Vector& w) {
  const auto& d = model.dims();
  const StageModel& s = model.stage(t);
  check_size(x, d.n, t, "x");
  check_size(u, d.m, t, "u");
  check_size(w, d.r, t, "w");
  const Vector psi = s.basis.eval(s.C * x, u);
  check_size(psi, d.p, t, "basis output");
  return s.M * psi + s.B * w;
}

Matrix basis_jacobian_fd(const FeedbackModel& model, int t, const Vector& z, const Vector& u) {
  const StageModel& s = model.stage(t);
  const auto& d = model.dims();
  Matrix jac(d.p, d.q);
  for (int j = 0; j < d.q; ++j) {
    const double step = 1e-6 * (1.0 + std::abs(z(j)));
    Vector plus = z, minus = z;
    plus(j) += step;
    minus(j) -= step;
    jac.col(j) = (s.basis.eval(plus, u) - s.basis.eval(minus, u)) / (2.0 * step);
  }
  return jac;
}

Matrix basis_jacobian_nominal(const FeedbackModel& model, int t, const NominalPoint& nominal) {
  require(!nominal.empty(), ErrorKind::kInput, "no nominal point registered");
  const auto& d = model.dims();
  const Vector z0 = segment(nominal.z, t, d.q);
  const Vector u0 = segment(nominal.u, t, d.m);
  const Matrix jac = model.stage(t).basis.jacobian(z0, u0);
  require(jac.rows() == d.p && jac.cols() == d.q, ErrorKind::kDimension,
          stage_field(t, "basis Jacobian must be p x q"));
  return jac;
}

Vector residual(const FeedbackModel& model, int t, const Vector& z, const Vector& u,
                const NominalPoint& nominal) {
  require(!nominal.empty(), ErrorKind::kInput, "residual: no nominal point registered");
  const auto& d = model.dims();
  check_size(z, d.q, t, "z");
  check_size(u, d.m, t, "u");
  return model.stage(t).basis.eval(z, u) - basis_jacobian_nominal(model, t, nominal) * z;
}

Matrix jacobian_dynamics(const FeedbackModel& model, int t, const NominalPoint& nominal) {
  const StageModel& s = model.stage(t);
  return s.M * basis_jacobian_nominal(model, t, nominal) * s.C;
}

QuadraticEnvelopeD residual_envelope(const FeedbackModel& model, int t, int k,
                                     const NominalPoint& nominal) {
  require(!nominal.empty(), ErrorKind::kInput, "residual envelope: no nominal point registered");
  const auto& d = model.dims();
  const StageModel& s = model.stage(t);
  const Vector z0 = segment(nominal.z, t, d.q);
  const Vector u0 = segment(nominal.u, t, d.m);
  const auto& set = s.sparsity[k];
  const auto local = static_cast<Eigen::Index>(set.size());

  const Vector spread =
      nominal.spread.size() == nominal.z.size() ? segment(nominal.spread, t, d.q) : Vector();
  QuadraticEnvelopeD env = s.envelopes[k](z0, u0, spread);
  require(env.dim() == local + d.m, ErrorKind::kDimension,
          stage_field(t, "envelope " + std::to_string(k) + " must be over [z_I; u]"));

  const Matrix jac = basis_jacobian_nominal(model, t, nominal);
  Vector slope = Vector::Zero(local + d.m);
  for (Eigen::Index i = 0; i < local; ++i) slope(i) = jac(k, set[i]);
  return env.minus_linear(slope);
}

std::pair<int, int> find_sparsity_violation(const FeedbackModel& model, int t, const Vector& z,
                                            const Vector& u) {
  const StageModel& s = model.stage(t);
  const auto& d = model.dims();
  const Vector base = s.basis.eval(z, u);
  for (int j = 0; j < d.q; ++j) {
    Vector moved = z;
    moved(j) += 0.37 * (1.0 + std::abs(z(j)));
    const Vector psi = s.basis.eval(moved, u);
    for (int k = 0; k < d.p; ++k) {
      const auto& set = s.sparsity[k];
      if (std::binary_search(set.begin(), set.end(), j)) continue;
      if (psi(k) != base(k)) return {k, j};
    }
  }
  return {-1, -1};
}

namespace {

// Exact envelope of psi_k = e_j' y over y = [z_j; u] (identity component) or of
// u_c over y = u.
EnvelopeBuilder coordinate_envelope(int local_index, int dim) {
  return [local_index, dim](const Vector&, const Vector&, const Vector&) {
    Vector a = Vector::Zero(dim);
    a(local_index) = 1.0;
    return affine_envelope<double>(0.0, a, Vector::Zero(dim));
  };
}

}  // namespace

FeedbackModel linear_model(const Matrix& a, const Matrix& bu, const Matrix& bw, int horizon,
                           std::string name) {
  const auto n = a.rows();
  require(a.cols() == n && bu.rows() == n && bw.rows() == n, ErrorKind::kDimension,
          "linear model: A must be square and share rows with B");
  const auto m = bu.cols();
  StageModel s;
  s.M.resize(n, n + m);
  s.M << a, bu;
  s.C = Matrix::Identity(n, n);
  s.B = bw;
  s.num_controls = static_cast<int>(m);
  s.basis.eval = [n, m](const Vector& z, const Vector& u) {
    Vector psi(n + m);
    psi << z, u;
    return psi;
  };
  s.basis.jacobian = [n, m](const Vector&, const Vector&) {
    Matrix j = Matrix::Zero(n + m, n);
    j.topRows(n).setIdentity();
    return j;
  };
  for (Eigen::Index j = 0; j < n; ++j) {
    s.sparsity.push_back({static_cast<int>(j)});
    s.envelopes.push_back(coordinate_envelope(0, static_cast<int>(1 + m)));
  }
  for (Eigen::Index c = 0; c < m; ++c) {
    s.sparsity.push_back({});
    s.envelopes.push_back(coordinate_envelope(static_cast<int>(c), static_cast<int>(m)));
  }
  return FeedbackModel(std::move(name), horizon, {std::move(s)});
}

FeedbackModel discretize_euler(const ContinuousModel& rhs, double h, int horizon,
                               std::string name) {
  require(h > 0.0, ErrorKind::kInput, "Euler step must be positive");
  const int n = rhs.num_states;
  const int m = rhs.num_controls;
  const auto q = rhs.C.rows();
  const auto pc = rhs.M.cols();
  require(rhs.C.cols() == n && rhs.M.rows() == n && rhs.B.rows() == n, ErrorKind::kDimension,
          "continuous model: C, M, B must have n state rows/columns");
  require(static_cast<Eigen::Index>(rhs.sparsity.size()) == pc &&
              static_cast<Eigen::Index>(rhs.envelopes.size()) == pc,
          ErrorKind::kDimension, "continuous model: one sparsity set and envelope per basis");
  require(pc == 0 || (rhs.basis.eval && rhs.basis.jacobian), ErrorKind::kInput,
          "continuous model: basis evaluator missing");

  StageModel s;
  const Matrix c_pinv = rhs.C.completeOrthogonalDecomposition().pseudoInverse();
  s.M.resize(n, q + pc);
  s.M << c_pinv, h * rhs.M;
  s.C = rhs.C;
  s.B = h * rhs.B;
  s.num_controls = m;
  const Basis inner = rhs.basis;
  s.basis.eval = [inner, q, pc](const Vector& z, const Vector& u) {
    Vector psi(q + pc);
    psi.head(q) = z;
    if (pc > 0) psi.tail(pc) = inner.eval(z, u);
    return psi;
  };
  s.basis.jacobian = [inner, q, pc](const Vector& z, const Vector& u) {
    Matrix j(q + pc, q);
    j.topRows(q).setIdentity();
    if (pc > 0) j.bottomRows(pc) = inner.jacobian(z, u);
    return j;
  };
  for (Eigen::Index j = 0; j < q; ++j) {
    s.sparsity.push_back({static_cast<int>(j)});
    s.envelopes.push_back(coordinate_envelope(0, 1 + m));
  }
  for (Eigen::Index k = 0; k < pc; ++k) {
    s.sparsity.push_back(rhs.sparsity[k]);
    s.envelopes.push_back(rhs.envelopes[k]);
  }
  return FeedbackModel(std::move(name), horizon, {std::move(s)});
}

FeedbackModel ground_vehicle_model(double h, int horizon, double rho) {
  enum : int { kX1 = 0, kX2 = 1, kV = 2, kTheta = 3 };
  ContinuousModel rhs;
  rhs.num_states = 4;
  rhs.num_controls = 2;
  rhs.C = Matrix::Identity(4, 4);
  rhs.M = Matrix::Identity(4, 4);
  rhs.B = Matrix::Zero(4, 2);
  rhs.B.topRows(2).setIdentity();
  rhs.basis.eval = [](const Vector& z, const Vector& u) {
    Vector psi(4);
    psi << z(kV) * std::cos(z(kTheta)), z(kV) * std::sin(z(kTheta)), u(0), u(1);
    return psi;
  };
  rhs.basis.jacobian = [](const Vector& z, const Vector&) {
    const double c = std::cos(z(kTheta));
    const double s = std::sin(z(kTheta));
    Matrix j = Matrix::Zero(4, 4);
    j(0, kV) = c;
    j(0, kTheta) = -z(kV) * s;
    j(1, kV) = s;
    j(1, kTheta) = z(kV) * c;
    return j;
  };
  rhs.sparsity = {{kV, kTheta}, {kV, kTheta}, {}, {}};
  auto trig_builder = [rho](Trig trig) -> EnvelopeBuilder {
    return [rho, trig](const Vector& z0, const Vector&, const Vector& spread) {
      // rho = dtheta / dv minimizes the worst case of rho dv^2 + dtheta^2 / rho
      // over the expected box.
      double r = rho;
      if (spread.size() == 4 && spread(kV) > 1e-9 && spread(kTheta) > 1e-9) {
        r = std::clamp(spread(kTheta) / spread(kV), 1e-3, 1e3);
      }
      const auto local = product_trig_envelope<double>(z0(kV), z0(kTheta), trig, r);
      Vector anchor = Vector::Zero(4);
      anchor.head(2) = local.anchor;
      return embed(local, 4, {0, 1}, anchor);
    };
  };
  rhs.envelopes = {trig_builder(Trig::kCos), trig_builder(Trig::kSin),
                   coordinate_envelope(0, 2), coordinate_envelope(1, 2)};
  return discretize_euler(rhs, h, horizon, "ground_vehicle");
}

}  // namespace scr
