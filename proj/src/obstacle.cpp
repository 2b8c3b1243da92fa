#include "scr/obstacle.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace scr {
namespace {

constexpr long kMaxActiveSets = 2'000'000;

Vector select(const Vector& state, const std::vector<int>& coords) {
  Vector out(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t i = 0; i < coords.size(); ++i) out(i) = state(coords[i]);
  return out;
}

Eigen::Index shape_dim(const Obstacle& obstacle) {
  return std::visit(
      [](const auto& s) -> Eigen::Index {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Ball>) return s.center.size();
        if constexpr (std::is_same_v<T, Box>) return s.lower.size();
        if constexpr (std::is_same_v<T, Polytope>) return s.A.cols();
      },
      obstacle.shape);
}

// Tries every active set of the given size, in lexicographic order. Returns
// true and writes the projection once a KKT point is found.
bool try_active_sets(const Vector& point, const Polytope& poly, int size, long& budget,
                     Vector& out) {
  const auto rows = static_cast<int>(poly.A.rows());
  const double scale = 1.0 + point.cwiseAbs().maxCoeff() + poly.b.cwiseAbs().maxCoeff();
  const double tol = 1e-10 * scale;
  std::vector<int> idx(size);
  for (int i = 0; i < size; ++i) idx[i] = i;
  while (true) {
    require(--budget > 0, ErrorKind::kConfiguration,
            "polytope projection: too many facets for exact enumeration");
    Matrix as(size, poly.A.cols());
    Vector bs(size);
    for (int i = 0; i < size; ++i) {
      as.row(i) = poly.A.row(idx[i]);
      bs(i) = poly.b(idx[i]);
    }
    Vector y = point;
    Vector lambda = Vector::Zero(size);
    bool independent = true;
    if (size > 0) {
      const Matrix gram = as * as.transpose();
      Eigen::FullPivLU<Matrix> lu(gram);
      independent = lu.rank() == size;
      if (independent) {
        lambda = lu.solve(as * point - bs);
        y = point - as.transpose() * lambda;
      }
    }
    if (independent && (lambda.array() >= -tol).all() &&
        ((poly.A * y - poly.b).array() <= tol).all()) {
      out = y;
      return true;
    }
    // Next combination.
    int i = size - 1;
    while (i >= 0 && idx[i] == rows - size + i) --i;
    if (i < 0) return false;
    ++idx[i];
    for (int j = i + 1; j < size; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace

void validate_obstacle(const Obstacle& obstacle, int state_dim) {
  const std::string who = "obstacle '" + obstacle.name + "': ";
  require(!obstacle.coords.empty(), ErrorKind::kInput, who + "needs at least one coordinate");
  std::set<int> seen;
  for (int c : obstacle.coords) {
    require(c >= 0 && c < state_dim, ErrorKind::kInput, who + "coordinate out of range");
    require(seen.insert(c).second, ErrorKind::kInput, who + "repeated coordinate");
  }
  require(shape_dim(obstacle) == static_cast<Eigen::Index>(obstacle.coords.size()),
          ErrorKind::kInput, who + "shape dimension does not match coords");
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Ball>) {
          require(std::isfinite(s.radius) && s.radius >= 0.0, ErrorKind::kInput,
                  who + "radius must be nonnegative");
          require(s.center.allFinite(), ErrorKind::kInput, who + "center must be finite");
        } else if constexpr (std::is_same_v<T, Box>) {
          require(s.upper.size() == s.lower.size(), ErrorKind::kInput,
                  who + "box bounds differ in size");
          require(s.lower.allFinite() && s.upper.allFinite() &&
                      (s.lower.array() <= s.upper.array()).all(),
                  ErrorKind::kInput, who + "box needs finite lower <= upper");
        } else {
          require(s.A.rows() == s.b.size() && s.A.rows() > 0, ErrorKind::kInput,
                  who + "polytope needs A rows matching b");
          require(s.A.allFinite() && s.b.allFinite(), ErrorKind::kInput,
                  who + "polytope data must be finite");
          project(Vector::Zero(s.A.cols()), s);  // throws when empty
        }
      },
      obstacle.shape);
}

Vector project(const Vector& point, const Ball& ball) {
  const Vector offset = point - ball.center;
  const double dist = offset.norm();
  if (dist <= ball.radius) return point;
  return ball.center + (ball.radius / dist) * offset;
}

Vector project(const Vector& point, const Box& box) {
  return point.cwiseMax(box.lower).cwiseMin(box.upper);
}

Vector project(const Vector& point, const Polytope& polytope) {
  const auto dim = static_cast<int>(polytope.A.cols());
  const auto rows = static_cast<int>(polytope.A.rows());
  long budget = kMaxActiveSets;
  Vector out;
  for (int size = 0; size <= std::min(dim, rows); ++size) {
    if (try_active_sets(point, polytope, size, budget, out)) return out;
  }
  throw Error(ErrorKind::kInput, "polytope projection: polytope is empty");
}

Vector project_to_obstacle(const Vector& state, const Obstacle& obstacle) {
  const Vector local = select(state, obstacle.coords);
  const Vector projected = std::visit([&](const auto& s) { return project(local, s); },
                                      obstacle.shape);
  Vector out = state;
  for (std::size_t i = 0; i < obstacle.coords.size(); ++i) out(obstacle.coords[i]) = projected(i);
  return out;
}

bool contains(const Obstacle& obstacle, const Vector& state, double tolerance) {
  const Vector local = select(state, obstacle.coords);
  return std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Ball>) {
          return (local - s.center).norm() <= s.radius + tolerance;
        } else if constexpr (std::is_same_v<T, Box>) {
          return (local.array() >= s.lower.array() - tolerance).all() &&
                 (local.array() <= s.upper.array() + tolerance).all();
        } else {
          return ((s.A * local - s.b).array() <= tolerance).all();
        }
      },
      obstacle.shape);
}

}  // namespace scr
