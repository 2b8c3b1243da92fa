#pragma once

#include <string>
#include <variant>
#include <vector>

#include "scr/common.hpp"

namespace scr {

struct Ball {
  Vector center;
  double radius = 0.0;
};

struct Box {
  Vector lower;
  Vector upper;
};

/// {y : A y <= b}.
struct Polytope {
  Matrix A;
  Vector b;
};

/// Convex obstacle over a subset of state coordinates: the set of states whose
/// coordinates `coords` lie in `shape` (a cylinder in the full state space).
struct Obstacle {
  std::string name;
  std::vector<int> coords;
  std::variant<Ball, Box, Polytope> shape;
};

/// Throws on malformed shapes (negative radius, inverted box, empty polytope)
/// or coordinates outside [0, state_dim).
void validate_obstacle(const Obstacle& obstacle, int state_dim);

/// Euclidean projection onto a shape in its own coordinates. Points inside
/// are returned unchanged.
Vector project(const Vector& point, const Ball& ball);
Vector project(const Vector& point, const Box& box);
/// Exact: enumerates active sets of size <= dim and returns the unique KKT point.
Vector project(const Vector& point, const Polytope& polytope);

/// Closest point of the obstacle to a full state vector.
Vector project_to_obstacle(const Vector& state, const Obstacle& obstacle);

/// Whether a full state lies in the obstacle (closed set, with tolerance).
bool contains(const Obstacle& obstacle, const Vector& state, double tolerance = 0.0);

}  // namespace scr
