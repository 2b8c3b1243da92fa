#pragma once

#include <vector>

#include <Eigen/Sparse>

#include "scr/conic.hpp"

namespace scr::conic::detail {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// minimize c'x subject to A x + s = b with s in
/// {0}^zero x R+^positive x Q^soc[0] x Q^soc[1] ..., rows in that order.
struct ConeForm {
  SparseMatrix A;
  Vector b;
  Vector c;
  int zero = 0;
  int positive = 0;
  std::vector<int> soc;
  /// Set when a quadratic objective was moved into an epigraph variable,
  /// which is then the last column.
  bool epigraph = false;
  /// +1 for minimize, -1 when the program maximizes.
  double sign = 1.0;
};

/// Lowers rows, bounds and objective. Quadratic rows become rotated cones
/// balanced by Row::scale; a quadratic objective is replaced by an epigraph
/// variable and one more cone.
ConeForm lower_program(const ConicProgram& program);

}  // namespace scr::conic::detail
