#pragma once

#include <vector>

#include <Eigen/SparseCore>

#include "scr/common.hpp"

namespace scr::conic::detail {

/// LDL' of a symmetric quasi-definite matrix given by its lower triangle, with
/// a fill-reducing ordering and dynamic regularization: a pivot whose sign
/// disagrees with the expected one, or whose magnitude is below `threshold`,
/// is replaced by sign * bump.
class SparseLdl {
 public:
  /// Fixes the ordering and the symbolic factor; later matrices must share
  /// the pattern (explicit zeros included).
  void analyze(const Eigen::SparseMatrix<double>& lower);

  /// signs(i) = +1 or -1 is the expected pivot sign of original row i.
  void factor(const Eigen::SparseMatrix<double>& lower, const Vector& signs,
              double threshold = 1e-13, double bump = 1e-7);

  Vector solve(const Vector& b) const;

  /// Pivots replaced in the last factorization.
  int bumped() const { return bumped_; }

 private:
  Eigen::SparseMatrix<double> permuted(const Eigen::SparseMatrix<double>& lower) const;

  int n_ = 0;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p_, pinv_;
  std::vector<int> etree_, lp_, li_;
  std::vector<double> lx_, d_inv_;
  int bumped_ = 0;
};

}  // namespace scr::conic::detail
