#include "sparse_ldl.hpp"

#include <cmath>

#include <Eigen/OrderingMethods>

namespace scr::conic::detail {

Eigen::SparseMatrix<double> SparseLdl::permuted(const Eigen::SparseMatrix<double>& lower) const {
  Eigen::SparseMatrix<double> upper(n_, n_);
  upper.selfadjointView<Eigen::Upper>() = lower.selfadjointView<Eigen::Lower>().twistedBy(p_);
  return upper;
}

void SparseLdl::analyze(const Eigen::SparseMatrix<double>& lower) {
  n_ = static_cast<int>(lower.rows());
  Eigen::SparseMatrix<double> full(n_, n_);
  full = lower.selfadjointView<Eigen::Lower>();
  Eigen::AMDOrdering<int> amd;
  amd(full, pinv_);
  p_ = pinv_.inverse();
  const Eigen::SparseMatrix<double> upper = permuted(lower);

  // Elimination tree and column counts of L.
  etree_.assign(n_, -1);
  std::vector<int> count(n_, 0), work(n_, -1);
  for (int j = 0; j < n_; ++j) {
    work[j] = j;
    for (Eigen::SparseMatrix<double>::InnerIterator it(upper, j); it; ++it) {
      int i = static_cast<int>(it.row());
      while (i != -1 && work[i] != j) {
        if (etree_[i] == -1) etree_[i] = j;
        ++count[i];
        work[i] = j;
        i = etree_[i];
      }
    }
  }
  lp_.assign(n_ + 1, 0);
  for (int i = 0; i < n_; ++i) lp_[i + 1] = lp_[i] + count[i];
  li_.assign(lp_[n_], 0);
  lx_.assign(lp_[n_], 0.0);
  d_inv_.assign(n_, 0.0);
}

void SparseLdl::factor(const Eigen::SparseMatrix<double>& lower, const Vector& signs,
                       double threshold, double bump) {
  const Eigen::SparseMatrix<double> upper = permuted(lower);
  std::vector<double> sign(n_), y(n_, 0.0);
  for (int i = 0; i < n_; ++i) sign[p_.indices()(i)] = signs(i);
  std::vector<int> next(lp_.begin(), lp_.end() - 1), pattern, stack;
  std::vector<char> marked(n_, 0);
  bumped_ = 0;

  // Up-looking: row k of L from the k-th column of the upper triangle.
  for (int k = 0; k < n_; ++k) {
    double d = 0.0;
    pattern.clear();
    for (Eigen::SparseMatrix<double>::InnerIterator it(upper, k); it; ++it) {
      int i = static_cast<int>(it.row());
      if (i == k) {
        d = it.value();
        continue;
      }
      y[i] = it.value();
      stack.clear();
      while (i != -1 && i < k && !marked[i]) {
        marked[i] = 1;
        stack.push_back(i);
        i = etree_[i];
      }
      pattern.insert(pattern.end(), stack.rbegin(), stack.rend());
    }
    for (auto c = pattern.rbegin(); c != pattern.rend(); ++c) {
      const int col = *c;
      const double yc = y[col];
      for (int j = lp_[col]; j < next[col]; ++j) y[li_[j]] -= lx_[j] * yc;
      const double l = yc * d_inv_[col];
      li_[next[col]] = k;
      lx_[next[col]] = l;
      ++next[col];
      d -= yc * l;
      y[col] = 0.0;
      marked[col] = 0;
    }
    if (!(d * sign[k] > threshold)) {
      d = sign[k] * bump;
      ++bumped_;
    }
    d_inv_[k] = 1.0 / d;
  }
}

Vector SparseLdl::solve(const Vector& b) const {
  Vector x = p_ * b;
  for (int i = 0; i < n_; ++i) {
    for (int j = lp_[i]; j < lp_[i + 1]; ++j) x(li_[j]) -= lx_[j] * x(i);
  }
  for (int i = 0; i < n_; ++i) x(i) *= d_inv_[i];
  for (int i = n_ - 1; i >= 0; --i) {
    for (int j = lp_[i]; j < lp_[i + 1]; ++j) x(i) -= lx_[j] * x(li_[j]);
  }
  return pinv_ * x;
}

}  // namespace scr::conic::detail
