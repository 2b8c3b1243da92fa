#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace scr {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Coarse classification of failures, used by the CLI to pick an exit code.
enum class ErrorKind {
  kInput,          // malformed scenario, bad argument value
  kDimension,      // array sizes inconsistent with the model
  kInfeasible,     // problem provably has no restriction at this point
  kSolver,         // backend failure or numerical breakdown
  kConfiguration,  // missing backend, unsupported option
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

/// Elementwise positive part of a dense matrix.
template <typename Derived>
auto positive_part(const Eigen::MatrixBase<Derived>& a) {
  return a.cwiseMax(typename Derived::Scalar(0));
}

/// Elementwise negative part of a dense matrix (entries <= 0).
template <typename Derived>
auto negative_part(const Eigen::MatrixBase<Derived>& a) {
  return a.cwiseMin(typename Derived::Scalar(0));
}

}  // namespace scr
