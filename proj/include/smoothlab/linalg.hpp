#ifndef SMOOTHLAB_LINALG_HPP
#define SMOOTHLAB_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "smoothlab/errors.hpp"

namespace smoothlab {

/// State, observation and noise dimensions are small; the fixed upper bound
/// keeps every vector and matrix on the stack inside the ensemble loops.
inline constexpr int kMaxDim = 6;

using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

inline Vector zeros(int n) { return Vector::Zero(n); }

inline Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

inline Vector scalar_vector(double v) { return Vector::Constant(1, v); }

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Symmetrizes `m` in place and lifts negative eigenvalues to zero.
/// Returns the magnitude of the most negative eigenvalue removed (0 if none).
inline double clamp_psd(Matrix& m) {
  m = symmetrized(m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const double lowest = es.eigenvalues().minCoeff();
  if (lowest >= 0.0) return 0.0;
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  m = symmetrized(m);
  return -lowest;
}

/// Symmetric square root of a positive semidefinite matrix; tolerates
/// singular inputs (e.g. a deterministic initial state).
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
  Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Inverse guarded by a condition-number bound.
inline Matrix guarded_inverse(const Matrix& m, ErrorCode code, double max_condition = 1e12) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || !(hi / lo <= max_condition)) {
    throw Error(code, "matrix is singular or ill-conditioned (min eigenvalue " +
                          std::to_string(lo) + ")");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_LINALG_HPP
