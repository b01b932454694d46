// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_LINALG_HPP_
#define COOLDRMC_LINALG_HPP_

#include <Eigen/Dense>
#include <stdexcept>

namespace cooldrmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace linalg {

/**
 * @brief Symmetric PSD square root via eigendecomposition.
 *
 * Eigenvalues below zero are clamped to zero before taking roots, so slightly
 * indefinite inputs (from floating-point noise) are handled gracefully.
 */
inline Mat psd_sqrt(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

/// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()),
                                        Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// True when a - b is positive semidefinite up to the given tolerance,
/// i.e. b <= a in the Loewner order.
inline bool psd_leq(const Mat& b, const Mat& a, double tol) {
  return min_eigenvalue(a - b) >= -tol;
}

/// log det of a symmetric positive definite matrix; throws on failure.
inline double logdet_spd(const Mat& a) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error("logdet_spd: matrix is not positive definite");
  }
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Inverse of a small symmetric positive definite matrix.
inline Mat spd_inverse(const Mat& a) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error("spd_inverse: matrix is not positive definite");
  }
  return llt.solve(Mat::Identity(a.rows(), a.cols()));
}

}  // namespace linalg
}  // namespace cooldrmc

#endif  // COOLDRMC_LINALG_HPP_
