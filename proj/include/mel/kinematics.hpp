#pragma once

#include <Eigen/Dense>

#include "mel/common.hpp"

namespace mel {

// Convention: F^{-1} = cofactor(F)^T / det(F), so d(det F)/dF = cofactor(F).

template <typename Derived>
double det_f(const Eigen::MatrixBase<Derived>& f) {
  if (f.rows() == 1) return f(0, 0);
  return f(0, 0) * f(1, 1) - f(0, 1) * f(1, 0);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
cofactor(const Eigen::MatrixBase<Derived>& f) {
  using Mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic,
                            Eigen::Dynamic>;
  if (f.rows() == 1) {
    Mat c(1, 1);
    c(0, 0) = typename Derived::Scalar(1);
    return c;
  }
  Mat c(2, 2);
  c(0, 0) = f(1, 1);
  c(0, 1) = -f(1, 0);
  c(1, 0) = -f(0, 1);
  c(1, 1) = f(0, 0);
  return c;
}

// Directional derivative of cofactor(F) along dF (exact; cofactor is linear
// in F for d = 2 and constant for d = 1).
template <typename D1, typename D2>
MatrixXd cofactor_dir(const Eigen::MatrixBase<D1>& f,
                      const Eigen::MatrixBase<D2>& df) {
  (void)f;
  if (df.rows() == 1) return MatrixXd::Zero(1, 1);
  MatrixXd c(2, 2);
  c(0, 0) = df(1, 1);
  c(0, 1) = -df(1, 0);
  c(1, 0) = -df(0, 1);
  c(1, 1) = df(0, 0);
  return c;
}

// Referential transport tensor of a spatial symmetric 2nd-order tensor:
//   T = cof(F)^T T_sp cof(F) / det(F).
// Preserves symmetry and definiteness; throws on non-positive volume ratio.
template <typename D1, typename D2>
MatrixXd pull_back_tensor(const Eigen::MatrixBase<D1>& f,
                          const Eigen::MatrixBase<D2>& t_sp) {
  double j = det_f(f);
  if (j <= 0.0)
    throw DegenerateDeformation("pull_back_tensor: det(F) <= 0");
  MatrixXd cof = cofactor(f);
  MatrixXd t = cof.transpose() * t_sp * cof / j;
  return 0.5 * (t + t.transpose());
}

}  // namespace mel
