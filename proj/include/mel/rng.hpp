#pragma once

#include <cstdint>
#include <random>

#include "mel/common.hpp"

namespace mel {

// Seeded generator with portable distributions (the standard library's
// distribution objects are implementation-defined bit-for-bit).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {  // in [0,1)
    return (eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(6.283185307179586476925286766559 * u2);
    have_spare_ = true;
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  VectorXd uniform_vec(int n, double a, double b) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(a, b);
    return v;
  }

  VectorXd normal_vec(int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  MatrixXd normal_mat(int r, int c) {
    MatrixXd m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }

  // Random rotation in SO(d), d in {1,2}.
  MatrixXd rotation(int d) {
    if (d == 1) return MatrixXd::Identity(1, 1);
    double a = uniform(0.0, 6.283185307179586476925286766559);
    MatrixXd q(2, 2);
    q << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return q;
  }

  // Random deformation gradient with positive determinant: rotation times
  // a shifted symmetric part, retried until det exceeds the floor.
  MatrixXd deformation_gradient(int d, double spread = 0.3,
                                double det_floor = 0.2) {
    for (;;) {
      MatrixXd f = MatrixXd::Identity(d, d) + spread * normal_mat(d, d);
      if (f.determinant() > det_floor) return f;
    }
  }

  MatrixXd spd_matrix(int d, double spread = 0.5) {
    MatrixXd a = normal_mat(d, d) * spread;
    return MatrixXd::Identity(d, d) + a * a.transpose();
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mel
