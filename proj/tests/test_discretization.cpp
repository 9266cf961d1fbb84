#include <doctest.h>

#include <Eigen/Cholesky>

#include "mel/assembly.hpp"
#include "mel/mesh.hpp"
#include "mel/rng.hpp"
#include "mel/spline.hpp"

using namespace mel;

namespace {

std::shared_ptr<SplineSpace> unit_space(int dim, int cells, int degree) {
  Mesh mesh = Mesh::unit(dim, cells);
  return std::make_shared<SplineSpace>(mesh, degree);
}

}  // namespace

TEST_CASE("affine fields are reproduced exactly") {
  auto sp = unit_space(2, 4, 3);
  MatrixXd coeffs = sp->interpolate(
      [](const VectorXd& x) {
        VectorXd v(1);
        v[0] = 0.75 + 2.0 * x[0] - 1.25 * x[1];
        return v;
      },
      1);
  DiscreteField f{sp, coeffs};
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    VectorXd x(2);
    x << rng.uniform(), rng.uniform();
    MatrixXd grad = evaluate(f, x, DerivOrder::gradient);
    CHECK(grad(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(grad(0, 1) == doctest::Approx(-1.25).epsilon(1e-12));
    MatrixXd hess = evaluate(f, x, DerivOrder::hessian);
    CHECK(hess.cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("laplacian of interpolated sin(pi x) converges at x = 1/2") {
  // Second derivatives of a degree-3 interpolant converge at O(h^2).
  const double pi = M_PI;
  std::vector<double> errs;
  for (int cells : {4, 8, 16, 32}) {
    auto sp = unit_space(1, cells, 3);
    MatrixXd coeffs = sp->interpolate(
        [&](const VectorXd& x) {
          VectorXd v(1);
          v[0] = std::sin(pi * x[0]);
          return v;
        },
        1);
    DiscreteField f{sp, coeffs};
    VectorXd x(1);
    x[0] = 0.5;
    double lap = evaluate(f, x, DerivOrder::laplacian)(0, 0);
    errs.push_back(std::abs(lap + pi * pi));
  }
  for (size_t i = 1; i < errs.size(); ++i) {
    CHECK(errs[i] < errs[i - 1]);
    double order = std::log2(errs[i - 1] / errs[i]);
    CHECK(order > 1.7);
  }
}

TEST_CASE("evaluation outside the domain and unsupported orders fail") {
  auto sp = unit_space(2, 4, 3);
  DiscreteField f{sp, MatrixXd::Zero(sp->size(), 1)};
  VectorXd outside(2);
  outside << 1.5, 0.5;
  CHECK_THROWS_AS(evaluate(f, outside, DerivOrder::value), OutOfRange);

  Mesh mesh = Mesh::unit(2, 4);
  auto low = std::make_shared<SplineSpace>(mesh, 2);
  DiscreteField g{low, MatrixXd::Zero(low->size(), 1)};
  VectorXd x(2);
  x << 0.5, 0.5;
  CHECK_THROWS_AS(evaluate(g, x, DerivOrder::hessian), UnsupportedOrder);
}

TEST_CASE("mass matrix row sums are the basis integrals") {
  auto sp = unit_space(2, 4, 3);
  Quadrature quad(sp, 4);
  SparseMat mass = mass_matrix(quad);
  VectorXd row_sums = MatrixXd(mass).rowwise().sum();
  VectorXd weights =
      project(quad, MatrixXd::Ones(quad.total_points(), 1)).col(0);
  CHECK((row_sums - weights).cwiseAbs().maxCoeff() < 1e-13);
  // partition of unity: total mass is the domain measure
  CHECK(row_sums.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("1-D dirichlet energy of the identity interpolant") {
  auto sp = unit_space(1, 4, 3);
  Quadrature quad(sp, 4);
  SparseMat stiff = stiffness_matrix(quad);
  MatrixXd coeffs = sp->interpolate(
      [](const VectorXd& x) { return x; }, 1);
  double energy = coeffs.col(0).dot(stiff * coeffs.col(0));
  CHECK(energy == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mass matrix is symmetric positive definite") {
  auto sp = unit_space(2, 4, 3);
  Quadrature quad(sp, 4);
  MatrixXd mass = MatrixXd(mass_matrix(quad));
  CHECK((mass - mass.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::LLT<MatrixXd> llt(mass);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("boundary forms measure the tagged facets") {
  Mesh mesh = Mesh::unit(2, 4);
  mesh.tag("left", {0});
  mesh.tag("none", {});
  auto sp = std::make_shared<SplineSpace>(mesh, 3);

  BoundaryQuadrature all(sp, "all", 4);
  CHECK(all.measure() == doctest::Approx(4.0).epsilon(1e-12));
  SparseMat bm = boundary_mass_matrix(all);
  CHECK(MatrixXd(bm).sum() == doctest::Approx(4.0).epsilon(1e-12));

  BoundaryQuadrature left(sp, "left", 4);
  CHECK(left.measure() == doctest::Approx(1.0).epsilon(1e-12));

  BoundaryQuadrature none(sp, "none", 4);
  CHECK(none.measure() == 0.0);
  CHECK(boundary_mass_matrix(none).nonZeros() == 0);

  CHECK_THROWS_AS(BoundaryQuadrature(sp, "no-such-tag", 4), UnknownTag);
}

TEST_CASE("uniform refinement reproduces the coarse field") {
  for (int dim : {1, 2}) {
    auto sp = unit_space(dim, 4, 3);
    Rng rng(42);
    MatrixXd coeffs = rng.normal_mat(sp->size(), 1);
    auto [fine, prolong] = sp->refine_uniform();
    MatrixXd fine_coeffs = prolong * coeffs;
    DiscreteField coarse{sp, coeffs};
    DiscreteField refined{fine, fine_coeffs};
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      VectorXd x(dim);
      for (int a = 0; a < dim; ++a) x[a] = rng.uniform();
      worst = std::max(worst,
                       std::abs(coarse.value(x)[0] - refined.value(x)[0]));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("quadrature order suffices for polynomial data") {
  auto sp = unit_space(2, 4, 3);
  Rng rng(3);
  MatrixXd coeffs = rng.normal_mat(sp->size(), 1);
  Quadrature q1(sp, 4), q2(sp, 8);
  double e1 = coeffs.col(0).dot(stiffness_matrix(q1) * coeffs.col(0));
  double e2 = coeffs.col(0).dot(stiffness_matrix(q2) * coeffs.col(0));
  CHECK(std::abs(e1 - e2) < 1e-10 * (1.0 + std::abs(e1)));
  double m1 = coeffs.col(0).dot(mass_matrix(q1) * coeffs.col(0));
  double m2 = coeffs.col(0).dot(mass_matrix(q2) * coeffs.col(0));
  CHECK(std::abs(m1 - m2) < 1e-10 * (1.0 + std::abs(m1)));
}

TEST_CASE("side dofs pin exactly the boundary trace") {
  auto sp = unit_space(2, 4, 3);
  auto dofs = sp->side_dofs(0);  // x-min
  MatrixXd coeffs = MatrixXd::Zero(sp->size(), 1);
  for (int dof : dofs) coeffs(dof, 0) = 1.0;
  DiscreteField f{sp, coeffs};
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    VectorXd on(2), in(2);
    on << 0.0, rng.uniform();
    in << 0.4 + 0.2 * rng.uniform(), rng.uniform();
    CHECK(f.value(on)[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(f.value(in)[0]) < 1e-12);
  }
}

TEST_CASE("coefficient-weighted stiffness stays spd for spd tensors") {
  auto sp = unit_space(2, 3, 3);
  Quadrature quad(sp, 4);
  Rng rng(11);
  MatrixXd t(quad.total_points(), 4);
  for (int p = 0; p < quad.total_points(); ++p) {
    MatrixXd m = rng.spd_matrix(2);
    t(p, 0) = m(0, 0);
    t(p, 1) = m(0, 1);
    t(p, 2) = m(1, 0);
    t(p, 3) = m(1, 1);
  }
  MatrixXd k = MatrixXd(coeff_stiffness_matrix(quad, t));
  CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  // psd with the constant field in the kernel
  VectorXd ones = VectorXd::Ones(sp->size());
  CHECK(std::abs(ones.dot(k * ones)) < 1e-12);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
}
