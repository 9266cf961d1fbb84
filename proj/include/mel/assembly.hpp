#pragma once

#include <Eigen/SparseCore>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mel/spline.hpp"

namespace mel {

using SparseMat = Eigen::SparseMatrix<double>;

// Precomputed Gauss data per cell: points, weights, and basis tables for
// the local functions (values, gradients, second derivatives).
class Quadrature {
 public:
  struct Cell {
    std::vector<int> dofs;
    int offset = 0;              // global index of first point
    MatrixXd pts;                // nq x d
    VectorXd w;                  // nq
    MatrixXd N;                  // nq x nloc
    std::vector<MatrixXd> dN;    // nq entries, nloc x d
    std::vector<MatrixXd> d2N;   // nq entries, nloc x d*d
  };

  Quadrature(std::shared_ptr<const SplineSpace> space, int pts_per_axis);

  const SplineSpace& space() const { return *space_; }
  std::shared_ptr<const SplineSpace> space_ptr() const { return space_; }
  const std::vector<Cell>& cells() const { return cells_; }
  int total_points() const { return total_; }
  int pts_per_axis() const { return q_; }

  // Global flat views (point index -> data).
  const MatrixXd& points() const { return pts_; }
  const VectorXd& weights() const { return wts_; }

 private:
  std::shared_ptr<const SplineSpace> space_;
  int q_;
  std::vector<Cell> cells_;
  int total_;
  MatrixXd pts_;
  VectorXd wts_;
};

// Boundary facet quadrature over the sides in a facet tag.
class BoundaryQuadrature {
 public:
  struct Facet {
    int side;
    std::vector<int> dofs;
    MatrixXd pts;   // nq x d
    VectorXd w;     // nq (surface measure)
    MatrixXd N;     // nq x nloc
    VectorXd normal;
  };

  BoundaryQuadrature(std::shared_ptr<const SplineSpace> space,
                     const std::string& tag, int pts_per_facet);

  const std::vector<Facet>& facets() const { return facets_; }
  const SplineSpace& space() const { return *space_; }
  double measure() const;

 private:
  std::shared_ptr<const SplineSpace> space_;
  std::vector<Facet> facets_;
};

// Sampled field data at all quadrature points, flattened row-wise:
//   val:  P x r
//   grad: P x (r*d), entry (p, i*d+j)     = d u_i / dx_j
//   hess: P x (r*d*d), entry (p, i*d*d+j*d+l) = d2 u_i / dx_j dx_l
struct Samples {
  MatrixXd val, grad, hess;
};

Samples sample_field(const Quadrature& quad, const MatrixXd& coeffs,
                     int nders);

// Boundary traces (values only), one row per boundary quadrature point.
MatrixXd sample_boundary(const BoundaryQuadrature& bquad,
                         const MatrixXd& coeffs);

SparseMat mass_matrix(const Quadrature& quad);
SparseMat stiffness_matrix(const Quadrature& quad);

// Coefficient-weighted stiffness: A_ab = sum_p w_p grad(a) . T_p grad(b),
// with T_p a d x d tensor per global point (flattened row-major P x d*d).
SparseMat coeff_stiffness_matrix(const Quadrature& quad, const MatrixXd& T);

// L2 load vector: out(a, c) = sum_p w_p f(p, c) N_a(p).
MatrixXd project(const Quadrature& quad, const MatrixXd& f);

// Plain quadrature functional of sampled values (deterministic reduce).
double integrate(const Quadrature& quad, const VectorXd& f);

SparseMat boundary_mass_matrix(const BoundaryQuadrature& bquad);
MatrixXd boundary_project(const BoundaryQuadrature& bquad, const MatrixXd& f);
double boundary_integrate(const BoundaryQuadrature& bquad, const VectorXd& f);

}  // namespace mel
