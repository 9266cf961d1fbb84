#pragma once

#include <memory>
#include <vector>

#include "mel/common.hpp"
#include "mel/mesh.hpp"

namespace mel {

// Open-knot uniform B-spline basis on [a,b] with `cells` knot spans.
// Degree-p splines are C^{p-1} across knots, so degree >= 3 gives the
// C^2 conformity needed for second gradients.
class SplineBasis1D {
 public:
  SplineBasis1D(double a, double b, int cells, int degree);

  int degree() const { return p_; }
  int cells() const { return cells_; }
  int size() const { return n_; }  // number of basis functions
  double a() const { return a_; }
  double b() const { return b_; }
  double h() const { return (b_ - a_) / cells_; }

  int find_span(double x) const;

  // Non-vanishing basis functions and derivatives at x:
  // ders(k, j) = d^k/dx^k N_{span-p+j}(x), k = 0..nders, j = 0..p.
  void ders_basis(double x, int nders, int span, MatrixXd& ders) const;

  // Greville abscissae (collocation / control-point sites).
  VectorXd greville() const;

  // Uniform midpoint refinement; returns the refined basis and the
  // prolongation matrix P with coeffs_fine = P * coeffs_coarse.
  std::pair<SplineBasis1D, MatrixXd> refine_uniform() const;

  const std::vector<double>& knots() const { return knots_; }

 private:
  double a_, b_;
  int cells_, p_, n_;
  std::vector<double> knots_;
};

enum class DerivOrder { value, gradient, hessian, laplacian };

// Tensor-product scalar spline space over a box mesh. All physical fields
// share this space (vector fields use one copy per component).
class SplineSpace {
 public:
  SplineSpace(const Mesh& mesh, int degree);

  const Mesh& mesh() const { return mesh_; }
  int dim() const { return mesh_.dim(); }
  int degree() const { return degree_; }
  int size() const { return size_; }  // scalar dimension
  const SplineBasis1D& axis(int a) const { return axes_[a]; }

  int flat_index(int i0, int i1) const {
    return dim() == 1 ? i0 : i0 + axes_[0].size() * i1;
  }

  // Scatter of the (p+1)^d local functions on a cell to global indices.
  std::vector<int> cell_dofs(int c0, int c1 = 0) const;
  int local_size() const;

  // Basis values/derivatives at an arbitrary point. Rows of out_* are the
  // local functions in the same order as cell_dofs(cell_of(x)).
  //   vals:   n_loc
  //   grads:  n_loc x d
  //   hess:   n_loc x d*d   (row-major in (j,l))
  void local_basis(const VectorXd& x, int nders, std::vector<int>& dofs,
                   VectorXd& vals, MatrixXd& grads, MatrixXd& hess) const;

  // Field evaluation; coeffs is size() x rank.
  VectorXd value(const MatrixXd& coeffs, const VectorXd& x) const;
  MatrixXd gradient(const MatrixXd& coeffs, const VectorXd& x) const;
  // hess: rank x d*d, entry (r, j*d+l) = d2 u_r / dx_j dx_l
  MatrixXd hessian(const MatrixXd& coeffs, const VectorXd& x) const;
  VectorXd laplacian(const MatrixXd& coeffs, const VectorXd& x) const;

  // Interpolation by collocation at the tensor Greville grid.
  VectorXd greville_flat(int axis) const { return axes_[axis].greville(); }
  MatrixXd interpolate(
      const std::function<VectorXd(const VectorXd&)>& f, int rank) const;

  // Uniform refinement of all axes; prolongation acts on scalar
  // coefficient vectors (apply per component for vector fields).
  std::pair<std::shared_ptr<SplineSpace>, MatrixXd> refine_uniform() const;

  // Scalar dofs whose basis functions are non-zero on a boundary side.
  std::vector<int> side_dofs(int side) const;

 private:
  Mesh mesh_;
  int degree_;
  int size_;
  std::vector<SplineBasis1D> axes_;
};

// A coefficient field on a spline space. rank = 1 (scalar) or d (vector).
struct DiscreteField {
  std::shared_ptr<const SplineSpace> space;
  MatrixXd coeffs;  // size() x rank

  int rank() const { return (int)coeffs.cols(); }

  VectorXd value(const VectorXd& x) const { return space->value(coeffs, x); }
  MatrixXd gradient(const VectorXd& x) const {
    return space->gradient(coeffs, x);
  }
  MatrixXd hessian(const VectorXd& x) const {
    return space->hessian(coeffs, x);
  }
};

// Spec'd evaluation entry point with explicit derivative order; checks the
// domain and the conformity the order requires.
MatrixXd evaluate(const DiscreteField& f, const VectorXd& x, DerivOrder order);

}  // namespace mel
