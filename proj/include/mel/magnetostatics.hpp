#pragma once

#include <functional>

#include "mel/assembly.hpp"
#include "mel/spline.hpp"

namespace mel {

// Uniform node grid on a truncation box around the deformed body; the
// scalar potential problem gets zero Dirichlet data on the box boundary.
class SpatialGrid {
 public:
  SpatialGrid(int dim, VectorXd lo, VectorXd hi, int nodes_per_axis,
              double mu0 = 1.0);

  // Square box centred on [blo, bhi] whose side is margin_factor times
  // the largest extent of that bounding box.
  static SpatialGrid around(const VectorXd& blo, const VectorXd& bhi,
                            double margin_factor, int nodes_per_axis,
                            double mu0 = 1.0);

  int dim() const { return dim_; }
  int n() const { return n_; }  // nodes per axis
  int total_nodes() const { return dim_ == 1 ? n_ : n_ * n_; }
  double h(int axis) const { return (hi_[axis] - lo_[axis]) / (n_ - 1); }
  double mu0() const { return mu0_; }
  const VectorXd& lo() const { return lo_; }
  const VectorXd& hi() const { return hi_; }

  int node_index(int i, int j = 0) const {
    return dim_ == 1 ? i : i + n_ * j;
  }
  VectorXd node(int idx) const;
  bool boundary_node(int idx) const;
  double cell_volume() const {
    return dim_ == 1 ? h(0) : h(0) * h(1);
  }

  // True when the box strictly contains [blo, bhi] with at least one
  // bounding-box diameter of clearance on every side.
  bool contains_with_margin(const VectorXd& blo, const VectorXd& bhi) const;

 private:
  int dim_, n_;
  VectorXd lo_, hi_;
  double mu0_;
};

struct PotentialSolution {
  VectorXd phi;               // node values, zero on the box boundary
  MatrixXd grad;              // central-difference gradient, nodes x d
  double energy;              // (mu0/2) sum |grad phi|^2 (edge form)
  double energy_pairing;      // (mu0/2) sum grad phi . m_bar (node form)
  int iterations;
};

// Solves  laplace(phi) = div(m_bar)  on the grid (zero Dirichlet) by
// conjugate gradients; the demagnetizing field is -grad phi.
PotentialSolution solve_scalar_potential(const SpatialGrid& grid,
                                         const MatrixXd& m_bar,
                                         double rel_tol = 1e-10,
                                         int max_iter = 100000);

struct RasterizedField {
  MatrixXd values;  // nodes x d, zero outside the rasterized image
  double image_measure;
  double mass_reference;  // int_Omega J^{-1} |F m|^2 dx
  double mass_spatial;    // sum |m_bar|^2 over hit nodes
};

// Push-forward m_bar = (F m / det F) o chi^{-1} by forward rasterization:
// nodes covered by at least one mapped sample carry the nearest sample's
// value. Throws DegenerateDeformation / NonInjective on bad deformations.
RasterizedField push_forward_magnetization(const DiscreteField& chi,
                                           const DiscreteField& m,
                                           const SpatialGrid& grid,
                                           const Quadrature& quad,
                                           int sub_per_axis = 0,
                                           double injectivity_rel_tol = 0.05);

// Referential pull-back of an applied spatial field at the quadrature
// points: rows are F^T h_sp(chi(x)).
MatrixXd pull_back_external_field(
    const DiscreteField& chi, const Quadrature& quad,
    const std::function<VectorXd(const VectorXd&)>& h_sp);

struct GapReport {
  double gap;         // int_Omega det(grad chi) dx - meas(chi(Omega))
  double volume_integral;
  double image_measure;
  double j_min;
  bool degenerate;    // det(grad chi) <= 0 somewhere
};

// Ciarlet-Necas injectivity gap via Monte-Carlo rasterization of the
// image with a fixed seed.
GapReport ciarlet_necas_gap(const DiscreteField& chi, const Quadrature& quad,
                            int n_samples = 1000000,
                            std::uint64_t seed = 20240817);

// Smooth (C2 cubic-kernel) deposition of the spatial magnetization onto
// grid nodes; differentiable in the deformation and magnetization, used
// by the static energy.
struct Deposited {
  MatrixXd m_bar;     // nodes x d
  MatrixXd sample_x;  // S x d reference sample points
  VectorXd sample_w;  // reference volume weights
};
Deposited deposit_magnetization(const DiscreteField& chi,
                                const DiscreteField& m,
                                const SpatialGrid& grid, int sub_per_cell = 4);

// Cubic deposition stencil of a spatial point: node indices, weights and
// weight gradients d w / d z.
void deposition_stencil(const SpatialGrid& grid, const VectorXd& z,
                        std::vector<int>& nodes, VectorXd& w, MatrixXd& dw);

}  // namespace mel
