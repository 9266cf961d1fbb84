#pragma once

#include <functional>
#include <memory>

#include "mel/assembly.hpp"
#include "mel/kernel.hpp"
#include "mel/spline.hpp"

namespace mel {

// Flattened tensor-valued field (e.g. second gradients: len = rank d^2).
// `grad` (len x d Jacobian) is optional; finite differences are used when
// it is absent.
struct FlatTensorField {
  int len = 0;
  std::function<VectorXd(const VectorXd&)> value;
  std::function<MatrixXd(const VectorXd&)> grad;
};

// View of a discrete field's second-gradient as a flat tensor field.
FlatTensorField hessian_field(const DiscreteField& f);

// Quadrature controls for the nonlocal double integral. Cell pairs that
// share a vertex use the pair-distance (polar/graded) scheme around the
// kernel singularity; all other pairs use plain tensor Gauss points.
struct PairQuadSpec {
  int n_phi = 8;     // angular nodes per fan triangle
  int n_rad = 12;    // radial nodes (graded toward the singularity)
  int n_inner = 3;   // inner-cell Gauss nodes per axis
  int n_far = 4;     // Gauss nodes per axis for distant pairs
};

// The nonlocal quadratic form H(G) = 1/4 iint (G(x)-G(xt)) k(|x-xt|)
// (G(x)-G(xt)) dx dxt and its derived objects.
class GagliardoForm {
 public:
  GagliardoForm(const KernelSpec& kernel,
                std::shared_ptr<const SplineSpace> space,
                PairQuadSpec spec = {});

  const KernelSpec& kernel() const { return kernel_; }
  const SplineSpace& space() const { return *space_; }

  // Energy of an arbitrary evaluable field.
  double energy(const FlatTensorField& g) const;

  // Directional derivative D H(G)[Gt] (the assembled bilinear pairing).
  double energy_bilinear(const FlatTensorField& g,
                         const FlatTensorField& gt) const;

  // Energy of a spline deformation field through the assembled matrix:
  // H = 1/2 sum_i q_i^T B q_i (identical pair rule, cached).
  double energy(const DiscreteField& chi) const;

  // Per-component quadratic-form matrix B over the scalar spline space.
  const MatrixXd& matrix() const;

  // Force functional on deformation coefficients: out_i = B q_i.
  MatrixXd force_coefficients(const MatrixXd& chi_coeffs) const;

  // Pointwise nonlocal hyperstress at the quadrature points of `quad`:
  // row p = int k(|x_p - xt|) (G(x_p) - G(xt)) dxt, flattened like G.
  MatrixXd hyperstress_force(const FlatTensorField& g,
                             const Quadrature& quad) const;

  // Two-resolution self-check of the pair quadrature; throws
  // QuadratureDivergence when the refinement disagrees beyond rel_tol.
  double energy_checked(const FlatTensorField& g, double rel_tol) const;

 private:
  double pair_integral(
      const std::function<double(const VectorXd&, const VectorXd&)>& f,
      const PairQuadSpec& spec) const;

  KernelSpec kernel_;
  std::shared_ptr<const SplineSpace> space_;
  PairQuadSpec spec_;
  std::shared_ptr<Quadrature> far_quad_;
  mutable MatrixXd matrix_;
  mutable bool matrix_ready_ = false;
};

// Independent reference route for the quadratic form: plain midpoint
// double quadrature on uniform n x n sub-grids at `levels` dyadic
// refinements, Richardson-extrapolated with the empirical rate. Slow and
// deliberately unrelated to the pair-distance scheme.
double gagliardo_energy_reference(const KernelSpec& kernel,
                                  const FlatTensorField& g, const Mesh& mesh,
                                  int n_base, int levels);

// eta* = sup_{0<eta<1} (eta - C_alpha M^{alpha/d} eta^{p alpha / d}) with
// alpha = gamma - (d/2 - 1); the uniform positive lower bound on det(grad
// chi) implied by an energy bound M on the inverse-determinant integral.
double healey_kromer_eta(double c_alpha, double m_int, double p, double gamma,
                         int d);

// Minimum determinant over quadrature points and its location.
struct DetMonitor {
  double j_min;
  VectorXd location;
};
DetMonitor min_determinant_monitor(const DiscreteField& chi,
                                   const Quadrature& quad);

// Discrete Hoelder-constant estimate max |J(x)-J(y)| / |x-y|^alpha over
// point pairs (subsampled beyond `max_points`).
double estimate_holder_constant(const MatrixXd& points, const VectorXd& values,
                                double alpha, int max_points = 400);

}  // namespace mel
