#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "mel/assembly.hpp"
#include "mel/gagliardo.hpp"
#include "mel/loads.hpp"
#include "mel/magnetostatics.hpp"
#include "mel/material.hpp"

namespace mel {

struct StaticSettings {
  int max_iters = 400;       // inner quasi-Newton iterations per round
  int al_rounds = 6;
  double tol_grad = 1e-6;    // scaled first-order tolerance
  double tol_con = 1e-8;     // equality-constraint residuals
  double tol_cn_factor = 1e-3;  // times meas(Omega)
  double cn_weight = 1e2;
  double al_rho = 10.0;
  int lbfgs_m = 10;
  bool use_demag = true;
  int grid_nodes = 96;
  double grid_margin = 4.0;
  int deposit_sub = 4;
  double cg_tol = 1e-12;
  int trace_gap_samples = 20000;
  int final_gap_samples = 1000000;
  std::uint64_t seed = 20240817;
};

struct StaticState {
  MatrixXd chi, m;   // N x d
  VectorXd zeta, s;  // N
};

struct StaticEnergyReport {
  double bulk_internal = 0;   // int of the entropy-form energy density
  double exchange = 0;        // kappa1/2 |grad m|^2
  double interfacial = 0;     // kappa2/2 |grad zeta|^2
  double hyperstress = 0;     // nonlocal quadratic form
  double magnetostatic = 0;   // (mu0/2) grad phi pairing
  double magnetostatic_edge = 0;      // (mu0/2) |grad phi|^2 cross-check
  double magnetostatic_referential = 0;  // pairing pulled back to Omega
  double load_potential = 0;  // int f . chi + int_Gamma_N g . chi
  double zeeman = 0;          // int h_e . m
  double total = 0;
};

struct StaticTraceRow {
  int iter;
  double energy, grad_norm, c_zeta, c_s, gap, j_min;
};

struct MinimizeResult {
  StaticState state;
  std::vector<StaticTraceRow> trace;
  bool converged = false;
  double lambda_zeta = 0, lambda_s = 0;  // multipliers: chemical potential
                                         // and temperature at equilibrium
  double final_gap = 0, j_min = 0;
  double energy = 0;
  int al_rounds_used = 0;
};

class StaticProblem {
 public:
  StaticProblem(MaterialModel model, KernelSpec kernel,
                std::shared_ptr<const SplineSpace> space, LoadSet loads,
                double z_tot, double s_tot, StaticSettings settings = {});

  const SplineSpace& space() const { return *space_; }
  const Quadrature& quadrature() const { return *quad_; }
  const GagliardoForm& hyper_form() const { return *hyper_; }
  const MaterialModel& material() const { return model_; }
  const SpatialGrid* grid() const { return grid_ ? &*grid_ : nullptr; }
  double z_tot() const { return z_tot_; }
  double s_tot() const { return s_tot_; }

  // Feasible reference configuration: identity deformation, zero
  // magnetization, uniform concentration and entropy at theta_ref.
  StaticState ground_state(double theta_ref) const;
  static double uniform_entropy(const MaterialModel& model, double zeta,
                                double theta_ref, int dim);

  StaticEnergyReport total_static_energy(const StaticState& st) const;

  // Physical energy and its assembled first variation (no multiplier or
  // penalty terms); gradient blocks match the state layout.
  double energy_and_gradient(const StaticState& st, StaticState* grad) const;

  MinimizeResult minimize(const StaticState& init) const;

  // Temperature reconstructed pointwise from the entropy field, at the
  // quadrature points.
  VectorXd temperature_from_entropy(const StaticState& st) const;

  double j_min(const StaticState& st) const;
  GapReport gap_report(const StaticState& st, int n_samples) const;

 private:
  struct Packed;
  double eval_physical(const StaticState& st, StaticState* grad,
                       StaticEnergyReport* rep) const;

  MaterialModel model_;
  KernelSpec kernel_;
  std::shared_ptr<const SplineSpace> space_;
  LoadSet loads_;
  double z_tot_, s_tot_;
  StaticSettings set_;
  std::shared_ptr<Quadrature> quad_;
  std::shared_ptr<BoundaryQuadrature> bquad_neumann_;
  std::shared_ptr<GagliardoForm> hyper_;
  std::optional<SpatialGrid> grid_;
  SparseMat mass_, stiffness_;
  VectorXd ones_functional_;  // int phi_a
  std::vector<int> dirichlet_dofs_;
  MatrixXd chi_dirichlet_;  // pinned coefficient values (identity map)
};

}  // namespace mel
