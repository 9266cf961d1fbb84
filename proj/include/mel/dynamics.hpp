#pragma once

#include <memory>
#include <vector>

#include "mel/assembly.hpp"
#include "mel/gagliardo.hpp"
#include "mel/loads.hpp"
#include "mel/material.hpp"

namespace mel {

struct DynamicSettings {
  double t_end = 1.0;
  double dt = 1.0 / 64.0;
  double eps_reg = 0.0;       // saturation of the heat sources
  double newton_tol = 1e-10;
  int newton_max = 50;
  int max_halvings = 8;
  int monitor_subsample = 1;  // state stride for the estimate monitors
};

// Discrete state: coefficient blocks plus the enthalpy samples at the
// quadrature points (the evolved thermal variable) and the rates of the
// step that produced the state.
struct DynState {
  double t = 0.0;
  MatrixXd chi, v, m;  // N x d
  VectorXd zeta, mu, theta;
  VectorXd w_qp;
  MatrixXd mdot;   // backward-difference rates (zero at t = 0)
  VectorXd zdot;
  VectorXd mu_instep;  // potential used inside the step (frozen theta)
};

// Per-step bookkeeping: all increments are already integrated over the
// step (x dt where applicable) so audits just accumulate them.
struct StepRecord {
  double t0 = 0, t1 = 0, dt = 0;
  double diss_m = 0, diss_zeta = 0, diss_flux = 0;   // dt * integrals
  double boundary_mu2 = 0, boundary_mue_work = 0;    // dt * Mc * ...
  double mass_flux = 0;                              // dt * Mc int (mue-mu)
  double heat_flux_in = 0;   // dt * Kc int (theta_e_reg - theta^{n+1})
  double source_total = 0;   // dt * int of the heat sources as used
  double adiabatic = 0;      // dt * int dpsith . rates
  double work_f = 0;         // int f(t_mid) . (chi^{n+1} - chi^n)
  double work_gdot = 0;      // dt * int_Gamma gdot(t_mid) . chi_mid
  double work_hedot = 0;     // dt * int (grad chi)^T hdot_e o chi . m
  double j_min = kInf;
  int newton_mom = 0, newton_mz = 0, newton_heat = 0;
  int halvings = 0;
};

struct EnergyReport {
  double t = 0;
  double kinetic = 0, stored = 0, exchange = 0, interfacial = 0, hyper = 0;
  double thermal = 0;
  double diss_cum = 0, boundary_mu2_cum = 0;
  double work_cum = 0;        // all by-parts work terms accumulated
  double zeeman = 0, gsurf = 0;
  double residual_alpha0 = 0, residual_alpha1 = 0;
  double theta_min = 0, j_min = 0, zeta_total = 0;
  double total_energy_scale = 1.0;
};

struct MonitorRow {
  double t = 0;
  double sup_mech = 0;            // running sup of the mechanical energy
  double delta_m_sq = 0;          // int_0^t |lap m|^2
  double delta_zeta_sq = 0;
  double flux_mu_sq = 0;          // int_0^t |cof/sqrt(J) grad mu|^2
  double flux_theta_sq = 0;
  double theta_l1_sup = 0;        // sup_t int |theta|
  double grad_theta_lr = 0;       // (int_0^t int |grad theta|^r)^{1/r}
};

class DynamicProblem {
 public:
  DynamicProblem(MaterialModel model, KernelSpec kernel,
                 std::shared_ptr<const SplineSpace> space, LoadSet loads,
                 DynamicSettings settings);

  const SplineSpace& space() const { return *space_; }
  const Quadrature& quadrature() const { return *quad_; }
  const GagliardoForm& hyper_form() const { return *hyper_; }
  const MaterialModel& material() const { return model_; }
  const LoadSet& loads() const { return loads_; }
  const DynamicSettings& settings() const { return set_; }

  DynState make_initial_state(const MatrixXd& chi0, const MatrixXd& v0,
                              const MatrixXd& m0, const VectorXd& zeta0,
                              const VectorXd& theta0) const;

  // One accepted step of size dt (internally halved and recursed when an
  // update leaves the admissible set). Appends one record per sub-step.
  DynState step(const DynState& state, double dt,
                std::vector<StepRecord>& records, int depth = 0) const;

  struct Trajectory {
    std::vector<DynState> states;
    std::vector<StepRecord> records;
  };
  Trajectory run(const DynState& initial) const;

  // Weak-form residuals at a given configuration (test surfaces).
  MatrixXd residual_momentum(const MatrixXd& chi, const MatrixXd& m,
                             const VectorXd& zeta, double t) const;
  MatrixXd residual_magnetization(const MatrixXd& chi, const MatrixXd& m,
                                  const VectorXd& zeta, const VectorXd& theta,
                                  double t) const;

  // Potential from the discrete holonomic constraint at the given state;
  // out_residual (optional) returns the linear-system residual norm.
  VectorXd solve_chemical_potential(const MatrixXd& chi, const MatrixXd& m,
                                    const VectorXd& zeta,
                                    const VectorXd& theta,
                                    double t, double* out_residual = nullptr,
                                    const MatrixXd* m_rate_args = nullptr,
                                    const VectorXd* z_rate_args = nullptr,
                                    const VectorXd* th_args = nullptr) const;

  // Discrete energies of a state (mechanical items + thermal content).
  EnergyReport state_energies(const DynState& st, double t) const;

  std::vector<EnergyReport> energy_audit(const Trajectory& traj,
                                         int alpha) const;
  std::vector<MonitorRow> estimate_monitor(const Trajectory& traj) const;

  struct ThetaMin {
    double value;
    VectorXd location;
    double time;
  };
  ThetaMin nonneg_temperature_check(const Trajectory& traj) const;

  // The saturated heat-source density at one point; eps = 0 gives the
  // unregularized sources.
  static double regularized_heat_source(const MaterialModel& model,
                                        const VectorXd& m, double zeta,
                                        double theta, const VectorXd& mdot,
                                        double zdot, const MatrixXd& m_ref,
                                        const VectorXd& grad_mu, double eps);

 private:
  struct QpFields;
  void momentum_step(const DynState& s0, double dt, MatrixXd& chi_new,
                     MatrixXd& v_new, int& iters) const;
  void mz_step(const DynState& s0, const MatrixXd& chi_new, double dt,
               MatrixXd& m_new, VectorXd& zeta_new, VectorXd& mu_instep,
               int& iters) const;
  void heat_step(const DynState& s0, const MatrixXd& chi_new,
                 const MatrixXd& m_new, const VectorXd& zeta_new,
                 const VectorXd& mu_instep, double dt, VectorXd& theta_new,
                 VectorXd& w_new, StepRecord& rec, int& iters) const;

  MaterialModel model_;
  KernelSpec kernel_;
  std::shared_ptr<const SplineSpace> space_;
  LoadSet loads_;
  DynamicSettings set_;
  std::shared_ptr<Quadrature> quad_;
  std::shared_ptr<BoundaryQuadrature> bquad_;
  std::shared_ptr<GagliardoForm> hyper_;
  MatrixXd mass_, stiffness_, bmass_;  // dense copies at desk scale
  VectorXd ones_functional_;
};

}  // namespace mel
