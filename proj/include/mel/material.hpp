#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mel/common.hpp"
#include "mel/kinematics.hpp"

namespace mel {

// Chemo-magneto-mechanical energy density phi(F, m, zeta). Frame
// indifference is the model's responsibility (build from C = F^T F).
class MechanicalEnergy {
 public:
  virtual ~MechanicalEnergy() = default;
  virtual double value(const MatrixXd& F, const VectorXd& m,
                       double zeta) const = 0;
  virtual MatrixXd dF(const MatrixXd& F, const VectorXd& m,
                      double zeta) const = 0;
  virtual VectorXd dm(const MatrixXd& F, const VectorXd& m,
                      double zeta) const = 0;
  virtual double dzeta(const MatrixXd& F, const VectorXd& m,
                       double zeta) const = 0;

  // Second derivatives drive the Newton solvers. Defaults are central
  // differences of the analytic first derivatives; production models
  // override with closed forms.
  virtual MatrixXd dF_dir(const MatrixXd& F, const VectorXd& m, double zeta,
                          const MatrixXd& dir) const;
  virtual MatrixXd d2m(const MatrixXd& F, const VectorXd& m,
                       double zeta) const;
  virtual VectorXd d2m_dzeta(const MatrixXd& F, const VectorXd& m,
                             double zeta) const;
  virtual double d2zeta(const MatrixXd& F, const VectorXd& m,
                        double zeta) const;
};

// Convex volumetric part xi0(J) with blow-up as J -> 0+. The split
// xi = xi0(det F) + (m,zeta)-terms is hard-wired: this type only sees J,
// so the mixed derivatives d2(J,m) xi and d2(J,zeta) xi vanish by
// construction.
class VolumetricEnergy {
 public:
  virtual ~VolumetricEnergy() = default;
  virtual double value(double J) const = 0;
  virtual double deriv(double J) const = 0;
  virtual double second(double J) const = 0;
  virtual double blowup_exponent() const = 0;  // q in xi0 >= eps/J^q
  virtual double blowup_constant() const = 0;
};

// Thermal energy psi_th(m, zeta, theta), strictly concave in theta.
class ThermalEnergy {
 public:
  virtual ~ThermalEnergy() = default;
  virtual double value(const VectorXd& m, double zeta, double theta) const = 0;
  virtual double dtheta(const VectorXd& m, double zeta,
                        double theta) const = 0;
  virtual VectorXd dm(const VectorXd& m, double zeta, double theta) const = 0;
  virtual double dzeta(const VectorXd& m, double zeta,
                       double theta) const = 0;
  // Thermal internal energy psi_th - theta d_theta psi_th, finite at
  // theta = 0; supplied analytically so the theta -> 0 limit is exact.
  virtual double e_th(const VectorXd& m, double zeta, double theta) const = 0;
  virtual double cv(const VectorXd& m, double zeta, double theta) const = 0;
  virtual VectorXd d2m_dtheta(const VectorXd& m, double zeta,
                              double theta) const;
  virtual double d2zeta_dtheta(const VectorXd& m, double zeta,
                               double theta) const;
  virtual VectorXd dm_cv(const VectorXd& m, double zeta, double theta) const;
  virtual double dzeta_cv(const VectorXd& m, double zeta, double theta) const;
  virtual MatrixXd d2m(const VectorXd& m, double zeta, double theta) const;
  virtual VectorXd d2m_dzeta(const VectorXd& m, double zeta,
                             double theta) const;
  virtual double d2zeta(const VectorXd& m, double zeta, double theta) const;
};

struct GrowthExponents {
  double p1 = 4, p2 = 4, p3 = 2, p4 = 4;
  double gamma = 0.6;
  double q_growth = 4;   // growth in |m|, |zeta| of psi
  double delta = 2;      // entropy coercivity exponent
  double q_xi = 4;       // volumetric blow-up exponent
};

// Declared constants for the sampled inequality checks.
struct AssumptionBounds {
  double cv_lower = 1e-3;
  double cv_upper = 1e3;
  double psith_m_bound = 1e2;
  double psith_zeta_bound = 1e2;
  double cross_const = 1e2;       // |d2(m,theta) psi_th| (1+theta)
  double cv_deriv_const = 1e2;    // |dm cv| (1+theta)^{1+eps}
  double cv_decay_eps = 0.05;
  double spd_floor = 1e-10;
  double xi_blowup_eps = 1e-3;
};

struct MaterialModel {
  double rho = 1.0;
  double tau1 = 0.1, tau2 = 0.1;
  double kappa1 = 0.01, kappa2 = 0.01;
  std::shared_ptr<const MechanicalEnergy> phi;
  std::shared_ptr<const VolumetricEnergy> xi0;
  std::shared_ptr<const ThermalEnergy> psith;
  std::function<MatrixXd(const VectorXd&, double, double)> M_sp;  // mobility
  std::function<MatrixXd(const VectorXd&, double, double)> K_sp;  // conduct.
  GrowthExponents exps;
  AssumptionBounds bounds;
  double psi0 = 0.0;  // bulk energy of the reference ground state
};

struct ThermalState {
  double theta;
  double s;  // entropy density, -d_theta psi
  double w;  // thermal internal energy e_th
};

// --- constitutive operations ------------------------------------------

// psi_me = phi + xi0(det F); +inf when det F <= 0.
double psi_me(const MaterialModel& mat, const MatrixXd& F, const VectorXd& m,
              double zeta);

// Full bulk density psi = psi_me + psi_th; +inf when det F <= 0.
double eval_bulk_energy(const MaterialModel& mat, const MatrixXd& F,
                        const VectorXd& m, double zeta, double theta);

// Piola stress d_F psi_me = d_F phi + xi0'(det F) cof F.
MatrixXd eval_stress(const MaterialModel& mat, const MatrixXd& F,
                     const VectorXd& m, double zeta);

// Material tangent applied to a direction (for Newton).
MatrixXd eval_stress_dir(const MaterialModel& mat, const MatrixXd& F,
                         const VectorXd& m, double zeta, const MatrixXd& dir);

ThermalState thermal_closure(const MaterialModel& mat, const VectorXd& m,
                             double zeta, double theta);

// Inverse of theta -> e_th(m, zeta, theta), safeguarded Newton on
// [0, theta_max]. Throws OutOfRange below the range of e_th.
double invert_enthalpy(const MaterialModel& mat, const VectorXd& m,
                       double zeta, double w, double tol = 1e-12,
                       double theta_max = 1e6);

// Temperature from entropy: solves -d_theta psi = s; returns 0 at the
// lower bound s_min = s(theta=0). Throws OutOfRange below s_min.
double temperature_from_entropy_point(const MaterialModel& mat,
                                      const VectorXd& m, double zeta, double s,
                                      double tol = 1e-12,
                                      double theta_max = 1e6);

// Internal energy as a function of entropy (value of the Legendre
// transform of -psi with the tangent-line extension below theta = 0):
// +inf for s < s_min, else psi(theta(s)) + theta(s) s.
double legendre_internal_energy(const MaterialModel& mat, const MatrixXd& F,
                                const VectorXd& m, double zeta, double s);

// --- sampled assumption checks ----------------------------------------

struct SampleSpec {
  int dim = 2;
  int n_theta = 40;
  double theta_max = 200.0;
  int n_m = 8;
  double m_max = 3.0;
  int n_zeta = 7;
  double zeta_max = 3.0;
  int n_F = 32;
  std::uint64_t seed = 20240817;
};

struct AssumptionCheck {
  std::string name;
  bool passed;
  double worst_margin;       // >= 0 means satisfied
  std::string worst_point;
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;
  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
  const AssumptionCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

AssumptionReport check_assumptions(const MaterialModel& mat,
                                   const SampleSpec& spec = {});

// --- bundled model -----------------------------------------------------

struct DefaultModelParams {
  double rho = 1.0;
  double mu_L = 1.0;       // quadratic Green-Lagrange stiffness
  double a_mag = 0.1;      // quartic magnetization weight
  double m4_delta = 0.1;   // saturation of the quartic term
  double alpha_c = 0.2;    // concentration stiffness
  double beta_c = 0.05;    // chemo-mechanical coupling
  double zeta_ref = 0.0;
  double c_heat = 1.0;                  // heat capacity scale
  double g0 = 0.3;                      // thermal coupling strength
  double eps_J = 0.05;                  // volumetric blow-up strength
  double tau1 = 0.1, tau2 = 0.1;
  double kappa1 = 0.01, kappa2 = 0.01;
  double mob0 = 0.1, cond0 = 0.1;       // spatial mobility/conductivity
  double gamma = 0.6;
};

MaterialModel make_default_model(const DefaultModelParams& p = {}, int dim = 2);

// Minimal test model with psi_th = -c theta (log theta - 1): s = c log
// theta, e_th = c theta, cv = c. Used by closed-form oracles.
std::shared_ptr<const ThermalEnergy> make_log_thermal(double c);

}  // namespace mel
