#include "mel/material.hpp"

#include <cmath>
#include <sstream>

#include "mel/rng.hpp"

namespace mel {

namespace {
constexpr double kFdStep = 1e-6;
}

MatrixXd MechanicalEnergy::dF_dir(const MatrixXd& F, const VectorXd& m,
                                  double zeta, const MatrixXd& dir) const {
  double h = kFdStep * (1.0 + F.norm());
  return (dF(F + h * dir, m, zeta) - dF(F - h * dir, m, zeta)) / (2.0 * h);
}

MatrixXd MechanicalEnergy::d2m(const MatrixXd& F, const VectorXd& m,
                               double zeta) const {
  int d = (int)m.size();
  MatrixXd out(d, d);
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(d);
    e[j] = kFdStep * (1.0 + m.norm());
    out.col(j) = (dm(F, m + e, zeta) - dm(F, m - e, zeta)) / (2.0 * e[j]);
  }
  return 0.5 * (out + out.transpose());
}

VectorXd MechanicalEnergy::d2m_dzeta(const MatrixXd& F, const VectorXd& m,
                                     double zeta) const {
  double h = kFdStep * (1.0 + std::abs(zeta));
  return (dm(F, m, zeta + h) - dm(F, m, zeta - h)) / (2.0 * h);
}

double MechanicalEnergy::d2zeta(const MatrixXd& F, const VectorXd& m,
                                double zeta) const {
  double h = kFdStep * (1.0 + std::abs(zeta));
  return (dzeta(F, m, zeta + h) - dzeta(F, m, zeta - h)) / (2.0 * h);
}

VectorXd ThermalEnergy::d2m_dtheta(const VectorXd& m, double zeta,
                                   double theta) const {
  double h = kFdStep * (1.0 + theta);
  return (dm(m, zeta, theta + h) - dm(m, zeta, std::max(0.0, theta - h))) /
         (theta - h >= 0.0 ? 2.0 * h : h);
}

double ThermalEnergy::d2zeta_dtheta(const VectorXd& m, double zeta,
                                    double theta) const {
  double h = kFdStep * (1.0 + theta);
  return (dzeta(m, zeta, theta + h) - dzeta(m, zeta, std::max(0.0, theta - h))) /
         (theta - h >= 0.0 ? 2.0 * h : h);
}

VectorXd ThermalEnergy::dm_cv(const VectorXd& m, double zeta,
                              double theta) const {
  int d = (int)m.size();
  VectorXd out(d);
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(d);
    e[j] = kFdStep * (1.0 + m.norm());
    out[j] = (cv(m + e, zeta, theta) - cv(m - e, zeta, theta)) / (2.0 * e[j]);
  }
  return out;
}

double ThermalEnergy::dzeta_cv(const VectorXd& m, double zeta,
                               double theta) const {
  double h = kFdStep * (1.0 + std::abs(zeta));
  return (cv(m, zeta + h, theta) - cv(m, zeta - h, theta)) / (2.0 * h);
}

MatrixXd ThermalEnergy::d2m(const VectorXd& m, double zeta,
                            double theta) const {
  int d = (int)m.size();
  MatrixXd out(d, d);
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(d);
    e[j] = kFdStep * (1.0 + m.norm());
    out.col(j) = (dm(m + e, zeta, theta) - dm(m - e, zeta, theta)) /
                 (2.0 * e[j]);
  }
  return 0.5 * (out + out.transpose());
}

VectorXd ThermalEnergy::d2m_dzeta(const VectorXd& m, double zeta,
                                  double theta) const {
  double h = kFdStep * (1.0 + std::abs(zeta));
  return (dm(m, zeta + h, theta) - dm(m, zeta - h, theta)) / (2.0 * h);
}

double ThermalEnergy::d2zeta(const VectorXd& m, double zeta,
                             double theta) const {
  double h = kFdStep * (1.0 + std::abs(zeta));
  return (dzeta(m, zeta + h, theta) - dzeta(m, zeta - h, theta)) / (2.0 * h);
}

// --- operations ---------------------------------------------------------

double psi_me(const MaterialModel& mat, const MatrixXd& F, const VectorXd& m,
              double zeta) {
  double j = det_f(F);
  if (j <= 0.0) return kInf;
  return mat.phi->value(F, m, zeta) + mat.xi0->value(j);
}

double eval_bulk_energy(const MaterialModel& mat, const MatrixXd& F,
                        const VectorXd& m, double zeta, double theta) {
  double me = psi_me(mat, F, m, zeta);
  if (!std::isfinite(me)) return kInf;
  return me + mat.psith->value(m, zeta, theta);
}

MatrixXd eval_stress(const MaterialModel& mat, const MatrixXd& F,
                     const VectorXd& m, double zeta) {
  double j = det_f(F);
  if (j <= 0.0) throw DegenerateDeformation("eval_stress: det(F) <= 0");
  return mat.phi->dF(F, m, zeta) + mat.xi0->deriv(j) * cofactor(F);
}

MatrixXd eval_stress_dir(const MaterialModel& mat, const MatrixXd& F,
                         const VectorXd& m, double zeta, const MatrixXd& dir) {
  double j = det_f(F);
  MatrixXd cof = cofactor(F);
  double dj = (cof.array() * dir.array()).sum();
  return mat.phi->dF_dir(F, m, zeta, dir) +
         mat.xi0->second(j) * dj * cof +
         mat.xi0->deriv(j) * cofactor_dir(F, dir);
}

ThermalState thermal_closure(const MaterialModel& mat, const VectorXd& m,
                             double zeta, double theta) {
  ThermalState st;
  st.theta = theta;
  st.s = -mat.psith->dtheta(m, zeta, theta);
  st.w = mat.psith->e_th(m, zeta, theta);
  return st;
}

namespace {

// Safeguarded Newton for strictly increasing f on [0, hi]; returns x with
// |f(x) - target| <= tol.
template <typename Fn, typename Dn>
double monotone_solve(Fn f, Dn fprime, double target, double hi, double tol,
                      const char* what) {
  double lo = 0.0;
  double flo = f(lo);
  if (flo >= target) return 0.0;
  double fhi = f(hi);
  if (fhi < target)
    throw SolverDivergence(std::string(what) + ": target above range cap");
  double x = std::min(hi, std::max(1e-8, target > 0 ? target : 1.0));
  for (int it = 0; it < 200; ++it) {
    double fx = f(x);
    if (std::abs(fx - target) <= tol) return x;
    if (fx < target)
      lo = x;
    else
      hi = x;
    double dp = fprime(x);
    double step = dp > 0.0 ? (target - fx) / dp : 0.0;
    double xn = x + step;
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    x = xn;
  }
  throw SolverDivergence(std::string(what) + ": no convergence");
}

}  // namespace

double invert_enthalpy(const MaterialModel& mat, const VectorXd& m,
                       double zeta, double w, double tol, double theta_max) {
  const auto& th = *mat.psith;
  double scaled_tol = tol * (1.0 + std::abs(w));
  double w0 = th.e_th(m, zeta, 0.0);
  if (w < w0 - scaled_tol)
    throw OutOfRange("invert_enthalpy: w below e_th(m, zeta, 0)");
  if (w <= w0) return 0.0;
  return monotone_solve([&](double t) { return th.e_th(m, zeta, t); },
                        [&](double t) { return th.cv(m, zeta, t); }, w,
                        theta_max, scaled_tol, "invert_enthalpy");
}

double temperature_from_entropy_point(const MaterialModel& mat,
                                      const VectorXd& m, double zeta, double s,
                                      double tol, double theta_max) {
  const auto& th = *mat.psith;
  double scaled_tol = tol * (1.0 + std::abs(s));
  double s_min = -th.dtheta(m, zeta, 0.0);
  if (s < s_min - scaled_tol)
    throw OutOfRange("temperature_from_entropy: s below s_min");
  if (s <= s_min) return 0.0;
  // s(theta) = -d_theta psi_th, s'(theta) = cv / theta.
  return monotone_solve(
      [&](double t) { return -th.dtheta(m, zeta, t); },
      [&](double t) { return t > 0 ? th.cv(m, zeta, t) / t : kInf; }, s,
      theta_max, scaled_tol, "temperature_from_entropy");
}

double legendre_internal_energy(const MaterialModel& mat, const MatrixXd& F,
                                const VectorXd& m, double zeta, double s) {
  double me = psi_me(mat, F, m, zeta);
  if (!std::isfinite(me)) return kInf;
  double s_min = -mat.psith->dtheta(m, zeta, 0.0);
  if (s < s_min) return kInf;
  double theta;
  try {
    theta = temperature_from_entropy_point(mat, m, zeta, s);
  } catch (const OutOfRange&) {
    return kInf;
  }
  return me + mat.psith->value(m, zeta, theta) + theta * s;
}

// --- assumption checker ---------------------------------------------------

namespace {

struct Worst {
  double margin = kInf;
  std::string where;
  void update(double margin_val, const std::string& desc) {
    if (margin_val < margin) {
      margin = margin_val;
      where = desc;
    }
  }
};

std::string point_desc(double theta, const VectorXd& m, double zeta) {
  std::ostringstream os;
  os << "theta=" << theta << " |m|=" << m.norm() << " zeta=" << zeta;
  return os.str();
}

}  // namespace

AssumptionReport check_assumptions(const MaterialModel& mat,
                                   const SampleSpec& spec) {
  AssumptionReport rep;
  const auto& th = *mat.psith;
  const auto& bd = mat.bounds;
  Rng rng(spec.seed);

  std::vector<double> thetas{0.0};
  for (int i = 1; i <= spec.n_theta; ++i)
    thetas.push_back(spec.theta_max *
                     std::pow((double)i / spec.n_theta, 3.0));
  std::vector<VectorXd> ms;
  for (int i = 0; i < spec.n_m; ++i) {
    VectorXd m = rng.normal_vec(spec.dim);
    if (m.norm() > 0) m *= rng.uniform(0.0, spec.m_max) / m.norm();
    ms.push_back(m);
  }
  ms.push_back(VectorXd::Zero(spec.dim));
  std::vector<double> zetas;
  for (int i = 0; i < spec.n_zeta; ++i)
    zetas.push_back(-spec.zeta_max +
                    2.0 * spec.zeta_max * i / (spec.n_zeta - 1.0));

  Worst w_cv_lo, w_cv_hi, w_dm, w_dz, w_cross_m, w_cross_z, w_cvm, w_cvz,
      w_mob, w_cond, w_diss;
  for (const auto& m : ms)
    for (double z : zetas)
      for (double t : thetas) {
        std::string at = point_desc(t, m, z);
        double cv = th.cv(m, z, t);
        w_cv_lo.update(cv - bd.cv_lower, at);
        w_cv_hi.update(bd.cv_upper - cv, at);
        w_dm.update(bd.psith_m_bound - th.dm(m, z, t).norm(), at);
        w_dz.update(bd.psith_zeta_bound - std::abs(th.dzeta(m, z, t)), at);
        double decay1 = 1.0 + t;
        w_cross_m.update(
            bd.cross_const - th.d2m_dtheta(m, z, t).norm() * decay1, at);
        w_cross_z.update(
            bd.cross_const - std::abs(th.d2zeta_dtheta(m, z, t)) * decay1, at);
        double decay2 = std::pow(1.0 + t, 1.0 + bd.cv_decay_eps);
        w_cvm.update(bd.cv_deriv_const - th.dm_cv(m, z, t).norm() * decay2,
                     at);
        w_cvz.update(
            bd.cv_deriv_const - std::abs(th.dzeta_cv(m, z, t)) * decay2, at);
        Eigen::SelfAdjointEigenSolver<MatrixXd> em(mat.M_sp(m, z, t));
        Eigen::SelfAdjointEigenSolver<MatrixXd> ek(mat.K_sp(m, z, t));
        w_mob.update(em.eigenvalues().minCoeff() - bd.spd_floor, at);
        w_cond.update(ek.eigenvalues().minCoeff() - bd.spd_floor, at);
        // dissipation rate for random rates/gradients at this sample
        VectorXd mdot = rng.normal_vec(spec.dim);
        double zdot = rng.normal();
        VectorXd gmu = rng.normal_vec(spec.dim);
        VectorXd gth = rng.normal_vec(spec.dim);
        double diss = mat.tau1 * mdot.squaredNorm() + mat.tau2 * zdot * zdot +
                      gmu.dot(mat.M_sp(m, z, t) * gmu) +
                      gth.dot(mat.K_sp(m, z, t) * gth);
        w_diss.update(diss + 1e-14, at);
      }

  auto add = [&](const std::string& name, const Worst& w) {
    rep.checks.push_back({name, w.margin >= 0.0, w.margin, w.where});
  };
  add("entropy-concavity", w_cv_lo);  // cv > 0 <=> -d2_theta psi > 0
  add("cv-upper-bound", w_cv_hi);
  add("psith-dm-bounded", w_dm);
  add("psith-dzeta-bounded", w_dz);
  add("psith-cross-decay-m", w_cross_m);
  add("psith-cross-decay-zeta", w_cross_z);
  add("cv-derivative-decay-m", w_cvm);
  add("cv-derivative-decay-zeta", w_cvz);
  add("mobility-spd", w_mob);
  add("conductivity-spd", w_cond);
  add("dissipation-nonnegative", w_diss);

  // Volumetric blow-up: xi0(J) J^q >= eps on a grid reaching toward 0.
  Worst w_xi, w_xi_inf;
  for (int i = 1; i <= 200; ++i) {
    double jdet = 2.0 * std::pow((double)i / 200.0, 4.0);
    double q = mat.xi0->blowup_exponent();
    std::ostringstream os;
    os << "J=" << jdet;
    w_xi.update(mat.xi0->value(jdet) * std::pow(jdet, q) - bd.xi_blowup_eps,
                os.str());
  }
  add("xi-blowup-rate", w_xi);
  {
    MatrixXd bad = MatrixXd::Identity(spec.dim, spec.dim);
    bad(0, 0) = -1.0;  // det <= 0
    double v =
        eval_bulk_energy(mat, bad, VectorXd::Zero(spec.dim), 0.0, 1.0);
    w_xi_inf.update(std::isinf(v) && v > 0 ? 1.0 : -1.0, "det F = -1");
    add("xi-infinite-on-nonpositive-det", w_xi_inf);
  }
  {
    Worst w_tau;
    w_tau.update(std::min(mat.tau1, mat.tau2), "relaxation times");
    add("relaxation-nonnegative", w_tau);
  }
  return rep;
}

// --- bundled model --------------------------------------------------------

namespace {

// phi = mu/4 |C - I|^2 + a/2 |m|^4/(1 + delta |m|^2)
//       + alpha (zeta - zref)^2 + beta (zeta - zref) tr(C - I)
class DefaultMechanical final : public MechanicalEnergy {
 public:
  DefaultMechanical(const DefaultModelParams& p) : p_(p) {}

  double value(const MatrixXd& F, const VectorXd& m,
               double zeta) const override {
    MatrixXd cmi = F.transpose() * F - MatrixXd::Identity(F.rows(), F.cols());
    double s = m.squaredNorm();
    double dz = zeta - p_.zeta_ref;
    return 0.25 * p_.mu_L * cmi.squaredNorm() +
           0.5 * p_.a_mag * s * s / (1.0 + p_.m4_delta * s) +
           p_.alpha_c * dz * dz + p_.beta_c * dz * cmi.trace();
  }

  MatrixXd dF(const MatrixXd& F, const VectorXd& m,
              double zeta) const override {
    (void)m;
    MatrixXd cmi = F.transpose() * F - MatrixXd::Identity(F.rows(), F.cols());
    return p_.mu_L * F * cmi + 2.0 * p_.beta_c * (zeta - p_.zeta_ref) * F;
  }

  VectorXd dm(const MatrixXd& F, const VectorXd& m,
              double zeta) const override {
    (void)F;
    (void)zeta;
    double s = m.squaredNorm();
    return p_.a_mag * quartic_slope(s) * m;
  }

  double dzeta(const MatrixXd& F, const VectorXd& m,
               double zeta) const override {
    (void)m;
    MatrixXd cmi = F.transpose() * F - MatrixXd::Identity(F.rows(), F.cols());
    return 2.0 * p_.alpha_c * (zeta - p_.zeta_ref) + p_.beta_c * cmi.trace();
  }

  MatrixXd dF_dir(const MatrixXd& F, const VectorXd& m, double zeta,
                  const MatrixXd& dir) const override {
    (void)m;
    MatrixXd cmi = F.transpose() * F - MatrixXd::Identity(F.rows(), F.cols());
    MatrixXd dc = dir.transpose() * F + F.transpose() * dir;
    return p_.mu_L * (dir * cmi + F * dc) +
           2.0 * p_.beta_c * (zeta - p_.zeta_ref) * dir;
  }

  MatrixXd d2m(const MatrixXd& F, const VectorXd& m,
               double zeta) const override {
    (void)F;
    (void)zeta;
    double s = m.squaredNorm();
    int d = (int)m.size();
    double c1 = 1.0 + p_.m4_delta * s;
    double q2 = 2.0 / (c1 * c1 * c1);  // d/ds of the slope
    return p_.a_mag * (quartic_slope(s) * MatrixXd::Identity(d, d) +
                       2.0 * q2 * m * m.transpose());
  }

  VectorXd d2m_dzeta(const MatrixXd& F, const VectorXd& m,
                     double zeta) const override {
    (void)F;
    (void)zeta;
    return VectorXd::Zero(m.size());
  }

  double d2zeta(const MatrixXd& F, const VectorXd& m,
                double zeta) const override {
    (void)F;
    (void)m;
    (void)zeta;
    return 2.0 * p_.alpha_c;
  }

 private:
  // d/ds [ s^2/(1+delta s) ] = (2s + delta s^2)/(1+delta s)^2
  double quartic_slope(double s) const {
    double c = 1.0 + p_.m4_delta * s;
    return (2.0 * s + p_.m4_delta * s * s) / (c * c);
  }
  DefaultModelParams p_;
};

// xi0(J) = eps (J^-4 + 4 J - 4) + (J - 1)^2: convex, minimum at J = 1 with
// value eps and zero slope, and xi0(J) J^4 >= 0.67 eps for all J > 0.
class DefaultVolumetric final : public VolumetricEnergy {
 public:
  explicit DefaultVolumetric(double eps) : eps_(eps) {}
  double value(double j) const override {
    if (j <= 0.0) return kInf;
    double inv = 1.0 / (j * j * j * j);
    return eps_ * (inv + 4.0 * j - 4.0) + (j - 1.0) * (j - 1.0);
  }
  double deriv(double j) const override {
    double inv5 = 1.0 / (j * j * j * j * j);
    return eps_ * (-4.0 * inv5 + 4.0) + 2.0 * (j - 1.0);
  }
  double second(double j) const override {
    double inv6 = 1.0 / (j * j * j * j * j * j);
    return 20.0 * eps_ * inv6 + 2.0;
  }
  double blowup_exponent() const override { return 4.0; }
  double blowup_constant() const override { return 0.67 * eps_; }

 private:
  double eps_;
};

// psi_th = -c theta (log theta - 1) - log(1+theta) g(m, zeta) with the
// bounded coupling g = g0 (|m|^2/(1+|m|^2) + zeta^2/(1+zeta^2)).
class DefaultThermal final : public ThermalEnergy {
 public:
  DefaultThermal(double c, double g0) : c_(c), g0_(g0) {}

  double value(const VectorXd& m, double zeta, double theta) const override {
    double ent = theta > 0.0 ? -c_ * theta * (std::log(theta) - 1.0) : 0.0;
    return ent - std::log1p(theta) * g(m, zeta);
  }
  double dtheta(const VectorXd& m, double zeta, double theta) const override {
    if (theta <= 0.0) return kInf;
    return -c_ * std::log(theta) - g(m, zeta) / (1.0 + theta);
  }
  double e_th(const VectorXd& m, double zeta, double theta) const override {
    return c_ * theta +
           (theta / (1.0 + theta) - std::log1p(theta)) * g(m, zeta);
  }
  double cv(const VectorXd& m, double zeta, double theta) const override {
    double q = 1.0 + theta;
    return c_ - theta * g(m, zeta) / (q * q);
  }
  VectorXd dm(const VectorXd& m, double zeta, double theta) const override {
    (void)zeta;
    return -std::log1p(theta) * gm(m);
  }
  double dzeta(const VectorXd& m, double zeta, double theta) const override {
    (void)m;
    return -std::log1p(theta) * gz(zeta);
  }
  VectorXd d2m_dtheta(const VectorXd& m, double zeta,
                      double theta) const override {
    (void)zeta;
    return -gm(m) / (1.0 + theta);
  }
  double d2zeta_dtheta(const VectorXd& m, double zeta,
                       double theta) const override {
    (void)m;
    return -gz(zeta) / (1.0 + theta);
  }
  VectorXd dm_cv(const VectorXd& m, double zeta, double theta) const override {
    (void)zeta;
    double q = 1.0 + theta;
    return -theta / (q * q) * gm(m);
  }
  double dzeta_cv(const VectorXd& m, double zeta,
                  double theta) const override {
    (void)m;
    double q = 1.0 + theta;
    return -theta / (q * q) * gz(zeta);
  }
  MatrixXd d2m(const VectorXd& m, double zeta, double theta) const override {
    (void)zeta;
    double s = m.squaredNorm();
    double c1 = 1.0 + s;
    int d = (int)m.size();
    // Hessian of g0 s/(1+s): 2 g0 [ I/(1+s)^2 - 4 m m^T/(1+s)^3 ] / 2...
    MatrixXd h = g0_ * (2.0 / (c1 * c1) * MatrixXd::Identity(d, d) -
                        8.0 / (c1 * c1 * c1) * m * m.transpose());
    return -std::log1p(theta) * h;
  }
  VectorXd d2m_dzeta(const VectorXd& m, double zeta,
                     double theta) const override {
    (void)zeta;
    (void)theta;
    return VectorXd::Zero(m.size());
  }
  double d2zeta(const VectorXd& m, double zeta, double theta) const override {
    (void)m;
    double c1 = 1.0 + zeta * zeta;
    double h = g0_ * (2.0 / (c1 * c1) - 8.0 * zeta * zeta / (c1 * c1 * c1));
    return -std::log1p(theta) * h;
  }

 private:
  double g(const VectorXd& m, double zeta) const {
    double s = m.squaredNorm(), z = zeta * zeta;
    return g0_ * (s / (1.0 + s) + z / (1.0 + z));
  }
  VectorXd gm(const VectorXd& m) const {
    double s = m.squaredNorm();
    double c1 = 1.0 + s;
    return g0_ * 2.0 / (c1 * c1) * m;
  }
  double gz(double zeta) const {
    double c1 = 1.0 + zeta * zeta;
    return g0_ * 2.0 * zeta / (c1 * c1);
  }
  double c_, g0_;
};

class LogThermal final : public ThermalEnergy {
 public:
  explicit LogThermal(double c) : c_(c) {}
  double value(const VectorXd&, double, double theta) const override {
    return theta > 0.0 ? -c_ * theta * (std::log(theta) - 1.0) : 0.0;
  }
  double dtheta(const VectorXd&, double, double theta) const override {
    return theta > 0.0 ? -c_ * std::log(theta) : kInf;
  }
  double e_th(const VectorXd&, double, double theta) const override {
    return c_ * theta;
  }
  double cv(const VectorXd&, double, double) const override { return c_; }
  VectorXd dm(const VectorXd& m, double, double) const override {
    return VectorXd::Zero(m.size());
  }
  double dzeta(const VectorXd&, double, double) const override { return 0.0; }
  VectorXd d2m_dtheta(const VectorXd& m, double, double) const override {
    return VectorXd::Zero(m.size());
  }
  double d2zeta_dtheta(const VectorXd&, double, double) const override {
    return 0.0;
  }
  VectorXd dm_cv(const VectorXd& m, double, double) const override {
    return VectorXd::Zero(m.size());
  }
  double dzeta_cv(const VectorXd&, double, double) const override {
    return 0.0;
  }
  MatrixXd d2m(const VectorXd& m, double, double) const override {
    return MatrixXd::Zero(m.size(), m.size());
  }
  VectorXd d2m_dzeta(const VectorXd& m, double, double) const override {
    return VectorXd::Zero(m.size());
  }
  double d2zeta(const VectorXd&, double, double) const override { return 0.0; }

 private:
  double c_;
};

}  // namespace

std::shared_ptr<const ThermalEnergy> make_log_thermal(double c) {
  return std::make_shared<LogThermal>(c);
}

MaterialModel make_default_model(const DefaultModelParams& p, int dim) {
  MaterialModel mat;
  mat.rho = p.rho;
  mat.tau1 = p.tau1;
  mat.tau2 = p.tau2;
  mat.kappa1 = p.kappa1;
  mat.kappa2 = p.kappa2;
  mat.phi = std::make_shared<DefaultMechanical>(p);
  mat.xi0 = std::make_shared<DefaultVolumetric>(p.eps_J);
  mat.psith = std::make_shared<DefaultThermal>(p.c_heat, p.g0);
  double mob0 = p.mob0, cond0 = p.cond0;
  mat.M_sp = [mob0, dim](const VectorXd&, double, double) {
    return mob0 * MatrixXd::Identity(dim, dim);
  };
  mat.K_sp = [cond0, dim](const VectorXd&, double, double) {
    return cond0 * MatrixXd::Identity(dim, dim);
  };
  mat.exps.gamma = p.gamma;
  mat.exps.q_xi = 4;
  // Declared constants for the sampled checks; cv in [c - g0/2, c].
  mat.bounds.cv_lower = p.c_heat - 0.5 * p.g0 - 1e-12;
  mat.bounds.cv_upper = p.c_heat + 1e-12;
  mat.bounds.psith_m_bound = 2.0 * p.g0 * 16.0;  // log(1+theta) on the grid
  mat.bounds.psith_zeta_bound = mat.bounds.psith_m_bound;
  mat.bounds.cross_const = 2.0 * p.g0;
  mat.bounds.cv_deriv_const = 4.0 * p.g0;
  mat.bounds.cv_decay_eps = 0.05;
  mat.bounds.xi_blowup_eps = 0.5 * p.eps_J;
  // Ground state: identity deformation, m = 0, zeta = zeta_ref, theta = 0.
  MatrixXd eye = MatrixXd::Identity(dim, dim);
  mat.psi0 = eval_bulk_energy(mat, eye, VectorXd::Zero(dim), p.zeta_ref, 0.0);
  return mat;
}

}  // namespace mel
