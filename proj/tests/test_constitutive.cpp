#include <doctest.h>

#include "mel/material.hpp"
#include "mel/rng.hpp"

using namespace mel;

namespace {

struct ZeroMechanical final : MechanicalEnergy {
  double value(const MatrixXd&, const VectorXd&, double) const override {
    return 0.0;
  }
  MatrixXd dF(const MatrixXd& f, const VectorXd&, double) const override {
    return MatrixXd::Zero(f.rows(), f.cols());
  }
  VectorXd dm(const MatrixXd&, const VectorXd& m, double) const override {
    return VectorXd::Zero(m.size());
  }
  double dzeta(const MatrixXd&, const VectorXd&, double) const override {
    return 0.0;
  }
};

// xi0 = (J-1)^2 / 2 (no blow-up; used only by closed-form stress checks)
struct QuadraticVolumetric final : VolumetricEnergy {
  double value(double j) const override {
    return j <= 0.0 ? kInf : 0.5 * (j - 1.0) * (j - 1.0);
  }
  double deriv(double j) const override { return j - 1.0; }
  double second(double) const override { return 1.0; }
  double blowup_exponent() const override { return 0.0; }
  double blowup_constant() const override { return 0.0; }
};

// psi_th = -c/2 theta^2: finite entropy floor s_min = 0.
struct QuadraticThermal final : ThermalEnergy {
  explicit QuadraticThermal(double c) : c_(c) {}
  double value(const VectorXd&, double, double t) const override {
    return -0.5 * c_ * t * t;
  }
  double dtheta(const VectorXd&, double, double t) const override {
    return -c_ * t;
  }
  VectorXd dm(const VectorXd& m, double, double) const override {
    return VectorXd::Zero(m.size());
  }
  double dzeta(const VectorXd&, double, double) const override { return 0.0; }
  double e_th(const VectorXd&, double, double t) const override {
    return 0.5 * c_ * t * t;
  }
  double cv(const VectorXd&, double, double t) const override {
    return c_ * t;
  }
  double c_;
};

// psi_th = +theta^2: convex in theta (constructed violation).
struct ConvexThermal final : ThermalEnergy {
  double value(const VectorXd&, double, double t) const override {
    return t * t;
  }
  double dtheta(const VectorXd&, double, double t) const override {
    return 2.0 * t;
  }
  VectorXd dm(const VectorXd& m, double, double) const override {
    return VectorXd::Zero(m.size());
  }
  double dzeta(const VectorXd&, double, double) const override { return 0.0; }
  double e_th(const VectorXd&, double, double t) const override {
    return -t * t;
  }
  double cv(const VectorXd&, double, double t) const override {
    return -2.0 * t;
  }
};

MaterialModel pure_volumetric_model() {
  MaterialModel m = make_default_model();
  m.phi = std::make_shared<ZeroMechanical>();
  m.xi0 = std::make_shared<QuadraticVolumetric>();
  m.psith = make_log_thermal(1.0);
  return m;
}

}  // namespace

TEST_CASE("ground state energy is the stored model constant") {
  MaterialModel mat = make_default_model();
  MatrixXd eye = MatrixXd::Identity(2, 2);
  double psi = eval_bulk_energy(mat, eye, VectorXd::Zero(2), 0.0, 0.0);
  CHECK(psi == doctest::Approx(mat.psi0).epsilon(1e-14));
}

TEST_CASE("non-positive determinant carries infinite energy") {
  MaterialModel mat = make_default_model();
  MatrixXd f(2, 2);
  f << 1.0, 0.0, 0.0, -0.5;
  double psi = eval_bulk_energy(mat, f, VectorXd::Zero(2), 0.1, 1.0);
  CHECK(std::isinf(psi));
  CHECK(psi > 0);
  f << 1.0, 1.0, 1.0, 1.0;  // det = 0
  CHECK(std::isinf(eval_bulk_energy(mat, f, VectorXd::Zero(2), 0.0, 1.0)));
  CHECK_THROWS_AS(eval_stress(mat, f, VectorXd::Zero(2), 0.0),
                  DegenerateDeformation);
}

TEST_CASE("frame indifference over 1000 random rotations") {
  MaterialModel mat = make_default_model();
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    MatrixXd f = rng.deformation_gradient(2);
    MatrixXd q = rng.rotation(2);
    VectorXd m = rng.normal_vec(2);
    double zeta = rng.normal();
    double theta = rng.uniform(0.0, 10.0);
    double a = eval_bulk_energy(mat, f, m, zeta, theta);
    double b = eval_bulk_energy(mat, q * f, m, zeta, theta);
    CHECK(std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a)));
  }
}

TEST_CASE("reference state is stress free") {
  MaterialModel mat = make_default_model();
  MatrixXd s = eval_stress(mat, MatrixXd::Identity(2, 2), VectorXd::Zero(2),
                           0.0);
  CHECK(s.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("stress matches central differences of the bulk energy") {
  MaterialModel mat = make_default_model();
  Rng rng(55);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd f = rng.deformation_gradient(2);
    VectorXd m = rng.normal_vec(2);
    double zeta = 0.5 * rng.normal();
    MatrixXd dir = rng.normal_mat(2, 2);
    dir /= dir.norm();
    MatrixXd s = eval_stress(mat, f, m, zeta);
    double deriv = (s.array() * dir.array()).sum();
    double ep = psi_me(mat, f + h * dir, m, zeta);
    double em = psi_me(mat, f - h * dir, m, zeta);
    double fd = (ep - em) / (2.0 * h);
    CHECK(std::abs(fd - deriv) <= 1e-5 * (1.0 + std::abs(deriv)));
    // the analytic tangent agrees with differences of the stress
    MatrixXd tang = eval_stress_dir(mat, f, m, zeta, dir);
    MatrixXd fd_t = (eval_stress(mat, f + h * dir, m, zeta) -
                     eval_stress(mat, f - h * dir, m, zeta)) /
                    (2.0 * h);
    CHECK((tang - fd_t).norm() <= 1e-5 * (1.0 + tang.norm()));
  }
}

TEST_CASE("pure volumetric stress has the cofactor closed form") {
  MaterialModel mat = pure_volumetric_model();
  MatrixXd f(2, 2);
  f << 2.0, 0.0, 0.0, 1.0;
  MatrixXd s = eval_stress(mat, f, VectorXd::Zero(2), 0.0);
  // xi0'(2) = 1, cof F = diag(1, 2)
  CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s(1, 1) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(s(0, 1)) < 1e-14);
  CHECK(std::abs(s(1, 0)) < 1e-14);
}

TEST_CASE("pull-back transport tensor") {
  MatrixXd eye = MatrixXd::Identity(2, 2);
  CHECK((pull_back_tensor(eye, eye) - eye).norm() < 1e-15);

  MatrixXd f(2, 2);
  f << 2.0, 0.0, 0.0, 1.0;
  MatrixXd t = pull_back_tensor(f, eye);
  CHECK(t(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(t(1, 1) == doctest::Approx(2.0).epsilon(1e-14));

  MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(pull_back_tensor(bad, eye), DegenerateDeformation);

  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    MatrixXd ff = rng.deformation_gradient(2);
    MatrixXd spd = rng.spd_matrix(2);
    MatrixXd out = pull_back_tensor(ff, spd);
    CHECK((out - out.transpose()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(out);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("thermal closure of the logarithmic model") {
  MaterialModel mat = make_default_model();
  mat.psith = make_log_thermal(2.0);
  VectorXd m = VectorXd::Zero(2);
  for (double theta : {0.5, 1.0, 3.0, 10.0}) {
    ThermalState st = thermal_closure(mat, m, 0.0, theta);
    CHECK(st.s == doctest::Approx(2.0 * std::log(theta)).epsilon(1e-13));
    CHECK(st.w == doctest::Approx(2.0 * theta).epsilon(1e-13));
    CHECK(mat.psith->cv(m, 0.0, theta) == doctest::Approx(2.0));
  }
  // theta = 0 boundary: w = psi_th(m, zeta, 0), finite
  ThermalState st0 = thermal_closure(mat, m, 0.0, 0.0);
  CHECK(st0.w == doctest::Approx(0.0));
}

TEST_CASE("finite differences of e_th reproduce the heat capacity") {
  MaterialModel mat = make_default_model();
  Rng rng(13);
  const double h = 1e-5;
  for (int i = 0; i < 50; ++i) {
    VectorXd m = rng.normal_vec(2);
    double zeta = rng.normal();
    double theta = rng.uniform(0.1, 50.0);
    double fd = (mat.psith->e_th(m, zeta, theta + h) -
                 mat.psith->e_th(m, zeta, theta - h)) /
                (2.0 * h);
    double cv = mat.psith->cv(m, zeta, theta);
    CHECK(std::abs(fd - cv) <= 1e-6 * (1.0 + std::abs(cv)));
  }
}

TEST_CASE("gibbs relation holds pointwise") {
  MaterialModel mat = make_default_model();
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    MatrixXd f = rng.deformation_gradient(2);
    VectorXd m = rng.normal_vec(2);
    double zeta = rng.normal();
    double theta = rng.uniform(0.05, 30.0);
    double psi = eval_bulk_energy(mat, f, m, zeta, theta);
    ThermalState st = thermal_closure(mat, m, zeta, theta);
    double e = psi_me(mat, f, m, zeta) + st.w;
    CHECK(std::abs(e - (psi + theta * st.s)) <= 1e-12 * (1.0 + std::abs(e)));
  }
}

TEST_CASE("enthalpy inversion") {
  MaterialModel mat = make_default_model();
  mat.psith = make_log_thermal(2.0);
  VectorXd m = VectorXd::Zero(2);
  CHECK(invert_enthalpy(mat, m, 0.0, 6.0) == doctest::Approx(3.0));
  CHECK(invert_enthalpy(mat, m, 0.0, 0.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(invert_enthalpy(mat, m, 0.0, -1.0), OutOfRange);

  MaterialModel full = make_default_model();
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    VectorXd mm = rng.normal_vec(2);
    double zeta = rng.normal();
    double theta = rng.uniform(0.0, 100.0);
    double w = thermal_closure(full, mm, zeta, theta).w;
    double back = invert_enthalpy(full, mm, zeta, w);
    CHECK(std::abs(back - theta) <= 1e-10 * (1.0 + theta));
    // monotone in w
    double back2 = invert_enthalpy(full, mm, zeta, w + 0.1);
    CHECK(back2 > back);
  }
}

TEST_CASE("internal energy as a function of entropy") {
  // logarithmic model: e_th(s) = c exp(s/c)
  MaterialModel mat = pure_volumetric_model();  // psi_me(I) = 0
  MatrixXd eye = MatrixXd::Identity(2, 2);
  VectorXd m = VectorXd::Zero(2);
  for (double s : {-1.0, 0.0, 0.5, 2.0}) {
    double e = legendre_internal_energy(mat, eye, m, 0.0, s);
    CHECK(e == doctest::Approx(std::exp(s)).epsilon(1e-10));
  }

  // finite entropy floor: +inf below s_min
  MaterialModel quad = pure_volumetric_model();
  quad.psith = std::make_shared<QuadraticThermal>(1.0);
  CHECK(std::isinf(legendre_internal_energy(quad, eye, m, 0.0, -0.5)));
  CHECK(legendre_internal_energy(quad, eye, m, 0.0, 0.0) ==
        doctest::Approx(0.0));
  // temperature from entropy at the floor
  CHECK(temperature_from_entropy_point(quad, m, 0.0, 0.0) ==
        doctest::Approx(0.0));
  CHECK_THROWS_AS(temperature_from_entropy_point(quad, m, 0.0, -1.0),
                  OutOfRange);

  // convexity in s of the default model
  MaterialModel full = make_default_model();
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    MatrixXd f = rng.deformation_gradient(2);
    VectorXd mm = rng.normal_vec(2);
    double zeta = rng.normal();
    double s1 = rng.uniform(-2.0, 3.0), s2 = rng.uniform(-2.0, 3.0);
    double lam = rng.uniform(0.1, 0.9);
    double lhs = legendre_internal_energy(full, f, mm, zeta,
                                          lam * s1 + (1 - lam) * s2);
    double rhs = lam * legendre_internal_energy(full, f, mm, zeta, s1) +
                 (1 - lam) * legendre_internal_energy(full, f, mm, zeta, s2);
    CHECK(lhs <= rhs + 1e-10);
  }
}

TEST_CASE("temperature-from-entropy closed form") {
  // log model with c = 1: s = log(theta), so s = 1 gives theta = e.
  MaterialModel mat = pure_volumetric_model();
  VectorXd m = VectorXd::Zero(2);
  CHECK(temperature_from_entropy_point(mat, m, 0.0, 1.0) ==
        doctest::Approx(std::exp(1.0)).epsilon(1e-12));
}

TEST_CASE("assumption checker passes the bundled model") {
  MaterialModel mat = make_default_model();
  AssumptionReport rep = check_assumptions(mat);
  for (const auto& c : rep.checks) {
    INFO(c.name, " margin ", c.worst_margin, " at ", c.worst_point);
    CHECK(c.passed);
  }
  CHECK(rep.all_passed());
}

TEST_CASE("assumption checker flags constructed violations") {
  MaterialModel bad = make_default_model();
  bad.psith = std::make_shared<ConvexThermal>();
  AssumptionReport rep = check_assumptions(bad);
  const AssumptionCheck* conc = rep.find("entropy-concavity");
  REQUIRE(conc != nullptr);
  CHECK_FALSE(conc->passed);

  MaterialModel indef = make_default_model();
  indef.M_sp = [](const VectorXd&, double, double) {
    MatrixXd m(2, 2);
    m << 1.0, 0.0, 0.0, -1.0;
    return m;
  };
  AssumptionReport rep2 = check_assumptions(indef);
  const AssumptionCheck* mob = rep2.find("mobility-spd");
  REQUIRE(mob != nullptr);
  CHECK_FALSE(mob->passed);
}

TEST_CASE("dissipation rate is non-negative for random states") {
  MaterialModel mat = make_default_model();
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    VectorXd m = rng.normal_vec(2);
    double zeta = rng.normal();
    double theta = rng.uniform(0.0, 20.0);
    VectorXd mdot = rng.normal_vec(2), gmu = rng.normal_vec(2),
             gth = rng.normal_vec(2);
    double zdot = rng.normal();
    double diss = mat.tau1 * mdot.squaredNorm() + mat.tau2 * zdot * zdot +
                  gmu.dot(mat.M_sp(m, zeta, theta) * gmu) +
                  gth.dot(mat.K_sp(m, zeta, theta) * gth);
    CHECK(diss >= -1e-14);
  }
}
