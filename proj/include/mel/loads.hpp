#pragma once

#include <string>

#include "mel/common.hpp"

namespace mel {

// Time envelopes with analytic derivatives (the traction rate enters the
// energy audit, so kinked profiles are not offered).
struct Envelope {
  enum class Kind { Constant, Ramp, Sine };
  Kind kind = Kind::Constant;
  double a = 1.0, b = 0.0, omega = 0.0, phase = 0.0;

  double value(double t) const {
    switch (kind) {
      case Kind::Constant: return a;
      case Kind::Ramp: return a + b * t;
      case Kind::Sine: return a + b * std::sin(omega * t + phase);
    }
    return a;
  }
  double dt(double t) const {
    switch (kind) {
      case Kind::Constant: return 0.0;
      case Kind::Ramp: return b;
      case Kind::Sine: return b * omega * std::cos(omega * t + phase);
    }
    return 0.0;
  }
};

// Scalar spatial profiles with analytic gradients.
struct SpatialProfile {
  enum class Kind { Uniform, Gaussian, Sine };
  Kind kind = Kind::Uniform;
  VectorXd center;  // Gaussian center / sine wave vector
  double sigma = 1.0;

  double value(const VectorXd& x) const {
    switch (kind) {
      case Kind::Uniform: return 1.0;
      case Kind::Gaussian:
        return std::exp(-(x - center).squaredNorm() / (2.0 * sigma * sigma));
      case Kind::Sine: return std::sin(center.dot(x));
    }
    return 1.0;
  }
  VectorXd grad(const VectorXd& x) const {
    switch (kind) {
      case Kind::Uniform: return VectorXd::Zero(x.size());
      case Kind::Gaussian:
        return -value(x) / (sigma * sigma) * (x - center);
      case Kind::Sine: return std::cos(center.dot(x)) * center;
    }
    return VectorXd::Zero(x.size());
  }
};

// Separable vector load amplitude * profile(x) * envelope(t).
struct VectorLoad {
  VectorXd amplitude;
  SpatialProfile profile;
  Envelope env;

  VectorXd value(const VectorXd& x, double t) const {
    return amplitude * (profile.value(x) * env.value(t));
  }
  VectorXd dt(const VectorXd& x, double t) const {
    return amplitude * (profile.value(x) * env.dt(t));
  }
  bool active() const { return amplitude.size() > 0 && amplitude.norm() > 0; }
};

// Applied spatial magnetic field h_e(z, t) with its spatial gradient and
// time derivative.
struct AppliedField {
  VectorXd amplitude;
  SpatialProfile profile;
  Envelope env;

  VectorXd value(const VectorXd& z, double t) const {
    return amplitude * (profile.value(z) * env.value(t));
  }
  // grad(i, j) = d h_i / d z_j
  MatrixXd grad(const VectorXd& z, double t) const {
    return env.value(t) * amplitude * profile.grad(z).transpose();
  }
  VectorXd dt(const VectorXd& z, double t) const {
    return amplitude * (profile.value(z) * env.dt(t));
  }
  bool active() const { return amplitude.size() > 0 && amplitude.norm() > 0; }
};

// Spatially uniform boundary data (chemical potential / temperature of
// the environment).
struct BoundaryData {
  Envelope env;
  double value(double t) const { return env.value(t); }
};

struct LoadSet {
  VectorLoad f;       // body force
  VectorLoad g;       // traction on the Neumann part
  AppliedField h_e;   // external magnetic field (spatial frame)
  BoundaryData mu_e;
  BoundaryData theta_e;
  double M_coef = 0.0;  // diffusant transmission
  double K_coef = 0.0;  // heat transmission
};

}  // namespace mel
