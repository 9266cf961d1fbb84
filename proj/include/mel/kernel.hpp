#pragma once

#include <cmath>

#include "mel/common.hpp"

namespace mel {

// Isotropic scalar-times-identity sixth-order kernel
//   K(x) = k(|x|) I6,  k(r) = strength * r^{-(d+2 gamma)} * ramp(r),
// where ramp == 1 for r <= cutoff and decays C3-smoothly to 0 at
// r = 2 cutoff. The power law is exact on (0, cutoff], so the singular
// lower bound holds there with constant `strength`.
struct KernelSpec {
  double gamma = 0.6;
  double strength = 1.0;
  double cutoff = 0.25;

  double support() const { return 2.0 * cutoff; }

  double ramp(double r) const {
    double s = r / (2.0 * cutoff);
    if (s <= 0.5) return 1.0;
    if (s >= 1.0) return 0.0;
    double u = 2.0 * s - 1.0;
    double u2 = u * u, u4 = u2 * u2;
    // C3 smoothstep
    double step = u4 * (35.0 - 84.0 * u + 70.0 * u2 - 20.0 * u2 * u);
    return 1.0 - step;
  }

  double k(double r, int d) const {
    if (r >= support()) return 0.0;
    return strength * std::pow(r, -(double)(d + 2.0 * gamma)) * ramp(r);
  }

  // The pair integrand of the quadratic form behaves like r^{1-2 gamma}
  // near the diagonal; it is integrable only for gamma in (d/2-1, 1).
  void validate(int d) const {
    if (strength <= 0.0 || cutoff <= 0.0)
      throw ConfigError("kernel: strength and cutoff must be positive");
    if (!(gamma > 0.5 * d - 1.0))
      throw InvalidExponents("kernel: gamma must exceed d/2 - 1");
    if (!(gamma < 1.0))
      throw QuadratureDivergence(
          "kernel: pair quadrature diverges for gamma >= 1");
  }
};

}  // namespace mel
