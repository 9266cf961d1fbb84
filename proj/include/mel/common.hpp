#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <string>

namespace mel {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateDeformation : Error {
  using Error::Error;
};
struct NonInjective : Error {
  using Error::Error;
};
struct OutOfRange : Error {
  using Error::Error;
};
struct InvalidExponents : Error {
  using Error::Error;
};
struct SolverDivergence : Error {
  using Error::Error;
};
struct LineSearchFailure : Error {
  using Error::Error;
};
struct StepFloorReached : Error {
  using Error::Error;
};
struct UnknownTag : Error {
  using Error::Error;
};
struct UnsupportedOrder : Error {
  using Error::Error;
};
struct QuadratureDivergence : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace mel
