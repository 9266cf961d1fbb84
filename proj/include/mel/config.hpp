#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "mel/kernel.hpp"
#include "mel/loads.hpp"
#include "mel/material.hpp"
#include "mel/mesh.hpp"
#include "mel/spline.hpp"

namespace mel {

// Flat-section key-value configuration (INI-like, '#' comments). Unknown
// sections or keys are rejected; every accessed key is recorded with its
// resolved value so runs can echo a re-feedable manifest.
class RunConfig {
 public:
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_string(const std::string& text);

  bool has(const std::string& sec, const std::string& key) const;

  double get_double(const std::string& sec, const std::string& key,
                    double def) const;
  int get_int(const std::string& sec, const std::string& key, int def) const;
  std::string get_string(const std::string& sec, const std::string& key,
                         const std::string& def) const;
  bool get_bool(const std::string& sec, const std::string& key,
                bool def) const;
  std::vector<double> get_vector(const std::string& sec,
                                 const std::string& key,
                                 const std::vector<double>& def) const;

  // Validates section/key names against the schema; throws ConfigError.
  void validate_schema() const;

  // Every key (accessed or raw) with its resolved value, for manifests.
  std::map<std::string, std::string> resolved() const;

  std::uint64_t seed() const;
  int threads() const;
  std::string output_dir() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> data_;
  mutable std::map<std::string, std::string> resolved_;
};

// --- builders ------------------------------------------------------------

Mesh build_mesh(const RunConfig& cfg);
std::shared_ptr<SplineSpace> build_space(const RunConfig& cfg,
                                         const Mesh& mesh);
MaterialModel build_material(const RunConfig& cfg, int dim);
KernelSpec build_kernel(const RunConfig& cfg);
LoadSet build_loads(const RunConfig& cfg, int dim);

struct InitialData {
  MatrixXd chi, v, m;  // coefficient blocks
  VectorXd zeta;
  VectorXd theta;
};
InitialData build_initial_data(const RunConfig& cfg, const SplineSpace& space);

// Validation of the dynamic-problem qualification (non-negative initial
// and boundary temperatures, positive determinant of the initial state,
// finite volumetric energy). Throws ConfigError naming the violation.
void validate_dynamic_invariants(const RunConfig& cfg,
                                 const SplineSpace& space);

}  // namespace mel
