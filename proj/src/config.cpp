#include "mel/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mel {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  size_t e = s.find_last_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = [] {
    std::map<std::string, std::set<std::string>> m;
    m["run"] = {"seed", "threads", "outdir"};
    m["mesh"] = {"dim",       "cells",  "extent_lo", "extent_hi",
                 "degree",    "quad_pts", "dirichlet"};
    m["material"] = {"family", "rho",    "mu_L",   "a_mag",  "m4_delta",
                     "alpha_c", "beta_c", "zeta_ref", "c_heat", "g0",
                     "eps_J",   "tau1",   "tau2",   "kappa1", "kappa2",
                     "mob0",    "cond0",  "gamma"};
    m["kernel"] = {"gamma", "strength", "cutoff", "n_phi",
                   "n_rad", "n_inner",  "n_far"};
    std::set<std::string> loads;
    for (std::string p : {"f", "g", "he"}) {
      for (std::string k :
           {"_amplitude", "_profile", "_center", "_sigma", "_env", "_env_a",
            "_env_b", "_env_omega", "_env_phase"})
        loads.insert(p + k);
    }
    for (std::string p : {"mu_e", "theta_e"}) {
      for (std::string k : {"_env", "_env_a", "_env_b", "_env_omega",
                            "_env_phase"})
        loads.insert(p + k);
    }
    loads.insert("M_coef");
    loads.insert("K_coef");
    m["loads"] = loads;
    m["initial"] = {"theta0", "m0", "zeta0", "v0"};
    m["dynamics"] = {"T",           "dt",       "eps_reg", "newton_tol",
                     "snapshot_stride", "max_halvings"};
    m["statics"] = {"Z_tot",      "S_tot",     "theta_ref", "max_iters",
                    "al_rounds",  "tol_grad",  "tol_con",   "cn_weight",
                    "demag",      "grid_nodes", "margin",   "deposit_sub",
                    "cg_tol",     "gap_samples", "trace_gap_samples"};
    return m;
  }();
  return s;
}

}  // namespace

RunConfig RunConfig::parse_string(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      cfg.data_[section];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": key outside any [section]");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    cfg.data_[section][key] = value;
  }
  cfg.validate_schema();
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

void RunConfig::validate_schema() const {
  const auto& sch = schema();
  for (const auto& [sec, keys] : data_) {
    auto it = sch.find(sec);
    if (it == sch.end())
      throw ConfigError("config: unknown section [" + sec + "]");
    for (const auto& [key, value] : keys) {
      (void)value;
      if (!it->second.count(key))
        throw ConfigError("config: unknown key '" + key + "' in [" + sec +
                          "]");
    }
  }
}

bool RunConfig::has(const std::string& sec, const std::string& key) const {
  auto it = data_.find(sec);
  return it != data_.end() && it->second.count(key) > 0;
}

std::string RunConfig::get_string(const std::string& sec,
                                  const std::string& key,
                                  const std::string& def) const {
  std::string v = def;
  auto it = data_.find(sec);
  if (it != data_.end()) {
    auto jt = it->second.find(key);
    if (jt != it->second.end()) v = jt->second;
  }
  resolved_[sec + "." + key] = v;
  return v;
}

double RunConfig::get_double(const std::string& sec, const std::string& key,
                             double def) const {
  std::ostringstream os;
  os.precision(17);
  os << def;
  std::string v = get_string(sec, key, os.str());
  try {
    return std::stod(v);
  } catch (...) {
    throw ConfigError("config: [" + sec + "] " + key +
                      " is not a number: " + v);
  }
}

int RunConfig::get_int(const std::string& sec, const std::string& key,
                       int def) const {
  std::string v = get_string(sec, key, std::to_string(def));
  try {
    return std::stoi(v);
  } catch (...) {
    throw ConfigError("config: [" + sec + "] " + key +
                      " is not an integer: " + v);
  }
}

bool RunConfig::get_bool(const std::string& sec, const std::string& key,
                         bool def) const {
  std::string v = get_string(sec, key, def ? "on" : "off");
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config: [" + sec + "] " + key + " is not a flag: " + v);
}

std::vector<double> RunConfig::get_vector(
    const std::string& sec, const std::string& key,
    const std::vector<double>& def) const {
  std::ostringstream os;
  os.precision(17);
  for (size_t i = 0; i < def.size(); ++i) os << (i ? " " : "") << def[i];
  std::string v = get_string(sec, key, os.str());
  std::istringstream in(v);
  std::vector<double> out;
  double x;
  while (in >> x) out.push_back(x);
  if (out.empty() && !def.empty())
    throw ConfigError("config: [" + sec + "] " + key + " is empty");
  return out;
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out = resolved_;
  for (const auto& [sec, keys] : data_)
    for (const auto& [key, value] : keys) out[sec + "." + key] = value;
  return out;
}

std::uint64_t RunConfig::seed() const {
  return (std::uint64_t)get_int("run", "seed", 12345);
}

int RunConfig::threads() const { return get_int("run", "threads", 0); }

std::string RunConfig::output_dir() const {
  // Environment override applies to the output directory only.
  if (const char* env = std::getenv("MELSIM_OUTPUT_DIR")) return env;
  return get_string("run", "outdir", "out");
}

// --- builders -------------------------------------------------------------

Mesh build_mesh(const RunConfig& cfg) {
  int dim = cfg.get_int("mesh", "dim", 2);
  std::vector<double> def_cells(dim, 8.0);
  std::vector<double> cells_d = cfg.get_vector("mesh", "cells", def_cells);
  std::vector<double> lo =
      cfg.get_vector("mesh", "extent_lo", std::vector<double>(dim, 0.0));
  std::vector<double> hi =
      cfg.get_vector("mesh", "extent_hi", std::vector<double>(dim, 1.0));
  if ((int)cells_d.size() == 1 && dim == 2) cells_d.push_back(cells_d[0]);
  std::vector<int> cells;
  for (double c : cells_d) cells.push_back((int)std::lround(c));
  Mesh mesh(dim, lo, hi, cells);

  std::string diri = cfg.get_string("mesh", "dirichlet", "left");
  std::map<std::string, int> names{{"left", 0}, {"right", 1}, {"bottom", 2},
                                   {"top", 3}};
  std::set<int> dsides, nsides;
  std::istringstream in(diri);
  std::string tok;
  while (in >> tok) {
    auto it = names.find(tok);
    if (it == names.end() || it->second >= 2 * dim)
      throw ConfigError("config: bad dirichlet side " + tok);
    dsides.insert(it->second);
  }
  for (int s = 0; s < 2 * dim; ++s)
    if (!dsides.count(s)) nsides.insert(s);
  mesh.tag("dirichlet", dsides);
  mesh.tag("neumann", nsides);
  return mesh;
}

std::shared_ptr<SplineSpace> build_space(const RunConfig& cfg,
                                         const Mesh& mesh) {
  int degree = cfg.get_int("mesh", "degree", 3);
  if (degree < 3)
    throw ConfigError("config: degree must be >= 3 for C2 conformity");
  return std::make_shared<SplineSpace>(mesh, degree);
}

MaterialModel build_material(const RunConfig& cfg, int dim) {
  std::string family = cfg.get_string("material", "family", "default");
  if (family != "default")
    throw ConfigError("config: unknown material family " + family);
  DefaultModelParams p;
  p.rho = cfg.get_double("material", "rho", p.rho);
  p.mu_L = cfg.get_double("material", "mu_L", p.mu_L);
  p.a_mag = cfg.get_double("material", "a_mag", p.a_mag);
  p.m4_delta = cfg.get_double("material", "m4_delta", p.m4_delta);
  p.alpha_c = cfg.get_double("material", "alpha_c", p.alpha_c);
  p.beta_c = cfg.get_double("material", "beta_c", p.beta_c);
  p.zeta_ref = cfg.get_double("material", "zeta_ref", p.zeta_ref);
  p.c_heat = cfg.get_double("material", "c_heat", p.c_heat);
  p.g0 = cfg.get_double("material", "g0", p.g0);
  p.eps_J = cfg.get_double("material", "eps_J", p.eps_J);
  p.tau1 = cfg.get_double("material", "tau1", p.tau1);
  p.tau2 = cfg.get_double("material", "tau2", p.tau2);
  p.kappa1 = cfg.get_double("material", "kappa1", p.kappa1);
  p.kappa2 = cfg.get_double("material", "kappa2", p.kappa2);
  p.mob0 = cfg.get_double("material", "mob0", p.mob0);
  p.cond0 = cfg.get_double("material", "cond0", p.cond0);
  p.gamma = cfg.get_double("material", "gamma", p.gamma);
  if (p.g0 >= 4.0 * p.c_heat)
    throw ConfigError("config: g0 must stay below 4 c_heat for cv > 0");
  return make_default_model(p, dim);
}

KernelSpec build_kernel(const RunConfig& cfg) {
  KernelSpec k;
  k.gamma = cfg.get_double("kernel", "gamma", 0.6);
  k.strength = cfg.get_double("kernel", "strength", 0.02);
  k.cutoff = cfg.get_double("kernel", "cutoff", 0.25);
  return k;
}

namespace {

Envelope parse_envelope(const RunConfig& cfg, const std::string& prefix) {
  Envelope e;
  std::string kind = cfg.get_string("loads", prefix + "_env", "constant");
  if (kind == "constant")
    e.kind = Envelope::Kind::Constant;
  else if (kind == "ramp")
    e.kind = Envelope::Kind::Ramp;
  else if (kind == "sine")
    e.kind = Envelope::Kind::Sine;
  else
    throw ConfigError("config: unknown envelope " + kind);
  e.a = cfg.get_double("loads", prefix + "_env_a", prefix == "theta_e" ? 1.0
                                                                       : 0.0);
  e.b = cfg.get_double("loads", prefix + "_env_b", 0.0);
  e.omega = cfg.get_double("loads", prefix + "_env_omega", 6.2831853071795864);
  e.phase = cfg.get_double("loads", prefix + "_env_phase", 0.0);
  return e;
}

SpatialProfile parse_profile(const RunConfig& cfg, const std::string& prefix,
                             int dim) {
  SpatialProfile p;
  std::string kind = cfg.get_string("loads", prefix + "_profile", "uniform");
  if (kind == "uniform")
    p.kind = SpatialProfile::Kind::Uniform;
  else if (kind == "gaussian")
    p.kind = SpatialProfile::Kind::Gaussian;
  else if (kind == "sine")
    p.kind = SpatialProfile::Kind::Sine;
  else
    throw ConfigError("config: unknown profile " + kind);
  std::vector<double> c =
      cfg.get_vector("loads", prefix + "_center", std::vector<double>(dim, 0.5));
  p.center = Eigen::Map<VectorXd>(c.data(), (int)c.size());
  p.sigma = cfg.get_double("loads", prefix + "_sigma", 0.3);
  return p;
}

VectorXd parse_amplitude(const RunConfig& cfg, const std::string& prefix,
                         int dim) {
  std::vector<double> a = cfg.get_vector("loads", prefix + "_amplitude",
                                         std::vector<double>(dim, 0.0));
  if ((int)a.size() != dim)
    throw ConfigError("config: " + prefix + "_amplitude needs dim entries");
  return Eigen::Map<VectorXd>(a.data(), dim);
}

}  // namespace

LoadSet build_loads(const RunConfig& cfg, int dim) {
  LoadSet l;
  l.f.amplitude = parse_amplitude(cfg, "f", dim);
  l.f.profile = parse_profile(cfg, "f", dim);
  l.f.env = parse_envelope(cfg, "f");
  l.g.amplitude = parse_amplitude(cfg, "g", dim);
  l.g.profile = parse_profile(cfg, "g", dim);
  l.g.env = parse_envelope(cfg, "g");
  l.h_e.amplitude = parse_amplitude(cfg, "he", dim);
  l.h_e.profile = parse_profile(cfg, "he", dim);
  l.h_e.env = parse_envelope(cfg, "he");
  l.mu_e.env = parse_envelope(cfg, "mu_e");
  l.theta_e.env = parse_envelope(cfg, "theta_e");
  l.M_coef = cfg.get_double("loads", "M_coef", 0.0);
  l.K_coef = cfg.get_double("loads", "K_coef", 0.0);
  if (l.M_coef < 0 || l.K_coef < 0)
    throw ConfigError("config: transmission coefficients must be >= 0");
  return l;
}

InitialData build_initial_data(const RunConfig& cfg,
                               const SplineSpace& space) {
  const int dim = space.dim();
  InitialData init;
  init.chi = space.interpolate([](const VectorXd& x) { return x; }, dim);
  std::vector<double> v0 =
      cfg.get_vector("initial", "v0", std::vector<double>(dim, 0.0));
  std::vector<double> m0 =
      cfg.get_vector("initial", "m0", std::vector<double>(dim, 0.0));
  double zeta0 = cfg.get_double("initial", "zeta0", 0.0);
  double theta0 = cfg.get_double("initial", "theta0", 1.0);
  init.v = MatrixXd::Zero(space.size(), dim);
  init.m = MatrixXd::Zero(space.size(), dim);
  for (int c = 0; c < dim; ++c) {
    init.v.col(c).setConstant(v0[c]);
    init.m.col(c).setConstant(m0[c]);
  }
  init.zeta = VectorXd::Constant(space.size(), zeta0);
  init.theta = VectorXd::Constant(space.size(), theta0);
  return init;
}

void validate_dynamic_invariants(const RunConfig& cfg,
                                 const SplineSpace& space) {
  double theta0 = cfg.get_double("initial", "theta0", 1.0);
  if (theta0 < 0.0)
    throw ConfigError(
        "invalid initial data: theta0 must be non-negative (theta0 >= 0)");
  LoadSet loads = build_loads(cfg, space.dim());
  double T = cfg.get_double("dynamics", "T", 1.0);
  for (int i = 0; i <= 200; ++i) {
    double t = T * i / 200.0;
    if (loads.theta_e.value(t) < 0.0)
      throw ConfigError(
          "invalid boundary data: theta_e(t) must stay non-negative");
  }
  // Identity initial deformation: det = 1, xi finite; checked anyway so
  // future chi0 options inherit the guard.
  InitialData init = build_initial_data(cfg, space);
  DiscreteField chi{std::make_shared<SplineSpace>(space), init.chi};
  VectorXd probe(space.dim());
  for (int a = 0; a < space.dim(); ++a)
    probe[a] = 0.5 * (space.mesh().lo(a) + space.mesh().hi(a));
  MatrixXd f = chi.gradient(probe);
  if (det_f(f) <= 0.0)
    throw ConfigError("invalid initial data: det(grad chi0) <= 0");
}

}  // namespace mel
