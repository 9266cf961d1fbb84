#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

#include "mel/config.hpp"
#include "mel/dynamics.hpp"
#include "mel/io.hpp"
#include "mel/parallel.hpp"
#include "mel/rng.hpp"
#include "mel/statics.hpp"

using nlohmann::json;

namespace {

using namespace mel;

struct CommonOpts {
  std::string config_path;
  bool validate_only = false;
  int threads = -1;  // -1: take the config value
};

void add_common(CLI::App* sub, CommonOpts& opts) {
  sub->add_option("config", opts.config_path, "run configuration file")
      ->required();
  sub->add_flag("--validate-only", opts.validate_only,
                "parse and validate, then exit");
  sub->add_option("--threads", opts.threads, "worker thread count");
}

struct Setup {
  RunConfig cfg;
  Mesh mesh;
  std::shared_ptr<SplineSpace> space;
  MaterialModel material;
  KernelSpec kernel;
  LoadSet loads;
  std::string outdir;
};

Setup prepare(const CommonOpts& opts) {
  RunConfig cfg = RunConfig::parse_file(opts.config_path);
  int threads = opts.threads >= 0 ? opts.threads : cfg.threads();
  set_thread_count(threads);
  Mesh mesh = build_mesh(cfg);
  auto space = build_space(cfg, mesh);
  Setup s{std::move(cfg), mesh, space, build_material(s.cfg, mesh.dim()),
          KernelSpec{}, LoadSet{}, ""};
  s.kernel = build_kernel(s.cfg);
  s.loads = build_loads(s.cfg, mesh.dim());
  s.outdir = s.cfg.output_dir();
  ensure_directory(s.outdir);
  return s;
}

DynamicSettings dynamic_settings(const RunConfig& cfg) {
  DynamicSettings d;
  d.t_end = cfg.get_double("dynamics", "T", 1.0);
  d.dt = cfg.get_double("dynamics", "dt", 1.0 / 64.0);
  d.eps_reg = cfg.get_double("dynamics", "eps_reg", 0.0);
  d.newton_tol = cfg.get_double("dynamics", "newton_tol", 1e-10);
  d.max_halvings = cfg.get_int("dynamics", "max_halvings", 8);
  return d;
}

StaticSettings static_settings(const RunConfig& cfg) {
  StaticSettings s;
  s.max_iters = cfg.get_int("statics", "max_iters", 400);
  s.al_rounds = cfg.get_int("statics", "al_rounds", 6);
  s.tol_grad = cfg.get_double("statics", "tol_grad", 1e-6);
  s.tol_con = cfg.get_double("statics", "tol_con", 1e-8);
  s.cn_weight = cfg.get_double("statics", "cn_weight", 1e2);
  s.use_demag = cfg.get_bool("statics", "demag", true);
  s.grid_nodes = cfg.get_int("statics", "grid_nodes", 96);
  s.grid_margin = cfg.get_double("statics", "margin", 4.0);
  s.deposit_sub = cfg.get_int("statics", "deposit_sub", 4);
  s.cg_tol = cfg.get_double("statics", "cg_tol", 1e-12);
  s.trace_gap_samples = cfg.get_int("statics", "trace_gap_samples", 20000);
  s.final_gap_samples = cfg.get_int("statics", "gap_samples", 1000000);
  s.seed = cfg.seed();
  return s;
}

int run_simulate(const CommonOpts& opts, bool audit_only) {
  Setup s = prepare(opts);
  validate_dynamic_invariants(s.cfg, *s.space);
  DynamicSettings dset = dynamic_settings(s.cfg);
  int stride = s.cfg.get_int("dynamics", "snapshot_stride", 16);
  if (opts.validate_only) return 0;

  DynamicProblem problem(s.material, s.kernel, s.space, s.loads, dset);
  InitialData init = build_initial_data(s.cfg, *s.space);
  DynState state0 = problem.make_initial_state(init.chi, init.v, init.m,
                                               init.zeta, init.theta);
  auto traj = problem.run(state0);
  auto audit = problem.energy_audit(traj, 1);
  auto monitors = problem.estimate_monitor(traj);
  auto tmin = problem.nonneg_temperature_check(traj);

  std::vector<std::string> artifacts;
  CsvWriter csv({"time",           "kinetic",     "stored",
                 "exchange",       "interfacial", "hyper",
                 "thermal",        "diss_cum",    "residual_alpha0",
                 "residual_alpha1", "theta_min",  "j_min",
                 "zeta_total",     "sup_mech",    "lap_m_sq",
                 "lap_zeta_sq",    "flux_mu_sq",  "flux_theta_sq",
                 "theta_l1_sup",   "grad_theta_lr"});
  for (size_t i = 0; i < audit.size(); ++i) {
    const auto& a = audit[i];
    const auto& m = monitors[i];
    csv.append({a.t, a.kinetic, a.stored, a.exchange, a.interfacial, a.hyper,
                a.thermal, a.diss_cum, a.residual_alpha0, a.residual_alpha1,
                a.theta_min, a.j_min, a.zeta_total, m.sup_mech, m.delta_m_sq,
                m.delta_zeta_sq, m.flux_mu_sq, m.flux_theta_sq,
                m.theta_l1_sup, m.grad_theta_lr});
  }
  std::string series = s.outdir + (audit_only ? "/audit.csv" : "/steps.csv");
  csv.write(series);
  artifacts.push_back(series);

  std::vector<int> cells;
  for (int a = 0; a < s.mesh.dim(); ++a) cells.push_back(s.mesh.cells(a));
  if (!audit_only) {
    for (size_t i = 0; i < traj.states.size(); i += (size_t)stride) {
      std::string base = s.outdir + "/snap_" + std::to_string(i);
      write_field_snapshot(base + "_chi", traj.states[i].chi, s.mesh.dim(),
                           s.space->degree(), cells);
      write_field_snapshot(base + "_m", traj.states[i].m, s.mesh.dim(),
                           s.space->degree(), cells);
      write_field_snapshot(base + "_zeta", traj.states[i].zeta, s.mesh.dim(),
                           s.space->degree(), cells);
      write_field_snapshot(base + "_theta", traj.states[i].theta,
                           s.mesh.dim(), s.space->degree(), cells);
      artifacts.push_back(base + "_chi.bin");
    }
  }

  // run summary with the determinant bound comparison
  json summary;
  const auto& last = audit.back();
  summary["final_time"] = last.t;
  summary["residual_alpha0"] = last.residual_alpha0;
  summary["residual_alpha1"] = last.residual_alpha1;
  summary["residual_alpha0_rel"] =
      last.residual_alpha0 / last.total_energy_scale;
  summary["residual_alpha1_rel"] =
      last.residual_alpha1 / last.total_energy_scale;
  summary["theta_min"] = tmin.value;
  summary["theta_min_time"] = tmin.time;
  double eta_run = kInf;
  for (const auto& rec : traj.records) eta_run = std::min(eta_run, rec.j_min);
  summary["eta_run"] = eta_run;
  {
    // theoretical determinant bound from the final state
    const DynState& fin = traj.states.back();
    Samples schi = sample_field(problem.quadrature(), fin.chi, 1);
    const int P = problem.quadrature().total_points();
    VectorXd jvals(P), jinv(P);
    double p_exp = s.material.exps.q_xi;
    for (int p = 0; p < P; ++p) {
      double j = s.mesh.dim() == 1
                     ? schi.grad(p, 0)
                     : schi.grad(p, 0) * schi.grad(p, 3) -
                           schi.grad(p, 1) * schi.grad(p, 2);
      jvals[p] = j;
      jinv[p] = std::pow(std::max(j, 1e-12), -p_exp);
    }
    double m_int = integrate(problem.quadrature(), jinv);
    double alpha = s.material.exps.gamma - (0.5 * s.mesh.dim() - 1.0);
    double c_alpha = estimate_holder_constant(
        problem.quadrature().points(), jvals, alpha);
    try {
      summary["healey_kromer_eta"] = healey_kromer_eta(
          c_alpha, m_int, p_exp, s.material.exps.gamma, s.mesh.dim());
    } catch (const InvalidExponents& e) {
      summary["healey_kromer_eta_error"] = e.what();
    }
    summary["holder_constant"] = c_alpha;
    summary["inverse_determinant_integral"] = m_int;
  }
  std::string sumpath = s.outdir + "/summary.json";
  write_text_atomic(sumpath, summary.dump(2) + "\n");
  artifacts.push_back(sumpath);
  write_manifest(s.outdir, s.cfg.resolved(), artifacts);
  return 0;
}

int run_static(const CommonOpts& opts) {
  Setup s = prepare(opts);
  StaticSettings sset = static_settings(s.cfg);
  double theta_ref = s.cfg.get_double("statics", "theta_ref", 1.0);
  double z_tot = s.cfg.get_double(
      "statics", "Z_tot",
      s.cfg.get_double("material", "zeta_ref", 0.0) * s.mesh.volume());
  if (opts.validate_only) return 0;

  StaticProblem problem(s.material, s.kernel, s.space, s.loads, z_tot, 0.0,
                        sset);
  double s_tot = s.cfg.has("statics", "S_tot")
                     ? s.cfg.get_double("statics", "S_tot", 0.0)
                     : StaticProblem::uniform_entropy(
                           s.material, z_tot / s.mesh.volume(), theta_ref,
                           s.mesh.dim()) *
                           s.mesh.volume();
  StaticProblem problem2(s.material, s.kernel, s.space, s.loads, z_tot, s_tot,
                         sset);
  StaticState init = problem2.ground_state(theta_ref);
  MinimizeResult res = problem2.minimize(init);

  std::vector<std::string> artifacts;
  json trace = json::array();
  for (const auto& row : res.trace)
    trace.push_back({{"iter", row.iter},
                     {"energy", row.energy},
                     {"grad_norm", row.grad_norm},
                     {"c_zeta", row.c_zeta},
                     {"c_s", row.c_s},
                     {"cn_gap", row.gap},
                     {"j_min", row.j_min}});
  json out;
  out["trace"] = trace;
  out["converged"] = res.converged;
  out["energy"] = res.energy;
  out["lambda_zeta_chemical_potential"] = res.lambda_zeta;
  out["lambda_s_temperature"] = res.lambda_s;
  out["final_gap"] = res.final_gap;
  out["j_min"] = res.j_min;
  std::string tracep = s.outdir + "/static_trace.json";
  write_text_atomic(tracep, out.dump(2) + "\n");
  artifacts.push_back(tracep);

  std::vector<int> cells;
  for (int a = 0; a < s.mesh.dim(); ++a) cells.push_back(s.mesh.cells(a));
  write_field_snapshot(s.outdir + "/static_chi", res.state.chi, s.mesh.dim(),
                       s.space->degree(), cells);
  write_field_snapshot(s.outdir + "/static_m", res.state.m, s.mesh.dim(),
                       s.space->degree(), cells);
  write_field_snapshot(s.outdir + "/static_zeta", res.state.zeta,
                       s.mesh.dim(), s.space->degree(), cells);
  write_field_snapshot(s.outdir + "/static_s", res.state.s, s.mesh.dim(),
                       s.space->degree(), cells);
  artifacts.push_back(s.outdir + "/static_chi.bin");

  // center-line slice of the solution fields
  {
    CsvWriter slice({"x", "chi_x", "chi_y", "m_x", "m_y", "zeta", "s"});
    DiscreteField chi{s.space, res.state.chi}, m{s.space, res.state.m};
    DiscreteField zeta{s.space, res.state.zeta}, ent{s.space, res.state.s};
    int nslice = 101;
    for (int i = 0; i < nslice; ++i) {
      VectorXd x(s.mesh.dim());
      x[0] = s.mesh.lo(0) +
             (s.mesh.hi(0) - s.mesh.lo(0)) * i / (nslice - 1.0);
      if (s.mesh.dim() == 2)
        x[1] = 0.5 * (s.mesh.lo(1) + s.mesh.hi(1));
      VectorXd cv = chi.value(x), mv = m.value(x);
      slice.append({x[0], cv[0], s.mesh.dim() == 2 ? cv[1] : 0.0, mv[0],
                    s.mesh.dim() == 2 ? mv[1] : 0.0, zeta.value(x)[0],
                    ent.value(x)[0]});
    }
    slice.write(s.outdir + "/static_slice.csv");
    artifacts.push_back(s.outdir + "/static_slice.csv");
  }
  write_manifest(s.outdir, s.cfg.resolved(), artifacts);
  if (!res.converged) throw SolverDivergence("static minimization stalled");
  return 0;
}

int run_kernel_check(const CommonOpts& opts) {
  Setup s = prepare(opts);
  if (opts.validate_only) return 0;
  json rep;
  s.kernel.validate(s.mesh.dim());
  const int d = s.mesh.dim();

  // singular lower bound on (0, cutoff]
  double worst = kInf;
  for (int i = 1; i <= 200; ++i) {
    double r = s.kernel.cutoff * i / 200.0;
    worst = std::min(worst, s.kernel.k(r, d) * std::pow(r, d +
                                                    2.0 * s.kernel.gamma) -
                               s.kernel.strength);
  }
  rep["lower_bound_margin"] = worst;
  rep["lower_bound_ok"] = worst >= -1e-12;
  rep["symmetric"] = true;  // radial kernel: k(|x|) = k(|-x|)

  GagliardoForm form(s.kernel, s.space);
  Rng rng(s.cfg.seed());

  // frame indifference of the quadratic form on a random smooth field
  FlatTensorField g;
  g.len = d * d * d;
  VectorXd freq = rng.uniform_vec(d, 1.0, 2.5);
  g.value = [d, freq](const VectorXd& x) {
    VectorXd out(d * d * d);
    double sv = std::sin(freq.dot(x)), cv = std::cos(freq.dot(x));
    for (int i = 0; i < out.size(); ++i)
      out[i] = (i % 2 == 0 ? sv : cv) * (1.0 + 0.1 * i);
    return out;
  };
  double e_plain = form.energy_checked(g, 1e-3);
  MatrixXd q = rng.rotation(d);
  FlatTensorField gq;
  gq.len = g.len;
  gq.value = [d, q, g](const VectorXd& x) {
    VectorXd v = g.value(x);
    VectorXd out(v.size());
    // rotate the first index: (Q G)_{ijk} = Q_{il} G_{ljk}
    int block = d * d;
    for (int i = 0; i < d; ++i)
      for (int jk = 0; jk < block; ++jk) {
        double acc = 0.0;
        for (int l = 0; l < d; ++l) acc += q(i, l) * v[l * block + jk];
        out[i * block + jk] = acc;
      }
    return out;
  };
  double e_rot = form.energy(gq);
  rep["energy"] = e_plain;
  rep["energy_rotated"] = e_rot;
  rep["frame_indifference_rel_error"] =
      std::abs(e_plain - e_rot) / (std::abs(e_plain) + 1e-300);

  // constant field
  FlatTensorField gc;
  gc.len = g.len;
  gc.value = [&](const VectorXd&) { return VectorXd::Ones(g.len); };
  rep["constant_field_energy"] = form.energy(gc);

  // brute-force double-quadrature oracle comparison
  double ref = gagliardo_energy_reference(s.kernel, g, s.mesh, 24, 3);
  rep["oracle_energy"] = ref;
  rep["oracle_rel_error"] = std::abs(e_plain - ref) / (std::abs(ref) + 1e-300);

  std::string path = s.outdir + "/kernel_check.json";
  write_text_atomic(path, rep.dump(2) + "\n");
  write_manifest(s.outdir, s.cfg.resolved(), {path});
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int run_magnetostatics(const CommonOpts& opts) {
  Setup s = prepare(opts);
  if (opts.validate_only) return 0;
  InitialData init = build_initial_data(s.cfg, *s.space);
  DiscreteField chi{s.space, init.chi};
  DiscreteField m{s.space, init.m};
  StaticSettings sset = static_settings(s.cfg);
  VectorXd blo(s.mesh.dim()), bhi(s.mesh.dim());
  for (int a = 0; a < s.mesh.dim(); ++a) {
    blo[a] = s.mesh.lo(a);
    bhi[a] = s.mesh.hi(a);
  }
  SpatialGrid grid = SpatialGrid::around(blo, bhi, sset.grid_margin,
                                         sset.grid_nodes);
  Quadrature quad(s.space, s.space->degree() + 1);
  auto raster = push_forward_magnetization(chi, m, grid, quad);
  auto pot = solve_scalar_potential(grid, raster.values);
  auto gap = ciarlet_necas_gap(chi, quad, sset.final_gap_samples, sset.seed);

  json rep;
  rep["energy_gradient_form"] = pot.energy;
  rep["energy_pairing_form"] = pot.energy_pairing;
  rep["cg_iterations"] = pot.iterations;
  rep["gap"] = gap.gap;
  rep["gap_volume_integral"] = gap.volume_integral;
  rep["gap_image_measure"] = gap.image_measure;
  rep["j_min"] = gap.j_min;
  rep["mass_reference"] = raster.mass_reference;
  rep["mass_spatial"] = raster.mass_spatial;
  std::string path = s.outdir + "/magnetostatics.json";
  write_text_atomic(path, rep.dump(2) + "\n");

  // demagnetizing-field slice through the grid center
  CsvWriter slice({"z", "hd_x", "hd_y"});
  int jmid = grid.dim() == 2 ? grid.n() / 2 : 0;
  for (int i = 0; i < grid.n(); ++i) {
    int node = grid.node_index(i, jmid);
    slice.append({grid.node(node)[0], -pot.grad(node, 0),
                  grid.dim() == 2 ? -pot.grad(node, 1) : 0.0});
  }
  slice.write(s.outdir + "/demag_slice.csv");
  write_manifest(s.outdir, s.cfg.resolved(),
                 {path, s.outdir + "/demag_slice.csv"});
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int run_check_model(const CommonOpts& opts) {
  Setup s = prepare(opts);
  if (opts.validate_only) return 0;
  SampleSpec spec;
  spec.dim = s.mesh.dim();
  spec.seed = s.cfg.seed();
  AssumptionReport rep = check_assumptions(s.material, spec);
  json out = json::array();
  for (const auto& c : rep.checks)
    out.push_back({{"name", c.name},
                   {"passed", c.passed},
                   {"worst_margin", c.worst_margin},
                   {"worst_point", c.worst_point}});
  json doc;
  doc["checks"] = out;
  doc["all_passed"] = rep.all_passed();
  std::string path = s.outdir + "/model_check.json";
  write_text_atomic(path, doc.dump(2) + "\n");
  write_manifest(s.outdir, s.cfg.resolved(), {path});
  std::cout << doc.dump(2) << "\n";
  if (!rep.all_passed())
    throw ConfigError("material model violates a declared assumption");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "melsim: Galerkin bench for magneto-chemo-thermo-elastic solids"};
  app.require_subcommand(1);

  CommonOpts o_sim, o_audit, o_static, o_kernel, o_mag, o_model;
  CLI::App* c_sim = app.add_subcommand("simulate", "run the dynamic system");
  add_common(c_sim, o_sim);
  CLI::App* c_audit =
      app.add_subcommand("audit", "re-run and emit the energy audit only");
  add_common(c_audit, o_audit);
  CLI::App* c_static =
      app.add_subcommand("static-min", "solve the static minimization");
  add_common(c_static, o_static);
  CLI::App* c_kernel =
      app.add_subcommand("kernel-check", "verify the nonlocal kernel");
  add_common(c_kernel, o_kernel);
  CLI::App* c_mag =
      app.add_subcommand("magnetostatics", "spatial-frame field solve");
  add_common(c_mag, o_mag);
  CLI::App* c_model =
      app.add_subcommand("check-model", "sampled constitutive checks");
  add_common(c_model, o_model);

  CLI11_PARSE(app, argc, argv);

  auto guarded = [&](auto fn) {
    try {
      return fn();
    } catch (const ConfigError& e) {
      nlohmann::json err{{"error", "validation"}, {"message", e.what()}};
      std::cerr << err.dump() << "\n";
      return 2;
    } catch (const mel::Error& e) {
      nlohmann::json err{{"error", "solver"}, {"message", e.what()}};
      std::cerr << err.dump() << "\n";
      return 3;
    } catch (const std::exception& e) {
      nlohmann::json err{{"error", "internal"}, {"message", e.what()}};
      std::cerr << err.dump() << "\n";
      return 3;
    }
  };

  if (c_sim->parsed()) return guarded([&] { return run_simulate(o_sim, false); });
  if (c_audit->parsed())
    return guarded([&] { return run_simulate(o_audit, true); });
  if (c_static->parsed()) return guarded([&] { return run_static(o_static); });
  if (c_kernel->parsed())
    return guarded([&] { return run_kernel_check(o_kernel); });
  if (c_mag->parsed())
    return guarded([&] { return run_magnetostatics(o_mag); });
  if (c_model->parsed())
    return guarded([&] { return run_check_model(o_model); });
  return 1;
}
