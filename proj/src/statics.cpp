#include "mel/statics.hpp"

#include <deque>

#include "mel/kinematics.hpp"
#include "mel/parallel.hpp"

namespace mel {

StaticProblem::StaticProblem(MaterialModel model, KernelSpec kernel,
                             std::shared_ptr<const SplineSpace> space,
                             LoadSet loads, double z_tot, double s_tot,
                             StaticSettings settings)
    : model_(std::move(model)), kernel_(kernel), space_(std::move(space)),
      loads_(std::move(loads)), z_tot_(z_tot), s_tot_(s_tot),
      set_(settings) {
  const Mesh& mesh = space_->mesh();
  quad_ = std::make_shared<Quadrature>(space_, space_->degree() + 1);
  bquad_neumann_ = std::make_shared<BoundaryQuadrature>(
      space_, mesh.has_tag("neumann") ? "neumann" : "all",
      space_->degree() + 1);
  hyper_ = std::make_shared<GagliardoForm>(kernel_, space_);
  mass_ = mass_matrix(*quad_);
  stiffness_ = stiffness_matrix(*quad_);
  ones_functional_ =
      project(*quad_, MatrixXd::Ones(quad_->total_points(), 1)).col(0);

  if (!mesh.has_tag("dirichlet") || mesh.sides("dirichlet").empty())
    throw ConfigError("statics: the Dirichlet part of the boundary is empty");
  std::set<int> pinned;
  for (int side : mesh.sides("dirichlet"))
    for (int dof : space_->side_dofs(side)) pinned.insert(dof);
  dirichlet_dofs_.assign(pinned.begin(), pinned.end());
  chi_dirichlet_ = space_->interpolate(
      [](const VectorXd& x) { return x; }, space_->dim());

  if (set_.use_demag) {
    VectorXd blo(space_->dim()), bhi(space_->dim());
    for (int a = 0; a < space_->dim(); ++a) {
      blo[a] = mesh.lo(a);
      bhi[a] = mesh.hi(a);
    }
    grid_ = SpatialGrid::around(blo, bhi, set_.grid_margin, set_.grid_nodes);
  }
}

double StaticProblem::uniform_entropy(const MaterialModel& model, double zeta,
                                      double theta_ref, int dim) {
  return -model.psith->dtheta(VectorXd::Zero(dim), zeta, theta_ref);
}

StaticState StaticProblem::ground_state(double theta_ref) const {
  const int n = space_->size();
  const int d = space_->dim();
  StaticState st;
  st.chi = chi_dirichlet_;
  st.m = MatrixXd::Zero(n, d);
  double zeta0 = z_tot_ / space_->mesh().volume();
  st.zeta = VectorXd::Constant(n, zeta0);
  double s0 = uniform_entropy(model_, zeta0, theta_ref, d);
  st.s = VectorXd::Constant(n, s0);
  return st;
}

double StaticProblem::j_min(const StaticState& st) const {
  DiscreteField chi{space_, st.chi};
  return min_determinant_monitor(chi, *quad_).j_min;
}

GapReport StaticProblem::gap_report(const StaticState& st,
                                    int n_samples) const {
  DiscreteField chi{space_, st.chi};
  return ciarlet_necas_gap(chi, *quad_, n_samples, set_.seed);
}

VectorXd StaticProblem::temperature_from_entropy(const StaticState& st) const {
  Samples sm = sample_field(*quad_, st.m, 0);
  Samples sz = sample_field(*quad_, st.zeta, 0);
  Samples ss = sample_field(*quad_, st.s, 0);
  const int P = quad_->total_points();
  VectorXd theta(P);
  for (int p = 0; p < P; ++p)
    theta[p] = temperature_from_entropy_point(
        model_, sm.val.row(p).transpose(), sz.val(p, 0), ss.val(p, 0));
  return theta;
}

double StaticProblem::eval_physical(const StaticState& st, StaticState* grad,
                                    StaticEnergyReport* rep) const {
  const SplineSpace& sp = *space_;
  const int d = sp.dim();
  const int n = sp.size();
  const int P = quad_->total_points();

  Samples schi = sample_field(*quad_, st.chi, 1);
  Samples sm = sample_field(*quad_, st.m, 1);
  Samples szeta = sample_field(*quad_, st.zeta, 1);
  Samples ss = sample_field(*quad_, st.s, 0);

  if (grad != nullptr) {
    grad->chi = MatrixXd::Zero(n, d);
    grad->m = MatrixXd::Zero(n, d);
    grad->zeta = VectorXd::Zero(n);
    grad->s = VectorXd::Zero(n);
  }

  // Bulk entropy-form energy plus Zeeman, pointwise over quadrature.
  MatrixXd bulk_dF(P, d * d);
  MatrixXd bulk_dm(P, d), zeeman_dm(P, d);
  VectorXd bulk_dz(P), bulk_ds(P), bulk_val(P), zee_val(P);
  MatrixXd zee_dchi_val(P, d);   // (grad h)^T F m : multiplies phi_a
  MatrixXd zee_dchi_grad(P, d * d);  // h (x) m : multiplies grad phi_a
  bool ok = true;
  for (int p = 0; p < P && ok; ++p) {
    MatrixXd f(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) f(i, j) = schi.grad(p, i * d + j);
    double jdet = det_f(f);
    if (jdet <= 1e-10) {
      ok = false;
      break;
    }
    VectorXd m = sm.val.row(p).transpose();
    double zeta = szeta.val(p, 0);
    double s = ss.val(p, 0);
    double theta;
    try {
      theta = temperature_from_entropy_point(model_, m, zeta, s);
    } catch (const OutOfRange&) {
      ok = false;
      break;
    }
    bulk_val[p] = psi_me(model_, f, m, zeta) +
                  model_.psith->value(m, zeta, theta) + theta * s;
    MatrixXd stress = eval_stress(model_, f, m, zeta);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) bulk_dF(p, i * d + j) = stress(i, j);
    bulk_dm.row(p) = (model_.phi->dm(f, m, zeta) +
                      model_.psith->dm(m, zeta, theta))
                         .transpose();
    bulk_dz[p] = model_.phi->dzeta(f, m, zeta) +
                 model_.psith->dzeta(m, zeta, theta);
    bulk_ds[p] = theta;

    // Zeeman density h_e . m with h_e = F^T h_sp(chi).
    VectorXd z = schi.val.row(p).transpose();
    VectorXd hsp = loads_.h_e.value(z, 0.0);
    MatrixXd hgrad = loads_.h_e.grad(z, 0.0);
    VectorXd he = f.transpose() * hsp;
    zee_val[p] = he.dot(m);
    zeeman_dm.row(p) = he.transpose();
    zee_dchi_val.row(p) = (hgrad.transpose() * (f * m)).transpose();
    MatrixXd hm = hsp * m.transpose();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) zee_dchi_grad(p, i * d + j) = hm(i, j);
  }
  if (!ok) return kInf;

  double e_bulk = integrate(*quad_, bulk_val);
  double e_zee = integrate(*quad_, zee_val);

  double e_exch = 0.0, e_intf = 0.0;
  for (int i = 0; i < d; ++i)
    e_exch += 0.5 * model_.kappa1 *
              st.m.col(i).dot(stiffness_ * st.m.col(i));
  e_intf = 0.5 * model_.kappa2 * st.zeta.dot(stiffness_ * st.zeta);

  double e_hyper = 0.0;
  const MatrixXd& b = hyper_->matrix();
  for (int i = 0; i < d; ++i)
    e_hyper += 0.5 * st.chi.col(i).dot(b * st.chi.col(i));

  // Dead loads (static values of the load families).
  double e_load = 0.0;
  {
    VectorXd fdens(P);
    for (int p = 0; p < P; ++p) {
      VectorXd x = quad_->points().row(p).transpose();
      fdens[p] = loads_.f.value(x, 0.0).dot(schi.val.row(p).transpose());
    }
    e_load += integrate(*quad_, fdens);
    MatrixXd chib = sample_boundary(*bquad_neumann_, st.chi);
    int row = 0;
    for (const auto& fac : bquad_neumann_->facets())
      for (int k = 0; k < fac.w.size(); ++k, ++row) {
        VectorXd x = fac.pts.row(k).transpose();
        e_load += fac.w[k] *
                  loads_.g.value(x, 0.0).dot(chib.row(row).transpose());
      }
  }

  // Magnetostatics on the truncation grid via smooth deposition.
  double e_mag = 0.0, e_mag_edge = 0.0;
  Deposited dep;
  PotentialSolution pot;
  if (grid_) {
    DiscreteField chi{space_, st.chi};
    DiscreteField m{space_, st.m};
    dep = deposit_magnetization(chi, m, *grid_, set_.deposit_sub);
    // the mapped body must stay inside the truncation box
    for (int r = 0; r < dep.sample_x.rows(); ++r) {
      VectorXd z = chi.value(dep.sample_x.row(r).transpose());
      for (int a = 0; a < d; ++a)
        if (z[a] < grid_->lo()[a] + 2 * grid_->h(a) ||
            z[a] > grid_->hi()[a] - 2 * grid_->h(a))
          return kInf;
    }
    pot = solve_scalar_potential(*grid_, dep.m_bar, set_.cg_tol);
    e_mag = pot.energy_pairing;
    e_mag_edge = pot.energy;
  }

  double total = e_bulk + e_exch + e_intf + e_hyper + e_mag - e_load - e_zee;

  if (rep != nullptr) {
    rep->bulk_internal = e_bulk;
    rep->exchange = e_exch;
    rep->interfacial = e_intf;
    rep->hyperstress = e_hyper;
    rep->magnetostatic = e_mag;
    rep->magnetostatic_edge = e_mag_edge;
    rep->load_potential = e_load;
    rep->zeeman = e_zee;
    rep->total = total;
    // Referential form of the magnetostatic pairing for the cross-check.
    if (grid_) {
      DiscreteField chi{space_, st.chi};
      DiscreteField m{space_, st.m};
      VectorXd dens(P);
      for (int p = 0; p < P; ++p) {
        VectorXd x = quad_->points().row(p).transpose();
        VectorXd z = chi.value(x);
        MatrixXd f = chi.gradient(x);
        // bilinear interpolation of the node gradient
        VectorXd gu = VectorXd::Zero(d);
        std::vector<int> nodes;
        VectorXd w;
        MatrixXd dw;
        deposition_stencil(*grid_, z, nodes, w, dw);
        for (size_t t = 0; t < nodes.size(); ++t)
          if (nodes[t] >= 0) gu += w[t] * pot.grad.row(nodes[t]).transpose();
        dens[p] = (f.transpose() * gu).dot(m.value(x));
      }
      rep->magnetostatic_referential = 0.5 * grid_->mu0() *
                                       integrate(*quad_, dens);
    }
  }

  if (grad == nullptr) return total;

  // --- assembled first variation ---
  const auto& cells = quad_->cells();
  std::vector<MatrixXd> gchi_loc(cells.size()), gm_loc(cells.size());
  std::vector<VectorXd> gz_loc(cells.size()), gs_loc(cells.size());
  parallel_for_blocks((int)cells.size(), [&](int c) {
    const auto& cell = cells[c];
    const int nloc = (int)cell.dofs.size();
    MatrixXd gc = MatrixXd::Zero(nloc, d), gm = MatrixXd::Zero(nloc, d);
    VectorXd gz = VectorXd::Zero(nloc), gs = VectorXd::Zero(nloc);
    for (int k = 0; k < cell.w.size(); ++k) {
      int p = cell.offset + k;
      double w = cell.w[k];
      for (int a = 0; a < nloc; ++a) {
        double na = cell.N(k, a);
        for (int i = 0; i < d; ++i) {
          double acc = 0.0;
          for (int j = 0; j < d; ++j)
            acc += (bulk_dF(p, i * d + j) - zee_dchi_grad(p, i * d + j)) *
                   cell.dN[k](a, j);
          // body force and Zeeman value terms
          VectorXd x = cell.pts.row(k).transpose();
          acc -= (zee_dchi_val(p, i) + loads_.f.value(x, 0.0)[i]) * na;
          gc(a, i) += w * acc;
          gm(a, i) += w * (bulk_dm(p, i) - zeeman_dm(p, i)) * na;
        }
        gz[a] += w * bulk_dz[p] * na;
        gs[a] += w * bulk_ds[p] * na;
      }
    }
    gchi_loc[c] = gc;
    gm_loc[c] = gm;
    gz_loc[c] = gz;
    gs_loc[c] = gs;
  });
  for (size_t c = 0; c < cells.size(); ++c)
    for (size_t a = 0; a < cells[c].dofs.size(); ++a) {
      grad->chi.row(cells[c].dofs[a]) += gchi_loc[c].row(a);
      grad->m.row(cells[c].dofs[a]) += gm_loc[c].row(a);
      grad->zeta[cells[c].dofs[a]] += gz_loc[c][a];
      grad->s[cells[c].dofs[a]] += gs_loc[c][a];
    }

  // quadratic terms
  for (int i = 0; i < d; ++i) {
    grad->chi.col(i) += b * st.chi.col(i);
    grad->m.col(i) += model_.kappa1 * (stiffness_ * st.m.col(i));
  }
  grad->zeta += model_.kappa2 * (stiffness_ * st.zeta);

  // traction part of the load potential
  {
    int row = 0;
    for (const auto& fac : bquad_neumann_->facets())
      for (int k = 0; k < fac.w.size(); ++k, ++row) {
        VectorXd gval = loads_.g.value(fac.pts.row(k).transpose(), 0.0);
        for (size_t a = 0; a < fac.dofs.size(); ++a)
          grad->chi.row(fac.dofs[a]) -=
              fac.w[k] * fac.N(k, a) * gval.transpose();
      }
  }

  // magnetostatic chain through the deposition
  if (grid_) {
    DiscreteField chi{space_, st.chi};
    DiscreteField m{space_, st.m};
    const double vg = grid_->cell_volume();
    const int gn = grid_->n();
    // dE/dm_bar with zero extension outside the box
    MatrixXd gbar = MatrixXd::Zero(grid_->total_nodes(), d);
    auto uval = [&](int i, int j) {
      if (i < 0 || i >= gn || j < 0 || j >= gn) return 0.0;
      return pot.phi[grid_->node_index(i, j)];
    };
    for (int idx = 0; idx < grid_->total_nodes(); ++idx) {
      if (d == 1) {
        int i = idx;
        gbar(idx, 0) = grid_->mu0() * vg * (uval(i + 1, 0) - uval(i - 1, 0)) /
                       (2.0 * grid_->h(0));
      } else {
        int i = idx % gn, j = idx / gn;
        gbar(idx, 0) = grid_->mu0() * vg * (uval(i + 1, j) - uval(i - 1, j)) /
                       (2.0 * grid_->h(0));
        gbar(idx, 1) = grid_->mu0() * vg * (uval(i, j + 1) - uval(i, j - 1)) /
                       (2.0 * grid_->h(1));
      }
    }
    std::vector<int> nodes, dofs;
    VectorXd wdep, vals;
    MatrixXd dwdep, grads, hess;
    const double inv_vol = 1.0 / vg;
    for (int r = 0; r < dep.sample_x.rows(); ++r) {
      VectorXd x = dep.sample_x.row(r).transpose();
      VectorXd z = chi.value(x);
      MatrixXd f = chi.gradient(x);
      VectorXd mv = m.value(x);
      VectorXd fm = f * mv;
      deposition_stencil(*grid_, z, nodes, wdep, dwdep);
      // W h = sum_g w_g gbar_g, G1 = sum_g (gbar_g . fm) dW_g
      VectorXd wh = VectorXd::Zero(d), g1 = VectorXd::Zero(d);
      for (size_t t = 0; t < nodes.size(); ++t) {
        if (nodes[t] < 0) continue;
        wh += wdep[t] * gbar.row(nodes[t]).transpose();
        g1 += (gbar.row(nodes[t]).dot(fm.transpose())) *
              dwdep.row(t).transpose();
      }
      double scale = inv_vol * dep.sample_w[r];
      sp.local_basis(x, 1, dofs, vals, grads, hess);
      for (size_t a = 0; a < dofs.size(); ++a) {
        for (int i = 0; i < d; ++i) {
          // through the mapped position and through F
          grad->chi(dofs[a], i) +=
              scale * (vals[a] * g1[i] +
                       wh[i] * grads.row(a).dot(mv.transpose()));
          grad->m(dofs[a], i) +=
              scale * vals[a] * (f.transpose() * wh)[i];
        }
      }
    }
  }
  return total;
}

double StaticProblem::energy_and_gradient(const StaticState& st,
                                          StaticState* grad) const {
  return eval_physical(st, grad, nullptr);
}

StaticEnergyReport StaticProblem::total_static_energy(
    const StaticState& st) const {
  StaticEnergyReport rep;
  double total = eval_physical(st, nullptr, &rep);
  if (!std::isfinite(total)) {
    DiscreteField chi{space_, st.chi};
    auto mon = min_determinant_monitor(chi, *quad_);
    if (mon.j_min <= 0.0)
      throw DegenerateDeformation("total_static_energy: det(grad chi) <= 0");
    throw OutOfRange("total_static_energy: state outside the energy domain");
  }
  return rep;
}

namespace {

struct PackedLayout {
  int n, d;
  std::vector<int> free_chi;  // scalar dofs not pinned by Dirichlet data
  int size() const {
    return (int)free_chi.size() * d + n * d + 2 * n;
  }
};

VectorXd pack(const PackedLayout& lay, const StaticState& st) {
  VectorXd u(lay.size());
  int off = 0;
  for (int i = 0; i < lay.d; ++i)
    for (int a : lay.free_chi) u[off++] = st.chi(a, i);
  for (int i = 0; i < lay.d; ++i)
    for (int a = 0; a < lay.n; ++a) u[off++] = st.m(a, i);
  for (int a = 0; a < lay.n; ++a) u[off++] = st.zeta[a];
  for (int a = 0; a < lay.n; ++a) u[off++] = st.s[a];
  return u;
}

void unpack(const PackedLayout& lay, const VectorXd& u, StaticState& st) {
  int off = 0;
  for (int i = 0; i < lay.d; ++i)
    for (int a : lay.free_chi) st.chi(a, i) = u[off++];
  for (int i = 0; i < lay.d; ++i)
    for (int a = 0; a < lay.n; ++a) st.m(a, i) = u[off++];
  for (int a = 0; a < lay.n; ++a) st.zeta[a] = u[off++];
  for (int a = 0; a < lay.n; ++a) st.s[a] = u[off++];
}

VectorXd pack_grad(const PackedLayout& lay, const StaticState& g) {
  StaticState copy = g;
  return pack(lay, copy);
}

}  // namespace

MinimizeResult StaticProblem::minimize(const StaticState& init) const {
  const int n = space_->size();
  const int d = space_->dim();
  const double meas = space_->mesh().volume();
  const double tol_cn = set_.tol_cn_factor * meas;

  {
    DiscreteField chi{space_, init.chi};
    auto mon = min_determinant_monitor(chi, *quad_);
    if (mon.j_min <= 0.0)
      throw DegenerateDeformation(
          "minimize: infeasible initial guess, det(grad chi) <= 0");
  }
  if (!std::isfinite(eval_physical(init, nullptr, nullptr)))
    throw OutOfRange("minimize: initial guess has infinite energy");

  PackedLayout lay;
  lay.n = n;
  lay.d = d;
  {
    std::set<int> pinned(dirichlet_dofs_.begin(), dirichlet_dofs_.end());
    for (int a = 0; a < n; ++a)
      if (!pinned.count(a)) lay.free_chi.push_back(a);
  }

  // Constraint normals in packed coordinates (disjoint blocks).
  const int nfree = (int)lay.free_chi.size();
  const int off_zeta = nfree * d + n * d;
  const int off_s = off_zeta + n;
  VectorXd a1 = VectorXd::Zero(off_s + n), a2 = VectorXd::Zero(off_s + n);
  a1.segment(off_zeta, n) = ones_functional_;
  a2.segment(off_s, n) = ones_functional_;
  double a_sq = ones_functional_.squaredNorm();

  auto project_tangent = [&](VectorXd& v) {
    v.segment(off_zeta, n) -=
        (ones_functional_.dot(v.segment(off_zeta, n)) / a_sq) *
        ones_functional_;
    v.segment(off_s, n) -= (ones_functional_.dot(v.segment(off_s, n)) / a_sq) *
                           ones_functional_;
  };

  StaticState st = init;
  st.chi = init.chi;  // pinned rows keep their Dirichlet values
  VectorXd u = pack(lay, st);

  double lambda1 = 0.0, lambda2 = 0.0;
  double rho = set_.al_rho;
  double w_cn = set_.cn_weight;

  auto constraints = [&](const StaticState& s2, double& c1, double& c2) {
    c1 = ones_functional_.dot(s2.zeta) - z_tot_;
    c2 = ones_functional_.dot(s2.s) - s_tot_;
  };

  // Objective with multipliers and penalties. Returns +inf when the trial
  // is inadmissible (negative determinant or out of the energy domain).
  auto eval_al = [&](const VectorXd& uvec, StaticState& scratch,
                     VectorXd* gout, double* phys, double* gap_out) -> double {
    unpack(lay, uvec, scratch);
    StaticState gphys;
    double f = eval_physical(scratch, gout ? &gphys : nullptr, nullptr);
    if (!std::isfinite(f)) return kInf;
    double c1, c2;
    constraints(scratch, c1, c2);
    double gap = 0.0;
    if (set_.trace_gap_samples > 0)
      gap = gap_report(scratch, set_.trace_gap_samples).gap;
    if (gap_out != nullptr) *gap_out = gap;
    double pen = std::max(gap, 0.0);
    double val = f + lambda1 * c1 + lambda2 * c2 +
                 0.5 * rho * (c1 * c1 + c2 * c2) + w_cn * pen * pen;
    if (phys != nullptr) *phys = f;
    if (gout != nullptr) {
      VectorXd g = pack_grad(lay, gphys);
      g.segment(off_zeta, n) += (lambda1 + rho * c1) * ones_functional_;
      g.segment(off_s, n) += (lambda2 + rho * c2) * ones_functional_;
      if (pen > 0.0) {
        // gradient of the volume integral of det(grad chi)
        Samples schi = sample_field(*quad_, scratch.chi, 1);
        MatrixXd gj = MatrixXd::Zero(n, d);
        const auto& cells = quad_->cells();
        for (const auto& cell : cells)
          for (int k = 0; k < cell.w.size(); ++k) {
            int p = cell.offset + k;
            MatrixXd fm(d, d);
            for (int i = 0; i < d; ++i)
              for (int j = 0; j < d; ++j) fm(i, j) = schi.grad(p, i * d + j);
            MatrixXd cof = cofactor(fm);
            for (size_t a = 0; a < cell.dofs.size(); ++a)
              for (int i = 0; i < d; ++i)
                gj(cell.dofs[a], i) +=
                    cell.w[k] * cof.row(i).dot(cell.dN[k].row(a));
          }
        StaticState gcn;
        gcn.chi = 2.0 * w_cn * pen * gj;
        gcn.m = MatrixXd::Zero(n, d);
        gcn.zeta = VectorXd::Zero(n);
        gcn.s = VectorXd::Zero(n);
        g += pack_grad(lay, gcn);
      }
      *gout = g;
    }
    return val;
  };

  MinimizeResult result;
  StaticState scratch = st;

  // Least-squares multiplier estimate at the initial point.
  {
    VectorXd g;
    double phys;
    double v = eval_al(u, scratch, &g, &phys, nullptr);
    (void)v;
    lambda1 = -ones_functional_.dot(g.segment(off_zeta, n)) / a_sq;
    lambda2 = -ones_functional_.dot(g.segment(off_s, n)) / a_sq;
  }

  int iter_count = 0;
  for (int round = 0; round < set_.al_rounds; ++round) {
    result.al_rounds_used = round + 1;
    std::deque<VectorXd> s_hist, y_hist;
    VectorXd g;
    double phys, gap;
    double f = eval_al(u, scratch, &g, &phys, &gap);
    if (!std::isfinite(f))
      throw OutOfRange("minimize: initial point of a round is inadmissible");
    bool inner_done = false;
    for (int it = 0; it < set_.max_iters && !inner_done; ++it) {
      VectorXd gproj = g;
      project_tangent(gproj);
      {
        DiscreteField chi{space_, scratch.chi};
        double jm = min_determinant_monitor(chi, *quad_).j_min;
        double c1, c2;
        constraints(scratch, c1, c2);
        result.trace.push_back({iter_count++, phys, gproj.norm(), c1, c2, gap,
                                jm});
      }
      double scale = 1.0 + std::abs(f);
      if (gproj.norm() <= set_.tol_grad * scale) {
        inner_done = true;
        break;
      }
      // L-BFGS two-loop direction on the projected gradient.
      VectorXd q = gproj;
      std::vector<double> alpha(s_hist.size());
      for (int i = (int)s_hist.size() - 1; i >= 0; --i) {
        double rho_i = 1.0 / y_hist[i].dot(s_hist[i]);
        alpha[i] = rho_i * s_hist[i].dot(q);
        q -= alpha[i] * y_hist[i];
      }
      if (!s_hist.empty()) {
        double gamma = s_hist.back().dot(y_hist.back()) /
                       y_hist.back().squaredNorm();
        q *= gamma;
      }
      for (size_t i = 0; i < s_hist.size(); ++i) {
        double rho_i = 1.0 / y_hist[i].dot(s_hist[i]);
        double beta = rho_i * y_hist[i].dot(q);
        q += (alpha[i] - beta) * s_hist[i];
      }
      VectorXd dir = -q;
      project_tangent(dir);
      double gd = g.dot(dir);
      if (gd >= 0.0) {
        dir = -gproj;
        gd = g.dot(dir);
      }
      // Armijo backtracking; inadmissible trials read as +inf.
      double step = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 50; ++ls) {
        VectorXd utrial = u + step * dir;
        double ftrial = eval_al(utrial, scratch, nullptr, nullptr, nullptr);
        if (std::isfinite(ftrial) && ftrial <= f + 1e-4 * step * gd) {
          VectorXd gnew;
          double fnew = eval_al(utrial, scratch, &gnew, &phys, &gap);
          VectorXd svec = step * dir;
          VectorXd yvec = gnew - g;
          if (svec.dot(yvec) > 1e-12 * svec.norm() * yvec.norm()) {
            s_hist.push_back(svec);
            y_hist.push_back(yvec);
            if ((int)s_hist.size() > set_.lbfgs_m) {
              s_hist.pop_front();
              y_hist.pop_front();
            }
          }
          u = utrial;
          f = fnew;
          g = gnew;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted)
        throw LineSearchFailure(
            "minimize: no admissible decrease above machine step size");
    }

    unpack(lay, u, scratch);
    double c1, c2;
    constraints(scratch, c1, c2);
    lambda1 += rho * c1;
    lambda2 += rho * c2;
    bool feasible = std::abs(c1) <= set_.tol_con &&
                    std::abs(c2) <= set_.tol_con && gap <= tol_cn;
    if (inner_done && feasible) {
      result.converged = true;
      break;
    }
    if (!feasible) {
      rho *= 10.0;
      if (gap > tol_cn) w_cn *= 10.0;
    }
  }

  result.state = st;
  unpack(lay, u, result.state);
  result.lambda_zeta = lambda1;
  result.lambda_s = lambda2;
  result.energy = eval_physical(result.state, nullptr, nullptr);
  result.j_min = j_min(result.state);
  result.final_gap = gap_report(result.state, set_.final_gap_samples).gap;
  return result;
}

}  // namespace mel
