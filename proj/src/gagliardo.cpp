#include "mel/gagliardo.hpp"

#include <cmath>

#include "mel/parallel.hpp"
#include "mel/quadrature.hpp"

namespace mel {

namespace {

struct Box {
  VectorXd lo, hi;
};

Box cell_box(const Mesh& mesh, int c) {
  int d = mesh.dim();
  int c0 = d == 1 ? c : c % mesh.cells(0);
  int c1 = d == 1 ? 0 : c / mesh.cells(0);
  Box b;
  b.lo.resize(d);
  b.hi.resize(d);
  b.lo[0] = mesh.lo(0) + c0 * mesh.h(0);
  b.hi[0] = b.lo[0] + mesh.h(0);
  if (d == 2) {
    b.lo[1] = mesh.lo(1) + c1 * mesh.h(1);
    b.hi[1] = b.lo[1] + mesh.h(1);
  }
  return b;
}

double grading_exponent(double gamma) {
  double k = std::ceil(1.0 / (1.0 - gamma)) + 1.0;
  return std::min(8.0, std::max(2.0, k));
}

// Nodes for int_0^rmax f(r) dr with f ~ r^{small} at 0: r = rmax t^kappa.
template <typename Fn>
void radial_graded(const GaussRule& g01, double rmax, double kappa, Fn&& fn) {
  for (int i = 0; i < g01.nodes.size(); ++i) {
    double t = 0.5 * (1.0 + g01.nodes[i]);
    double wt = 0.5 * g01.weights[i];
    double r = rmax * std::pow(t, kappa);
    double wr = rmax * kappa * std::pow(t, kappa - 1.0) * wt;
    fn(r, wr);
  }
}

// Radial rule on (0, rcap] split at known integrand breakpoints (cell
// crossings, kernel ramp radii): graded toward 0 on the first segment,
// plain Gauss on the rest.
template <typename Fn>
void radial_segmented(const GaussRule& g01, double rcap, double kappa,
                      std::vector<double>& breaks, Fn&& fn) {
  breaks.erase(std::remove_if(breaks.begin(), breaks.end(),
                              [&](double b) {
                                return !(b > 1e-14 * rcap) || b >= rcap;
                              }),
               breaks.end());
  std::sort(breaks.begin(), breaks.end());
  breaks.push_back(rcap);
  double lo = 0.0;
  for (double hi : breaks) {
    if (hi - lo < 1e-14 * rcap) {
      lo = hi;
      continue;
    }
    if (lo == 0.0) {
      radial_graded(g01, hi, kappa, fn);
    } else {
      for (int i = 0; i < g01.nodes.size(); ++i) {
        double r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * g01.nodes[i];
        fn(r, 0.5 * (hi - lo) * g01.weights[i]);
      }
    }
    lo = hi;
  }
}

// Breakpoints of the pair integrand along direction omega: the inner
// overlap width kinks where u_a crosses the cell offset, and the kernel
// ramp starts/ends.
std::vector<double> pair_ray_breaks(const KernelSpec& kernel, int d,
                                    const VectorXd& delta,
                                    const VectorXd& omega) {
  std::vector<double> b{kernel.cutoff, kernel.support()};
  for (int a = 0; a < d; ++a) {
    if (std::abs(omega[a]) < 1e-14) continue;
    double r = delta[a] / omega[a];
    if (r > 0.0) b.push_back(r);
  }
  return b;
}

// Nodes for int_delta0^rmax f(r) dr, log-spaced (smooth power integrands).
template <typename Fn>
void radial_log(const GaussRule& g01, double delta0, double rmax, Fn&& fn) {
  if (rmax <= delta0) return;
  double l = std::log(rmax / delta0);
  for (int i = 0; i < g01.nodes.size(); ++i) {
    double t = 0.5 * (1.0 + g01.nodes[i]);
    double wt = 0.5 * g01.weights[i];
    double r = delta0 * std::exp(t * l);
    fn(r, wt * l * r);
  }
}

// Signed polar fan over a rectangle in relative coordinates (singular
// point at the origin). Sweeps are additionally split at the coordinate
// axis directions, where the overlap widths |u_a| kink. fn(omega, rmax,
// wphi) per angular node.
template <typename Fn>
void fan_rectangle(const VectorXd& lo, const VectorXd& hi,
                   const GaussRule& gphi, Fn&& fn) {
  Eigen::Vector2d v[4] = {{lo[0], lo[1]}, {hi[0], lo[1]},
                          {hi[0], hi[1]}, {lo[0], hi[1]}};
  for (int e = 0; e < 4; ++e) {
    Eigen::Vector2d a = v[e], b = v[(e + 1) % 4];
    double cross = a.x() * b.y() - a.y() * b.x();
    if (std::abs(cross) < 1e-14 * (a.norm() * b.norm() + 1e-300)) continue;
    double phi_a = std::atan2(a.y(), a.x());
    double phi_b = std::atan2(b.y(), b.x());
    double dphi = phi_b - phi_a;
    while (dphi > M_PI) dphi -= 2.0 * M_PI;
    while (dphi < -M_PI) dphi += 2.0 * M_PI;
    if (std::abs(dphi) < 1e-14) continue;
    double sweep = std::abs(dphi);
    double sgn = dphi >= 0 ? 1.0 : -1.0;
    std::vector<double> cuts{0.0, sweep};
    for (int quadrant = 0; quadrant < 4; ++quadrant) {
      double axis = 0.5 * M_PI * quadrant;
      double t = sgn * (axis - phi_a);
      t = std::fmod(t, 2.0 * M_PI);
      if (t < 0) t += 2.0 * M_PI;
      if (t > 1e-12 && t < sweep - 1e-12) cuts.push_back(t);
    }
    std::sort(cuts.begin(), cuts.end());
    Eigen::Vector2d n(-(b - a).y(), (b - a).x());
    double c = n.dot(a);
    for (size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
      double t0 = cuts[seg], t1 = cuts[seg + 1];
      if (t1 - t0 < 1e-14) continue;
      for (int i = 0; i < gphi.nodes.size(); ++i) {
        double t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * gphi.nodes[i];
        double phi = phi_a + sgn * t;
        double wphi = sgn * 0.5 * (t1 - t0) * gphi.weights[i];
        Eigen::Vector2d omega(std::cos(phi), std::sin(phi));
        double den = n.dot(omega);
        if (std::abs(den) < 1e-300) continue;
        double rmax = c / den;
        if (!(rmax > 0.0) || !std::isfinite(rmax)) continue;
        fn(omega, rmax, wphi);
      }
    }
  }
}

// Ordered-pair integral of k(|x-xt|) F(x, xt) over C x Cp for adjacent or
// identical cells, in relative coordinates with graded radial quadrature.
// accum(x, xt, w) receives the full pair weight (kernel included).
template <typename Accum>
void near_pair(const KernelSpec& kernel, int d, const Box& c, const Box& cp,
               const PairQuadSpec& spec, double kappa, Accum&& accum) {
  GaussRule grad01 = gauss_legendre(spec.n_rad);
  GaussRule gphi = gauss_legendre(spec.n_phi);
  GaussRule ginner = gauss_legendre(spec.n_inner);
  double rsup = kernel.support();

  // Inner integral over x in C cap (Cp - u) at fixed relative offset u.
  auto inner = [&](const VectorXd& u, double wu) {
    VectorXd xlo(d), xhi(d);
    for (int a = 0; a < d; ++a) {
      xlo[a] = std::max(c.lo[a], cp.lo[a] - u[a]);
      xhi[a] = std::min(c.hi[a], cp.hi[a] - u[a]);
      if (xhi[a] <= xlo[a]) return;
    }
    if (d == 1) {
      for (int i = 0; i < spec.n_inner; ++i) {
        VectorXd x(1);
        x[0] = 0.5 * (xlo[0] + xhi[0]) +
               0.5 * (xhi[0] - xlo[0]) * ginner.nodes[i];
        double wx = 0.5 * (xhi[0] - xlo[0]) * ginner.weights[i];
        accum(x, x + u, wu * wx);
      }
    } else {
      for (int j = 0; j < spec.n_inner; ++j)
        for (int i = 0; i < spec.n_inner; ++i) {
          VectorXd x(2);
          x[0] = 0.5 * (xlo[0] + xhi[0]) +
                 0.5 * (xhi[0] - xlo[0]) * ginner.nodes[i];
          x[1] = 0.5 * (xlo[1] + xhi[1]) +
                 0.5 * (xhi[1] - xlo[1]) * ginner.nodes[j];
          double wx = 0.25 * (xhi[0] - xlo[0]) * (xhi[1] - xlo[1]) *
                      ginner.weights[i] * ginner.weights[j];
          accum(x, x + u, wu * wx);
        }
    }
  };

  VectorXd ulo(d), uhi(d), delta(d);
  for (int a = 0; a < d; ++a) {
    ulo[a] = cp.lo[a] - c.hi[a];
    uhi[a] = cp.hi[a] - c.lo[a];
    delta[a] = cp.lo[a] - c.lo[a];  // kink of the overlap width
  }
  if (d == 1) {
    for (int side = 0; side < 2; ++side) {
      double end = side == 0 ? ulo[0] : uhi[0];
      if (std::abs(end) < 1e-300) continue;
      double rmax = std::min(std::abs(end), rsup);
      if (rmax <= 0.0) continue;
      double sgn = end > 0 ? 1.0 : -1.0;
      VectorXd omega(1);
      omega[0] = sgn;
      std::vector<double> breaks = pair_ray_breaks(kernel, 1, delta, omega);
      radial_segmented(grad01, rmax, kappa, breaks,
                       [&](double r, double wr) {
                         double kv = kernel.k(r, 1);
                         if (kv == 0.0) return;
                         VectorXd u(1);
                         u[0] = sgn * r;
                         inner(u, wr * kv);
                       });
    }
  } else {
    fan_rectangle(ulo, uhi, gphi, [&](const Eigen::Vector2d& omega,
                                      double rmax, double wphi) {
      double rcap = std::min(rmax, rsup);
      if (rcap <= 0.0) return;
      VectorXd om(2);
      om << omega.x(), omega.y();
      std::vector<double> breaks = pair_ray_breaks(kernel, 2, delta, om);
      radial_segmented(grad01, rcap, kappa, breaks,
                       [&](double r, double wr) {
                         double kv = kernel.k(r, 2);
                         if (kv == 0.0) return;
                         VectorXd u(2);
                         u[0] = r * omega.x();
                         u[1] = r * omega.y();
                         inner(u, wphi * wr * r * kv);
                       });
    });
  }
}

int cell_x(const Mesh& mesh, int c) {
  return mesh.dim() == 1 ? c : c % mesh.cells(0);
}
int cell_y(const Mesh& mesh, int c) {
  return mesh.dim() == 1 ? 0 : c / mesh.cells(0);
}

bool near_cells(const Mesh& mesh, int ca, int cb) {
  return std::abs(cell_x(mesh, ca) - cell_x(mesh, cb)) <= 1 &&
         std::abs(cell_y(mesh, ca) - cell_y(mesh, cb)) <= 1;
}

double box_distance(const Box& a, const Box& b) {
  double s = 0.0;
  for (int i = 0; i < a.lo.size(); ++i) {
    double gap = std::max({0.0, b.lo[i] - a.hi[i], a.lo[i] - b.hi[i]});
    s += gap * gap;
  }
  return std::sqrt(s);
}

// Offsets enumerated once per unordered near pair (s = 0 handled alone).
std::vector<std::pair<int, int>> positive_offsets(int d) {
  if (d == 1) return {{1, 0}};
  return {{1, 0}, {-1, 1}, {0, 1}, {1, 1}};
}

// Breakpoints for rays emanating from xp: kernel ramp radii plus mesh
// line crossings (spline tensor fields kink there).
std::vector<double> point_ray_breaks(const KernelSpec& kernel,
                                     const Mesh& mesh, const VectorXd& xp,
                                     const VectorXd& omega) {
  std::vector<double> b{kernel.cutoff, kernel.support()};
  for (int a = 0; a < mesh.dim(); ++a) {
    if (std::abs(omega[a]) < 1e-14) continue;
    for (int line = 0; line <= mesh.cells(a); ++line) {
      double coord = mesh.lo(a) + line * mesh.h(a);
      double r = (coord - xp[a]) / omega[a];
      if (r > 0.0) b.push_back(r);
    }
  }
  return b;
}

MatrixXd fd_grad(const FlatTensorField& g, const VectorXd& x, double h) {
  MatrixXd out(g.len, x.size());
  for (int a = 0; a < x.size(); ++a) {
    VectorXd e = VectorXd::Zero(x.size());
    e[a] = h;
    out.col(a) = (g.value(x + e) - g.value(x - e)) / (2.0 * h);
  }
  return out;
}

}  // namespace

FlatTensorField hessian_field(const DiscreteField& f) {
  FlatTensorField g;
  const int d = f.space->dim();
  g.len = f.rank() * d * d;
  DiscreteField copy = f;
  g.value = [copy](const VectorXd& x) {
    MatrixXd h = copy.space->hessian(copy.coeffs, x);  // rank x d*d
    VectorXd flat(h.rows() * h.cols());
    for (int i = 0; i < h.rows(); ++i)
      for (int jl = 0; jl < h.cols(); ++jl)
        flat[i * h.cols() + jl] = h(i, jl);
    return flat;
  };
  return g;
}

GagliardoForm::GagliardoForm(const KernelSpec& kernel,
                             std::shared_ptr<const SplineSpace> space,
                             PairQuadSpec spec)
    : kernel_(kernel), space_(std::move(space)), spec_(spec) {
  kernel_.validate(space_->dim());
  far_quad_ = std::make_shared<Quadrature>(space_, spec_.n_far);
}

double GagliardoForm::pair_integral(
    const std::function<double(const VectorXd&, const VectorXd&)>& f,
    const PairQuadSpec& spec) const {
  const Mesh& mesh = space_->mesh();
  const int d = mesh.dim();
  const int ncells = mesh.cell_count();
  const double kappa = grading_exponent(kernel_.gamma);
  const auto offsets = positive_offsets(d);
  const auto& fcells = far_quad_->cells();

  return parallel_reduce_blocks(ncells, [&](int ca) {
    double acc = 0.0;
    Box ba = cell_box(mesh, ca);
    // diagonal cell pair
    near_pair(kernel_, d, ba, ba, spec, kappa,
              [&](const VectorXd& x, const VectorXd& xt, double w) {
                acc += w * f(x, xt);
              });
    // adjacent pairs, doubled for the mirrored order
    for (auto [s0, s1] : offsets) {
      int cx = cell_x(mesh, ca) + s0, cy = cell_y(mesh, ca) + s1;
      if (cx < 0 || cx >= mesh.cells(0)) continue;
      if (d == 2 && (cy < 0 || cy >= mesh.cells(1))) continue;
      int cb = d == 1 ? cx : cx + mesh.cells(0) * cy;
      Box bb = cell_box(mesh, cb);
      near_pair(kernel_, d, ba, bb, spec, kappa,
                [&](const VectorXd& x, const VectorXd& xt, double w) {
                  acc += 2.0 * w * f(x, xt);
                });
    }
    // distant pairs (unordered, cb > ca), doubled
    for (int cb = ca + 1; cb < ncells; ++cb) {
      if (near_cells(mesh, ca, cb)) continue;
      Box bb = cell_box(mesh, cb);
      if (box_distance(ba, bb) >= kernel_.support()) continue;
      const auto& qa = fcells[ca];
      const auto& qb = fcells[cb];
      for (int p = 0; p < qa.w.size(); ++p)
        for (int q = 0; q < qb.w.size(); ++q) {
          double r = (qa.pts.row(p) - qb.pts.row(q)).norm();
          double kv = kernel_.k(r, d);
          if (kv == 0.0) continue;
          acc += 2.0 * qa.w[p] * qb.w[q] * kv *
                 f(qa.pts.row(p).transpose(), qb.pts.row(q).transpose());
        }
    }
    return acc;
  });
}

double GagliardoForm::energy(const FlatTensorField& g) const {
  double t = pair_integral(
      [&](const VectorXd& x, const VectorXd& xt) {
        return (g.value(x) - g.value(xt)).squaredNorm();
      },
      spec_);
  return 0.25 * t;
}

double GagliardoForm::energy_bilinear(const FlatTensorField& g,
                                      const FlatTensorField& gt) const {
  double t = pair_integral(
      [&](const VectorXd& x, const VectorXd& xt) {
        return (g.value(x) - g.value(xt)).dot(gt.value(x) - gt.value(xt));
      },
      spec_);
  return 0.5 * t;
}

double GagliardoForm::energy_checked(const FlatTensorField& g,
                                     double rel_tol) const {
  double e1 = energy(g);
  PairQuadSpec finer = spec_;
  finer.n_phi += 4;
  finer.n_rad += 6;
  finer.n_inner += 1;
  double t = pair_integral(
      [&](const VectorXd& x, const VectorXd& xt) {
        return (g.value(x) - g.value(xt)).squaredNorm();
      },
      finer);
  double e2 = 0.25 * t;
  if (std::abs(e1 - e2) > rel_tol * (std::abs(e1) + 1e-300))
    throw QuadratureDivergence(
        "gagliardo_energy: pair quadrature failed its refinement check");
  return e1;
}

const MatrixXd& GagliardoForm::matrix() const {
  if (matrix_ready_) return matrix_;
  const SplineSpace& sp = *space_;
  const Mesh& mesh = sp.mesh();
  const int d = mesh.dim();
  const int n = sp.size();
  const int ncells = mesh.cell_count();
  const double kappa = grading_exponent(kernel_.gamma);
  const auto offsets = positive_offsets(d);
  const auto& fcells = far_quad_->cells();

  struct Local {
    std::vector<int> dofs;
    MatrixXd mat;
  };
  // one bucket of local matrices per source cell (deterministic order)
  std::vector<std::vector<Local>> buckets(ncells);

  parallel_for_blocks(ncells, [&](int ca) {
    Box ba = cell_box(mesh, ca);
    std::vector<int> dofs_a, dofs_b;
    VectorXd vals;
    MatrixXd grads, hx, hxt;

    auto union_dofs = [&](const std::vector<int>& a,
                          const std::vector<int>& b) {
      std::vector<int> u = a;
      for (int dof : b)
        if (std::find(u.begin(), u.end(), dof) == u.end()) u.push_back(dof);
      std::sort(u.begin(), u.end());
      return u;
    };

    auto accumulate_pair = [&](const Box& bb, double factor, Local& loc) {
      near_pair(kernel_, d, ba, bb, spec_, kappa,
                [&](const VectorXd& x, const VectorXd& xt, double w) {
                  sp.local_basis(x, 2, dofs_a, vals, grads, hx);
                  sp.local_basis(xt, 2, dofs_b, vals, grads, hxt);
                  const int nu = (int)loc.dofs.size();
                  MatrixXd diff = MatrixXd::Zero(nu, d * d);
                  for (size_t a = 0; a < dofs_a.size(); ++a) {
                    int u = (int)(std::lower_bound(loc.dofs.begin(),
                                                   loc.dofs.end(),
                                                   dofs_a[a]) -
                                  loc.dofs.begin());
                    diff.row(u) += hx.row(a);
                  }
                  for (size_t b = 0; b < dofs_b.size(); ++b) {
                    int u = (int)(std::lower_bound(loc.dofs.begin(),
                                                   loc.dofs.end(),
                                                   dofs_b[b]) -
                                  loc.dofs.begin());
                    diff.row(u) -= hxt.row(b);
                  }
                  loc.mat.noalias() += (factor * w) * diff * diff.transpose();
                });
    };

    // diagonal
    {
      Local loc;
      loc.dofs = sp.cell_dofs(cell_x(mesh, ca), cell_y(mesh, ca));
      std::sort(loc.dofs.begin(), loc.dofs.end());
      loc.mat = MatrixXd::Zero(loc.dofs.size(), loc.dofs.size());
      accumulate_pair(ba, 1.0, loc);
      buckets[ca].push_back(std::move(loc));
    }
    for (auto [s0, s1] : offsets) {
      int cx = cell_x(mesh, ca) + s0, cy = cell_y(mesh, ca) + s1;
      if (cx < 0 || cx >= mesh.cells(0)) continue;
      if (d == 2 && (cy < 0 || cy >= mesh.cells(1))) continue;
      int cb = d == 1 ? cx : cx + mesh.cells(0) * cy;
      Local loc;
      loc.dofs = union_dofs(sp.cell_dofs(cell_x(mesh, ca), cell_y(mesh, ca)),
                            sp.cell_dofs(cx, cy));
      loc.mat = MatrixXd::Zero(loc.dofs.size(), loc.dofs.size());
      accumulate_pair(cell_box(mesh, cb), 2.0, loc);
      buckets[ca].push_back(std::move(loc));
    }
    // distant pairs from the stored far tables
    for (int cb = ca + 1; cb < ncells; ++cb) {
      if (near_cells(mesh, ca, cb)) continue;
      Box bb = cell_box(mesh, cb);
      if (box_distance(ba, bb) >= kernel_.support()) continue;
      const auto& qa = fcells[ca];
      const auto& qb = fcells[cb];
      Local loc;
      loc.dofs = union_dofs(qa.dofs, qb.dofs);
      const int nu = (int)loc.dofs.size();
      loc.mat = MatrixXd::Zero(nu, nu);
      std::vector<int> map_a(qa.dofs.size()), map_b(qb.dofs.size());
      for (size_t a = 0; a < qa.dofs.size(); ++a)
        map_a[a] = (int)(std::lower_bound(loc.dofs.begin(), loc.dofs.end(),
                                          qa.dofs[a]) -
                         loc.dofs.begin());
      for (size_t b = 0; b < qb.dofs.size(); ++b)
        map_b[b] = (int)(std::lower_bound(loc.dofs.begin(), loc.dofs.end(),
                                          qb.dofs[b]) -
                         loc.dofs.begin());
      MatrixXd diff(nu, d * d);
      for (int p = 0; p < qa.w.size(); ++p)
        for (int q = 0; q < qb.w.size(); ++q) {
          double r = (qa.pts.row(p) - qb.pts.row(q)).norm();
          double kv = kernel_.k(r, d);
          if (kv == 0.0) continue;
          diff.setZero();
          for (size_t a = 0; a < qa.dofs.size(); ++a)
            diff.row(map_a[a]) += qa.d2N[p].row(a);
          for (size_t b = 0; b < qb.dofs.size(); ++b)
            diff.row(map_b[b]) -= qb.d2N[q].row(b);
          loc.mat.noalias() +=
              (2.0 * qa.w[p] * qb.w[q] * kv) * diff * diff.transpose();
        }
      buckets[ca].push_back(std::move(loc));
    }
  });

  // Pair-rule matrix of the ordered double integral: H = 1/2 q^T B q with
  // B = 1/2 * (assembled sum).
  MatrixXd b = MatrixXd::Zero(n, n);
  for (int ca = 0; ca < ncells; ++ca)
    for (const auto& loc : buckets[ca])
      for (size_t i = 0; i < loc.dofs.size(); ++i)
        for (size_t j = 0; j < loc.dofs.size(); ++j)
          b(loc.dofs[i], loc.dofs[j]) += 0.5 * loc.mat(i, j);
  matrix_ = 0.5 * (b + b.transpose());
  matrix_ready_ = true;
  return matrix_;
}

double GagliardoForm::energy(const DiscreteField& chi) const {
  const MatrixXd& b = matrix();
  double e = 0.0;
  for (int i = 0; i < chi.coeffs.cols(); ++i)
    e += 0.5 * chi.coeffs.col(i).dot(b * chi.coeffs.col(i));
  return e;
}

MatrixXd GagliardoForm::force_coefficients(const MatrixXd& chi_coeffs) const {
  return matrix() * chi_coeffs;
}

MatrixXd GagliardoForm::hyperstress_force(const FlatTensorField& g,
                                          const Quadrature& quad) const {
  const Mesh& mesh = space_->mesh();
  const int d = mesh.dim();
  const int ncells = mesh.cell_count();
  const double kappa = grading_exponent(kernel_.gamma);
  const double hmin = d == 1 ? mesh.h(0) : std::min(mesh.h(0), mesh.h(1));
  MatrixXd out(quad.total_points(), g.len);
  GaussRule grad01 = gauss_legendre(spec_.n_rad + 4);
  GaussRule gphi = gauss_legendre(spec_.n_phi + 4);

  parallel_for_blocks(ncells, [&](int cp) {
    const auto& cell = quad.cells()[cp];
    int cpx = cell_x(mesh, cp), cpy = cell_y(mesh, cp);
    // near patch (rectangle of cells within offset 1, clipped)
    int nx0 = std::max(0, cpx - 1), nx1 = std::min(mesh.cells(0) - 1, cpx + 1);
    int ny0 = 0, ny1 = 0;
    if (d == 2) {
      ny0 = std::max(0, cpy - 1);
      ny1 = std::min(mesh.cells(1) - 1, cpy + 1);
    }
    VectorXd patch_lo(d), patch_hi(d);
    patch_lo[0] = mesh.lo(0) + nx0 * mesh.h(0);
    patch_hi[0] = mesh.lo(0) + (nx1 + 1) * mesh.h(0);
    if (d == 2) {
      patch_lo[1] = mesh.lo(1) + ny0 * mesh.h(1);
      patch_hi[1] = mesh.lo(1) + (ny1 + 1) * mesh.h(1);
    }

    for (int k = 0; k < cell.w.size(); ++k) {
      VectorXd xp = cell.pts.row(k).transpose();
      VectorXd gp = g.value(xp);
      MatrixXd dgp = g.grad ? g.grad(xp) : fd_grad(g, xp, 1e-5 * hmin);
      VectorXd acc = VectorXd::Zero(g.len);

      // Taylor-compensated integral over the near patch cells.
      auto near_node = [&](const VectorXd& xt, double w) {
        VectorXd u = xt - xp;
        acc += w * (gp - g.value(xt) + dgp * u);
      };
      if (d == 1) {
        double ends[2] = {patch_lo[0] - xp[0], patch_hi[0] - xp[0]};
        for (double end : ends) {
          if (std::abs(end) < 1e-300) continue;
          double rmax = std::min(std::abs(end), kernel_.support());
          double sgn = end > 0 ? 1.0 : -1.0;
          VectorXd om(1);
          om[0] = sgn;
          std::vector<double> breaks =
              point_ray_breaks(kernel_, mesh, xp, om);
          radial_segmented(grad01, rmax, kappa, breaks,
                           [&](double r, double wr) {
                             double kv = kernel_.k(r, 1);
                             if (kv == 0.0) return;
                             VectorXd xt(1);
                             xt[0] = xp[0] + sgn * r;
                             near_node(xt, wr * kv);
                           });
        }
      } else {
        VectorXd rlo = patch_lo - xp, rhi = patch_hi - xp;
        fan_rectangle(rlo, rhi, gphi, [&](const Eigen::Vector2d& omega,
                                          double rmax, double wphi) {
          double rcap = std::min(rmax, kernel_.support());
          if (rcap <= 0.0) return;
          VectorXd om(2);
          om << omega.x(), omega.y();
          std::vector<double> breaks =
              point_ray_breaks(kernel_, mesh, xp, om);
          radial_segmented(grad01, rcap, kappa, breaks,
                           [&](double r, double wr) {
                             double kv = kernel_.k(r, 2);
                             if (kv == 0.0) return;
                             VectorXd xt(2);
                             xt[0] = xp[0] + r * omega.x();
                             xt[1] = xp[1] + r * omega.y();
                             near_node(xt, wphi * wr * r * kv);
                           });
        });
      }

      // First moment of the kernel over the patch; the symmetric ball
      // around xp integrates to zero and is excluded for stability.
      double delta0 = kInf;
      for (int a = 0; a < d; ++a)
        delta0 = std::min({delta0, xp[a] - patch_lo[a], patch_hi[a] - xp[a]});
      delta0 *= 0.5;
      VectorXd moment = VectorXd::Zero(d);
      auto moment_radial = [&](double rcap, auto&& fn) {
        // log-spaced segments split at the kernel ramp radii
        std::vector<double> seg{delta0};
        if (kernel_.cutoff > delta0 && kernel_.cutoff < rcap)
          seg.push_back(kernel_.cutoff);
        seg.push_back(std::min(rcap, kernel_.support()));
        for (size_t i = 0; i + 1 < seg.size(); ++i)
          radial_log(grad01, seg[i], seg[i + 1], fn);
      };
      if (d == 1) {
        double ends[2] = {patch_lo[0] - xp[0], patch_hi[0] - xp[0]};
        for (double end : ends) {
          double rmax = std::min(std::abs(end), kernel_.support());
          double sgn = end > 0 ? 1.0 : -1.0;
          moment_radial(rmax, [&](double r, double wr) {
            moment[0] += sgn * wr * kernel_.k(r, 1) * r;
          });
        }
      } else {
        VectorXd rlo = patch_lo - xp, rhi = patch_hi - xp;
        fan_rectangle(rlo, rhi, gphi, [&](const Eigen::Vector2d& omega,
                                          double rmax, double wphi) {
          double rcap = std::min(rmax, kernel_.support());
          moment_radial(rcap, [&](double r, double wr) {
            double kv = kernel_.k(r, 2);
            moment[0] += wphi * wr * kv * r * r * omega.x();
            moment[1] += wphi * wr * kv * r * r * omega.y();
          });
        });
      }
      acc -= dgp * moment;

      // distant cells
      for (int cb = 0; cb < ncells; ++cb) {
        if (near_cells(mesh, cp, cb)) continue;
        Box bb = cell_box(mesh, cb);
        Box bp;
        bp.lo = xp;
        bp.hi = xp;
        if (box_distance(bp, bb) >= kernel_.support()) continue;
        const auto& qb = quad.cells()[cb];
        for (int q = 0; q < qb.w.size(); ++q) {
          double r = (qb.pts.row(q).transpose() - xp).norm();
          double kv = kernel_.k(r, d);
          if (kv == 0.0) continue;
          acc += qb.w[q] * kv * (gp - g.value(qb.pts.row(q).transpose()));
        }
      }
      out.row(cell.offset + k) = acc.transpose();
    }
  });
  return out;
}

double gagliardo_energy_reference(const KernelSpec& kernel,
                                  const FlatTensorField& g, const Mesh& mesh,
                                  int n_base, int levels) {
  const int d = mesh.dim();
  std::vector<double> est;
  for (int lev = 0; lev < levels; ++lev) {
    int n = n_base << lev;
    int nx = n, ny = d == 2 ? n : 1;
    int total = nx * ny;
    MatrixXd pts(total, d);
    MatrixXd vals(total, g.len);
    double wx = (mesh.hi(0) - mesh.lo(0)) / nx;
    double wy = d == 2 ? (mesh.hi(1) - mesh.lo(1)) / ny : 1.0;
    int row = 0;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i, ++row) {
        pts(row, 0) = mesh.lo(0) + (i + 0.5) * wx;
        if (d == 2) pts(row, 1) = mesh.lo(1) + (j + 0.5) * wy;
        vals.row(row) = g.value(pts.row(row).transpose()).transpose();
      }
    double cellw = wx * wy;
    double rsup = kernel.support();
    double acc = parallel_reduce_blocks(total, [&](int p) {
      double local = 0.0;
      for (int q = p + 1; q < total; ++q) {
        double r = (pts.row(p) - pts.row(q)).norm();
        if (r >= rsup) continue;
        double kv = kernel.k(r, d);
        if (kv == 0.0) continue;
        local += 2.0 * kv * (vals.row(p) - vals.row(q)).squaredNorm();
      }
      return local;
    });
    est.push_back(0.25 * acc * cellw * cellw);
  }
  if (levels < 3) return est.back();
  double d1 = est[levels - 2] - est[levels - 3];
  double d2 = est[levels - 1] - est[levels - 2];
  if (std::abs(d2) < 1e-300 || std::abs(d1) <= std::abs(d2))
    return est.back();
  double ratio = d1 / d2;
  return est.back() + d2 / (ratio - 1.0);
}

double healey_kromer_eta(double c_alpha, double m_int, double p, double gamma,
                         int d) {
  double alpha = gamma - (0.5 * d - 1.0);
  if (!(gamma > 0.5 * d - 1.0))
    throw InvalidExponents("healey_kromer_eta: gamma <= d/2 - 1");
  if (c_alpha < 0.0 || m_int <= 0.0)
    throw InvalidExponents("healey_kromer_eta: need C_alpha >= 0, M > 0");
  double e = p * alpha / d;
  if (!(e > 1.0))
    throw InvalidExponents(
        "healey_kromer_eta: exponent p*alpha/d must exceed 1");
  double ctil = c_alpha * std::pow(m_int, alpha / d);
  if (ctil == 0.0) return 1.0;
  double eta_s = std::pow(1.0 / (ctil * e), 1.0 / (e - 1.0));
  double eta_c = std::min(eta_s, 1.0);
  return eta_c - ctil * std::pow(eta_c, e);
}

DetMonitor min_determinant_monitor(const DiscreteField& chi,
                                   const Quadrature& quad) {
  Samples s = sample_field(quad, chi.coeffs, 1);
  const int d = chi.space->dim();
  DetMonitor mon;
  mon.j_min = kInf;
  mon.location = VectorXd::Zero(d);
  for (int p = 0; p < quad.total_points(); ++p) {
    double j;
    if (d == 1) {
      j = s.grad(p, 0);
    } else {
      j = s.grad(p, 0) * s.grad(p, 3) - s.grad(p, 1) * s.grad(p, 2);
    }
    if (j < mon.j_min) {
      mon.j_min = j;
      mon.location = quad.points().row(p).transpose();
    }
  }
  return mon;
}

double estimate_holder_constant(const MatrixXd& points, const VectorXd& values,
                                double alpha, int max_points) {
  int n = (int)values.size();
  int stride = std::max(1, n / max_points);
  double c = 0.0;
  for (int i = 0; i < n; i += stride)
    for (int j = i + stride; j < n; j += stride) {
      double dist = (points.row(i) - points.row(j)).norm();
      if (dist < 1e-12) continue;
      c = std::max(c, std::abs(values[i] - values[j]) / std::pow(dist, alpha));
    }
  return c;
}

}  // namespace mel
