#include "mel/magnetostatics.hpp"

#include <cmath>
#include <map>

#include "mel/kinematics.hpp"
#include "mel/parallel.hpp"
#include "mel/rng.hpp"

namespace mel {

SpatialGrid::SpatialGrid(int dim, VectorXd lo, VectorXd hi,
                         int nodes_per_axis, double mu0)
    : dim_(dim), n_(nodes_per_axis), lo_(std::move(lo)), hi_(std::move(hi)),
      mu0_(mu0) {
  if (n_ < 8) throw ConfigError("spatial grid: need at least 8 nodes");
}

SpatialGrid SpatialGrid::around(const VectorXd& blo, const VectorXd& bhi,
                                double margin_factor, int nodes_per_axis,
                                double mu0) {
  int d = (int)blo.size();
  double extent = (bhi - blo).maxCoeff();
  if (extent <= 0.0) extent = 1.0;
  double side = margin_factor * extent;
  VectorXd c = 0.5 * (blo + bhi);
  VectorXd lo = c.array() - 0.5 * side;
  VectorXd hi = c.array() + 0.5 * side;
  return SpatialGrid(d, lo, hi, nodes_per_axis, mu0);
}

VectorXd SpatialGrid::node(int idx) const {
  VectorXd x(dim_);
  if (dim_ == 1) {
    x[0] = lo_[0] + idx * h(0);
  } else {
    x[0] = lo_[0] + (idx % n_) * h(0);
    x[1] = lo_[1] + (idx / n_) * h(1);
  }
  return x;
}

bool SpatialGrid::boundary_node(int idx) const {
  if (dim_ == 1) return idx == 0 || idx == n_ - 1;
  int i = idx % n_, j = idx / n_;
  return i == 0 || i == n_ - 1 || j == 0 || j == n_ - 1;
}

bool SpatialGrid::contains_with_margin(const VectorXd& blo,
                                       const VectorXd& bhi) const {
  double diam = (bhi - blo).norm();
  for (int a = 0; a < dim_; ++a) {
    if (blo[a] - lo_[a] < diam || hi_[a] - bhi[a] < diam) return false;
  }
  return true;
}

PotentialSolution solve_scalar_potential(const SpatialGrid& grid,
                                         const MatrixXd& m_bar,
                                         double rel_tol, int max_iter) {
  const int d = grid.dim();
  const int n = grid.n();
  const int total = grid.total_nodes();
  const double vol = grid.cell_volume();
  const double hx = grid.h(0);
  const double hy = d == 2 ? grid.h(1) : 1.0;

  auto idx = [&](int i, int j) { return grid.node_index(i, j); };

  // A u = -laplace_h(u) * vol on interior nodes, zero Dirichlet outside.
  auto apply_a = [&](const VectorXd& u, VectorXd& out) {
    out.setZero(total);
    if (d == 1) {
      for (int i = 1; i < n - 1; ++i)
        out[i] = vol * (2.0 * u[i] - u[i - 1] - u[i + 1]) / (hx * hx);
    } else {
      for (int j = 1; j < n - 1; ++j)
        for (int i = 1; i < n - 1; ++i) {
          int p = idx(i, j);
          out[p] = vol * ((2.0 * u[p] - u[idx(i - 1, j)] - u[idx(i + 1, j)]) /
                              (hx * hx) +
                          (2.0 * u[p] - u[idx(i, j - 1)] - u[idx(i, j + 1)]) /
                              (hy * hy));
        }
    }
  };

  // b = -div_h(m_bar) * vol (central differences).
  VectorXd b = VectorXd::Zero(total);
  if (d == 1) {
    for (int i = 1; i < n - 1; ++i)
      b[i] = -vol * (m_bar(i + 1, 0) - m_bar(i - 1, 0)) / (2.0 * hx);
  } else {
    for (int j = 1; j < n - 1; ++j)
      for (int i = 1; i < n - 1; ++i)
        b[idx(i, j)] =
            -vol * ((m_bar(idx(i + 1, j), 0) - m_bar(idx(i - 1, j), 0)) /
                        (2.0 * hx) +
                    (m_bar(idx(i, j + 1), 1) - m_bar(idx(i, j - 1), 1)) /
                        (2.0 * hy));
  }

  PotentialSolution sol;
  VectorXd u = VectorXd::Zero(total), r = b, p = b, ap(total);
  double rr = r.squaredNorm();
  double b_norm = std::sqrt(rr);
  sol.iterations = 0;
  if (b_norm > 0.0) {
    for (int it = 0; it < max_iter; ++it) {
      apply_a(p, ap);
      double pap = p.dot(ap);
      if (pap <= 0.0) throw SolverDivergence("potential CG: lost definiteness");
      double alpha = rr / pap;
      u += alpha * p;
      r -= alpha * ap;
      double rr_new = r.squaredNorm();
      sol.iterations = it + 1;
      if (std::sqrt(rr_new) <= rel_tol * b_norm) break;
      p = r + (rr_new / rr) * p;
      rr = rr_new;
      if (it + 1 == max_iter)
        throw SolverDivergence("potential CG: iteration cap reached");
    }
  }
  sol.phi = u;

  // Central-difference gradient (zero beyond the box).
  sol.grad = MatrixXd::Zero(total, d);
  if (d == 1) {
    for (int i = 1; i < n - 1; ++i)
      sol.grad(i, 0) = (u[i + 1] - u[i - 1]) / (2.0 * hx);
  } else {
    for (int j = 1; j < n - 1; ++j)
      for (int i = 1; i < n - 1; ++i) {
        sol.grad(idx(i, j), 0) =
            (u[idx(i + 1, j)] - u[idx(i - 1, j)]) / (2.0 * hx);
        sol.grad(idx(i, j), 1) =
            (u[idx(i, j + 1)] - u[idx(i, j - 1)]) / (2.0 * hy);
      }
  }

  // Edge (forward-difference) energy: (mu0/2) u^T A u.
  double e = 0.0;
  if (d == 1) {
    for (int i = 0; i < n - 1; ++i) {
      double du = (u[i + 1] - u[i]) / hx;
      e += du * du * vol;
    }
  } else {
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n - 1; ++i) {
        double du = (u[idx(i + 1, j)] - u[idx(i, j)]) / hx;
        e += du * du * vol;
      }
    for (int j = 0; j < n - 1; ++j)
      for (int i = 0; i < n; ++i) {
        double du = (u[idx(i, j + 1)] - u[idx(i, j)]) / hy;
        e += du * du * vol;
      }
  }
  sol.energy = 0.5 * grid.mu0() * e;

  double pairing = 0.0;
  for (int p2 = 0; p2 < total; ++p2)
    pairing += sol.grad.row(p2).dot(m_bar.row(p2)) * vol;
  sol.energy_pairing = 0.5 * grid.mu0() * pairing;
  return sol;
}

namespace {

struct ForwardSamples {
  MatrixXd x;      // S x d reference points
  MatrixXd z;      // S x d deformed points
  MatrixXd value;  // S x d spatial magnetization at the sample
  VectorXd w;      // reference volume weight
  double mass_reference = 0.0;
  double j_min = kInf;
};

ForwardSamples forward_map(const DiscreteField& chi, const DiscreteField* m,
                           int per_axis) {
  const SplineSpace& sp = *chi.space;
  const Mesh& mesh = sp.mesh();
  const int d = mesh.dim();
  int nx = per_axis;
  int ny = d == 2 ? per_axis : 1;
  int total = nx * ny;
  ForwardSamples s;
  s.x.resize(total, d);
  s.z.resize(total, d);
  s.value.setZero(total, d);
  s.w.resize(total);
  double wx = (mesh.hi(0) - mesh.lo(0)) / nx;
  double wy = d == 2 ? (mesh.hi(1) - mesh.lo(1)) / ny : 1.0;
  int row = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i, ++row) {
      VectorXd x(d);
      x[0] = mesh.lo(0) + (i + 0.5) * wx;
      if (d == 2) x[1] = mesh.lo(1) + (j + 0.5) * wy;
      s.x.row(row) = x.transpose();
      s.w[row] = wx * wy;
      s.z.row(row) = chi.value(x).transpose();
      MatrixXd f = chi.gradient(x);
      double jdet = det_f(f);
      s.j_min = std::min(s.j_min, jdet);
      if (m != nullptr && jdet > 0.0) {
        VectorXd mv = m->value(x);
        VectorXd spat = f * mv / jdet;
        s.value.row(row) = spat.transpose();
        s.mass_reference += s.w[row] * spat.squaredNorm() * jdet;
      }
    }
  return s;
}

}  // namespace

RasterizedField push_forward_magnetization(const DiscreteField& chi,
                                           const DiscreteField& m,
                                           const SpatialGrid& grid,
                                           const Quadrature& quad,
                                           int sub_per_axis,
                                           double injectivity_rel_tol) {
  const Mesh& mesh = chi.space->mesh();
  const int d = mesh.dim();
  if (sub_per_axis <= 0) sub_per_axis = 2 * grid.n();

  GapReport gap = ciarlet_necas_gap(chi, quad);
  if (gap.degenerate)
    throw DegenerateDeformation(
        "push_forward_magnetization: det(grad chi) <= 0");
  if (gap.gap > injectivity_rel_tol * mesh.volume())
    throw NonInjective(
        "push_forward_magnetization: positive injectivity gap");

  ForwardSamples s = forward_map(chi, &m, sub_per_axis);
  if (s.j_min <= 0.0)
    throw DegenerateDeformation(
        "push_forward_magnetization: det(grad chi) <= 0 at a sample");

  const int total = grid.total_nodes();
  RasterizedField out;
  out.values.setZero(total, d);
  out.mass_reference = s.mass_reference;
  VectorXd best = VectorXd::Constant(total, kInf);
  for (int r = 0; r < s.z.rows(); ++r) {
    // node bin of the mapped sample
    int i = (int)std::lround((s.z(r, 0) - grid.lo()[0]) / grid.h(0));
    if (i < 0 || i >= grid.n()) continue;
    int j = 0;
    if (d == 2) {
      j = (int)std::lround((s.z(r, 1) - grid.lo()[1]) / grid.h(1));
      if (j < 0 || j >= grid.n()) continue;
    }
    int node = grid.node_index(i, j);
    double dist = (s.z.row(r).transpose() - grid.node(node)).norm();
    if (dist < best[node]) {
      best[node] = dist;
      out.values.row(node) = s.value.row(r);
    }
  }
  int hit = 0;
  double mass = 0.0;
  for (int p = 0; p < total; ++p)
    if (best[p] < kInf) {
      ++hit;
      mass += out.values.row(p).squaredNorm() * grid.cell_volume();
    }
  out.image_measure = hit * grid.cell_volume();
  out.mass_spatial = mass;
  return out;
}

MatrixXd pull_back_external_field(
    const DiscreteField& chi, const Quadrature& quad,
    const std::function<VectorXd(const VectorXd&)>& h_sp) {
  const int d = chi.space->dim();
  MatrixXd out(quad.total_points(), d);
  const auto& cells = quad.cells();
  parallel_for_blocks((int)cells.size(), [&](int c) {
    const auto& cell = cells[c];
    for (int k = 0; k < cell.w.size(); ++k) {
      VectorXd x = cell.pts.row(k).transpose();
      VectorXd z = chi.value(x);
      MatrixXd f = chi.gradient(x);
      out.row(cell.offset + k) = (f.transpose() * h_sp(z)).transpose();
    }
  });
  return out;
}

GapReport ciarlet_necas_gap(const DiscreteField& chi, const Quadrature& quad,
                            int n_samples, std::uint64_t seed) {
  const Mesh& mesh = chi.space->mesh();
  const int d = mesh.dim();
  GapReport rep;

  // Volume integral of det(grad chi) plus the determinant monitor.
  Samples s = sample_field(quad, chi.coeffs, 1);
  VectorXd jdet(quad.total_points());
  rep.j_min = kInf;
  for (int p = 0; p < quad.total_points(); ++p) {
    double j;
    if (d == 1)
      j = s.grad(p, 0);
    else
      j = s.grad(p, 0) * s.grad(p, 3) - s.grad(p, 1) * s.grad(p, 2);
    jdet[p] = j;
    rep.j_min = std::min(rep.j_min, j);
  }
  rep.degenerate = rep.j_min <= 0.0;
  rep.volume_integral = integrate(quad, jdet);

  // Image measure by seeded Monte-Carlo rasterization: map uniform
  // reference samples forward, count hit raster cells.
  Rng rng(seed);
  int raster_n = std::max(32, (int)std::lround(
                                  std::pow((double)n_samples / 8.0,
                                           1.0 / d)));
  MatrixXd z(n_samples, d);
  VectorXd zlo = VectorXd::Constant(d, kInf);
  VectorXd zhi = VectorXd::Constant(d, -kInf);
  for (int r = 0; r < n_samples; ++r) {
    VectorXd x(d);
    for (int a = 0; a < d; ++a) x[a] = rng.uniform(mesh.lo(a), mesh.hi(a));
    VectorXd zz = chi.value(x);
    z.row(r) = zz.transpose();
    for (int a = 0; a < d; ++a) {
      zlo[a] = std::min(zlo[a], zz[a]);
      zhi[a] = std::max(zhi[a], zz[a]);
    }
  }
  VectorXd extent = zhi - zlo;
  for (int a = 0; a < d; ++a) extent[a] = std::max(extent[a], 1e-12);
  std::vector<char> hitmask(d == 1 ? raster_n : raster_n * raster_n, 0);
  for (int r = 0; r < n_samples; ++r) {
    int i = std::min(raster_n - 1,
                     (int)((z(r, 0) - zlo[0]) / extent[0] * raster_n));
    int cell = i;
    if (d == 2) {
      int j = std::min(raster_n - 1,
                       (int)((z(r, 1) - zlo[1]) / extent[1] * raster_n));
      cell = i + raster_n * j;
    }
    hitmask[cell] = 1;
  }
  long hits = 0;
  for (char c : hitmask) hits += c;
  double cell_measure = extent[0] / raster_n;
  if (d == 2) cell_measure *= extent[1] / raster_n;
  rep.image_measure = hits * cell_measure;
  rep.gap = rep.volume_integral - rep.image_measure;
  return rep;
}

void deposition_stencil(const SpatialGrid& grid, const VectorXd& z,
                        std::vector<int>& nodes, VectorXd& w, MatrixXd& dw) {
  const int d = grid.dim();
  auto kernel = [](double s, double& val, double& der) {
    double a = std::abs(s);
    double sign = s >= 0 ? 1.0 : -1.0;
    if (a >= 2.0) {
      val = 0.0;
      der = 0.0;
    } else if (a >= 1.0) {
      double t = 2.0 - a;
      val = t * t * t / 6.0;
      der = -sign * t * t / 2.0;
    } else {
      val = 2.0 / 3.0 - a * a + a * a * a / 2.0;
      der = sign * (-2.0 * a + 1.5 * a * a);
    }
  };
  int i0[2] = {0, 0};
  double v[2][4], g[2][4];
  for (int ax = 0; ax < d; ++ax) {
    double t = (z[ax] - grid.lo()[ax]) / grid.h(ax);
    i0[ax] = (int)std::floor(t) - 1;
    for (int k = 0; k < 4; ++k) {
      double s = t - (i0[ax] + k);
      kernel(s, v[ax][k], g[ax][k]);
      g[ax][k] /= grid.h(ax);
    }
  }
  int count = d == 1 ? 4 : 16;
  nodes.assign(count, -1);
  w.setZero(count);
  dw.setZero(count, d);
  int idx = 0;
  if (d == 1) {
    for (int k = 0; k < 4; ++k, ++idx) {
      int i = i0[0] + k;
      if (i < 0 || i >= grid.n()) continue;
      nodes[idx] = i;
      w[idx] = v[0][k];
      dw(idx, 0) = g[0][k];
    }
  } else {
    for (int kj = 0; kj < 4; ++kj)
      for (int ki = 0; ki < 4; ++ki, ++idx) {
        int i = i0[0] + ki, j = i0[1] + kj;
        if (i < 0 || i >= grid.n() || j < 0 || j >= grid.n()) continue;
        nodes[idx] = grid.node_index(i, j);
        w[idx] = v[0][ki] * v[1][kj];
        dw(idx, 0) = g[0][ki] * v[1][kj];
        dw(idx, 1) = v[0][ki] * g[1][kj];
      }
  }
}

Deposited deposit_magnetization(const DiscreteField& chi,
                                const DiscreteField& m,
                                const SpatialGrid& grid, int sub_per_cell) {
  const Mesh& mesh = chi.space->mesh();
  const int d = mesh.dim();
  int per_axis = sub_per_cell * mesh.cells(0);
  Deposited out;
  ForwardSamples s = forward_map(chi, nullptr, per_axis);
  out.sample_x = s.x;
  out.sample_w = s.w;
  out.m_bar.setZero(grid.total_nodes(), d);
  std::vector<int> nodes;
  VectorXd w;
  MatrixXd dw;
  const double inv_vol = 1.0 / grid.cell_volume();
  for (int r = 0; r < s.x.rows(); ++r) {
    VectorXd x = s.x.row(r).transpose();
    VectorXd z = chi.value(x);
    MatrixXd f = chi.gradient(x);
    VectorXd fm = f * m.value(x);  // J m_spatial: deposited as a density
    deposition_stencil(grid, z, nodes, w, dw);
    for (size_t t = 0; t < nodes.size(); ++t) {
      if (nodes[t] < 0) continue;
      out.m_bar.row(nodes[t]) += inv_vol * s.w[r] * w[t] * fm.transpose();
    }
  }
  return out;
}

}  // namespace mel
