#include "mel/assembly.hpp"

#include <Eigen/Sparse>

#include "mel/parallel.hpp"
#include "mel/quadrature.hpp"

namespace mel {

Quadrature::Quadrature(std::shared_ptr<const SplineSpace> space,
                       int pts_per_axis)
    : space_(std::move(space)), q_(pts_per_axis) {
  const SplineSpace& sp = *space_;
  const Mesh& mesh = sp.mesh();
  const int d = sp.dim();
  GaussRule g = gauss_legendre(q_);
  int ncells = mesh.cell_count();
  cells_.resize(ncells);
  const int nq = d == 1 ? q_ : q_ * q_;

  parallel_for_blocks(ncells, [&](int c) {
    int c0 = d == 1 ? c : c % mesh.cells(0);
    int c1 = d == 1 ? 0 : c / mesh.cells(0);
    Cell& cell = cells_[c];
    cell.dofs = sp.cell_dofs(c0, c1);
    cell.pts.resize(nq, d);
    cell.w.resize(nq);
    double x0 = mesh.lo(0) + c0 * mesh.h(0);
    double jac = 0.5 * mesh.h(0);
    if (d == 1) {
      for (int k = 0; k < q_; ++k) {
        cell.pts(k, 0) = x0 + 0.5 * mesh.h(0) * (1.0 + g.nodes[k]);
        cell.w[k] = jac * g.weights[k];
      }
    } else {
      double y0 = mesh.lo(1) + c1 * mesh.h(1);
      double jac2 = jac * 0.5 * mesh.h(1);
      int k = 0;
      for (int kj = 0; kj < q_; ++kj)
        for (int ki = 0; ki < q_; ++ki, ++k) {
          cell.pts(k, 0) = x0 + 0.5 * mesh.h(0) * (1.0 + g.nodes[ki]);
          cell.pts(k, 1) = y0 + 0.5 * mesh.h(1) * (1.0 + g.nodes[kj]);
          cell.w[k] = jac2 * g.weights[ki] * g.weights[kj];
        }
    }
    int nloc = sp.local_size();
    cell.N.resize(nq, nloc);
    cell.dN.assign(nq, MatrixXd(nloc, d));
    cell.d2N.assign(nq, MatrixXd(nloc, d * d));
    std::vector<int> dofs;
    VectorXd vals;
    MatrixXd grads, hess;
    for (int k = 0; k < nq; ++k) {
      sp.local_basis(cell.pts.row(k).transpose(), 2, dofs, vals, grads, hess);
      cell.N.row(k) = vals.transpose();
      cell.dN[k] = grads;
      cell.d2N[k] = hess;
    }
  });
  total_ = 0;
  for (auto& cell : cells_) {
    cell.offset = total_;
    total_ += (int)cell.w.size();
  }
  pts_.resize(total_, d);
  wts_.resize(total_);
  for (auto& cell : cells_) {
    pts_.middleRows(cell.offset, cell.pts.rows()) = cell.pts;
    wts_.segment(cell.offset, cell.w.size()) = cell.w;
  }
}

BoundaryQuadrature::BoundaryQuadrature(
    std::shared_ptr<const SplineSpace> space, const std::string& tag,
    int pts_per_facet)
    : space_(std::move(space)) {
  const SplineSpace& sp = *space_;
  const Mesh& mesh = sp.mesh();
  const int d = sp.dim();
  for (int side : mesh.sides(tag)) {
    int axis = side / 2;
    bool at_min = side % 2 == 0;
    VectorXd normal = VectorXd::Zero(d);
    normal[axis] = at_min ? -1.0 : 1.0;
    double coord = at_min ? mesh.lo(axis) : mesh.hi(axis);
    if (d == 1) {
      Facet f;
      f.side = side;
      f.normal = normal;
      f.pts.resize(1, 1);
      f.pts(0, 0) = coord;
      f.w = VectorXd::Ones(1);
      std::vector<int> dofs;
      VectorXd vals;
      MatrixXd g, h;
      sp.local_basis(f.pts.row(0).transpose(), 0, dofs, vals, g, h);
      f.dofs = dofs;
      f.N = vals.transpose();
      facets_.push_back(std::move(f));
      continue;
    }
    int tangent = 1 - axis;
    GaussRule g1 = gauss_legendre(pts_per_facet);
    for (int c = 0; c < mesh.cells(tangent); ++c) {
      Facet f;
      f.side = side;
      f.normal = normal;
      double t0 = mesh.lo(tangent) + c * mesh.h(tangent);
      f.pts.resize(pts_per_facet, d);
      f.w.resize(pts_per_facet);
      for (int k = 0; k < pts_per_facet; ++k) {
        f.pts(k, axis) = coord;
        f.pts(k, tangent) =
            t0 + 0.5 * mesh.h(tangent) * (1.0 + g1.nodes[k]);
        f.w[k] = 0.5 * mesh.h(tangent) * g1.weights[k];
      }
      std::vector<int> dofs;
      VectorXd vals;
      MatrixXd gg, hh;
      f.N.resize(pts_per_facet, sp.local_size());
      for (int k = 0; k < pts_per_facet; ++k) {
        sp.local_basis(f.pts.row(k).transpose(), 0, dofs, vals, gg, hh);
        f.N.row(k) = vals.transpose();
        if (k == 0) f.dofs = dofs;
      }
      facets_.push_back(std::move(f));
    }
  }
}

double BoundaryQuadrature::measure() const {
  double s = 0.0;
  for (const auto& f : facets_) s += f.w.sum();
  return s;
}

Samples sample_field(const Quadrature& quad, const MatrixXd& coeffs,
                     int nders) {
  const int d = quad.space().dim();
  const int r = (int)coeffs.cols();
  const int P = quad.total_points();
  Samples s;
  s.val.resize(P, r);
  if (nders >= 1) s.grad.resize(P, r * d);
  if (nders >= 2) s.hess.resize(P, r * d * d);
  const auto& cells = quad.cells();
  parallel_for_blocks((int)cells.size(), [&](int c) {
    const auto& cell = cells[c];
    const int nloc = (int)cell.dofs.size();
    MatrixXd local(nloc, r);
    for (int a = 0; a < nloc; ++a) local.row(a) = coeffs.row(cell.dofs[a]);
    for (int k = 0; k < cell.pts.rows(); ++k) {
      int p = cell.offset + k;
      s.val.row(p) = cell.N.row(k) * local;
      if (nders >= 1) {
        // grad(p, i*d+j) = sum_a local(a,i) dN(a,j)
        MatrixXd gr = local.transpose() * cell.dN[k];  // r x d
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < d; ++j) s.grad(p, i * d + j) = gr(i, j);
      }
      if (nders >= 2) {
        MatrixXd hs = local.transpose() * cell.d2N[k];  // r x d*d
        for (int i = 0; i < r; ++i)
          for (int jl = 0; jl < d * d; ++jl)
            s.hess(p, i * d * d + jl) = hs(i, jl);
      }
    }
  });
  return s;
}

MatrixXd sample_boundary(const BoundaryQuadrature& bquad,
                         const MatrixXd& coeffs) {
  int total = 0;
  for (const auto& f : bquad.facets()) total += (int)f.w.size();
  MatrixXd out(total, coeffs.cols());
  int row = 0;
  for (const auto& f : bquad.facets()) {
    const int nloc = (int)f.dofs.size();
    MatrixXd local(nloc, coeffs.cols());
    for (int a = 0; a < nloc; ++a) local.row(a) = coeffs.row(f.dofs[a]);
    for (int k = 0; k < f.w.size(); ++k) out.row(row++) = f.N.row(k) * local;
  }
  return out;
}

namespace {

template <typename CellKernel>
SparseMat assemble_cellwise(const Quadrature& quad, CellKernel kernel) {
  const auto& cells = quad.cells();
  const int n = quad.space().size();
  std::vector<MatrixXd> local(cells.size());
  parallel_for_blocks((int)cells.size(), [&](int c) {
    local[c] = kernel(cells[c]);
  });
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(cells.size() * quad.space().local_size() *
               quad.space().local_size());
  for (size_t c = 0; c < cells.size(); ++c) {
    const auto& dofs = cells[c].dofs;
    for (size_t a = 0; a < dofs.size(); ++a)
      for (size_t b = 0; b < dofs.size(); ++b)
        trip.emplace_back(dofs[a], dofs[b], local[c](a, b));
  }
  SparseMat m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  m.makeCompressed();
  return m;
}

}  // namespace

SparseMat mass_matrix(const Quadrature& quad) {
  return assemble_cellwise(quad, [](const Quadrature::Cell& cell) {
    const int nloc = (int)cell.dofs.size();
    MatrixXd m = MatrixXd::Zero(nloc, nloc);
    for (int k = 0; k < cell.w.size(); ++k)
      m += cell.w[k] * cell.N.row(k).transpose() * cell.N.row(k);
    return m;
  });
}

SparseMat stiffness_matrix(const Quadrature& quad) {
  return assemble_cellwise(quad, [](const Quadrature::Cell& cell) {
    const int nloc = (int)cell.dofs.size();
    MatrixXd m = MatrixXd::Zero(nloc, nloc);
    for (int k = 0; k < cell.w.size(); ++k)
      m += cell.w[k] * cell.dN[k] * cell.dN[k].transpose();
    return m;
  });
}

SparseMat coeff_stiffness_matrix(const Quadrature& quad, const MatrixXd& T) {
  const int d = quad.space().dim();
  return assemble_cellwise(quad, [&](const Quadrature::Cell& cell) {
    const int nloc = (int)cell.dofs.size();
    MatrixXd m = MatrixXd::Zero(nloc, nloc);
    MatrixXd tp(d, d);
    for (int k = 0; k < cell.w.size(); ++k) {
      int p = cell.offset + k;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) tp(i, j) = T(p, i * d + j);
      m += cell.w[k] * cell.dN[k] * tp * cell.dN[k].transpose();
    }
    return m;
  });
}

MatrixXd project(const Quadrature& quad, const MatrixXd& f) {
  const auto& cells = quad.cells();
  const int n = quad.space().size();
  const int r = (int)f.cols();
  std::vector<MatrixXd> local(cells.size());
  parallel_for_blocks((int)cells.size(), [&](int c) {
    const auto& cell = cells[c];
    MatrixXd acc = MatrixXd::Zero((int)cell.dofs.size(), r);
    for (int k = 0; k < cell.w.size(); ++k)
      acc += cell.w[k] * cell.N.row(k).transpose() *
             f.row(cell.offset + k);
    local[c] = acc;
  });
  MatrixXd out = MatrixXd::Zero(n, r);
  for (size_t c = 0; c < cells.size(); ++c)
    for (size_t a = 0; a < cells[c].dofs.size(); ++a)
      out.row(cells[c].dofs[a]) += local[c].row(a);
  return out;
}

double integrate(const Quadrature& quad, const VectorXd& f) {
  const auto& cells = quad.cells();
  return parallel_reduce_blocks((int)cells.size(), [&](int c) {
    const auto& cell = cells[c];
    return cell.w.dot(f.segment(cell.offset, cell.w.size()));
  });
}

SparseMat boundary_mass_matrix(const BoundaryQuadrature& bquad) {
  const int n = bquad.space().size();
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& f : bquad.facets()) {
    const int nloc = (int)f.dofs.size();
    MatrixXd m = MatrixXd::Zero(nloc, nloc);
    for (int k = 0; k < f.w.size(); ++k)
      m += f.w[k] * f.N.row(k).transpose() * f.N.row(k);
    for (int a = 0; a < nloc; ++a)
      for (int b = 0; b < nloc; ++b)
        trip.emplace_back(f.dofs[a], f.dofs[b], m(a, b));
  }
  SparseMat m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  m.makeCompressed();
  return m;
}

MatrixXd boundary_project(const BoundaryQuadrature& bquad, const MatrixXd& f) {
  const int n = bquad.space().size();
  const int r = (int)f.cols();
  MatrixXd out = MatrixXd::Zero(n, r);
  int row = 0;
  for (const auto& fac : bquad.facets()) {
    for (int k = 0; k < fac.w.size(); ++k, ++row)
      for (size_t a = 0; a < fac.dofs.size(); ++a)
        out.row(fac.dofs[a]) += fac.w[k] * fac.N(k, a) * f.row(row);
  }
  return out;
}

double boundary_integrate(const BoundaryQuadrature& bquad, const VectorXd& f) {
  double s = 0.0;
  int row = 0;
  for (const auto& fac : bquad.facets())
    for (int k = 0; k < fac.w.size(); ++k, ++row) s += fac.w[k] * f[row];
  return s;
}

}  // namespace mel
