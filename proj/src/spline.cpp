#include "mel/spline.hpp"

#include <Eigen/Dense>
#include <functional>

namespace mel {

SplineBasis1D::SplineBasis1D(double a, double b, int cells, int degree)
    : a_(a), b_(b), cells_(cells), p_(degree), n_(cells + degree) {
  if (degree < 1) throw ConfigError("spline: degree must be >= 1");
  if (cells < 1) throw ConfigError("spline: need at least one cell");
  knots_.resize(n_ + p_ + 1);
  double h = (b - a) / cells;
  for (int i = 0; i <= p_; ++i) knots_[i] = a;
  for (int i = 1; i < cells; ++i) knots_[p_ + i] = a + i * h;
  for (int i = 0; i <= p_; ++i) knots_[n_ + i] = b;
}

int SplineBasis1D::find_span(double x) const {
  // Uniform interior knots: direct cell lookup, clamped to [0, cells-1].
  double h = (b_ - a_) / cells_;
  int c = (int)std::floor((x - a_) / h);
  if (c < 0) c = 0;
  if (c >= cells_) c = cells_ - 1;
  return c + p_;
}

void SplineBasis1D::ders_basis(double x, int nders, int span,
                               MatrixXd& ders) const {
  const int p = p_;
  ders.setZero(nders + 1, p + 1);
  // Cox-de Boor with derivative table (inverted triangular scheme).
  MatrixXd ndu(p + 1, p + 1);
  VectorXd left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - knots_[span + 1 - j];
    right[j] = knots_[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
  MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nders && k <= p; ++k) {
      double d = 0.0;
      int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      int j1 = rk >= -1 ? 1 : -rk;
      int j2 = r - 1 <= pk ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double rfac = (double)p;
  for (int k = 1; k <= nders && k <= p; ++k) {
    for (int j = 0; j <= p; ++j) ders(k, j) *= rfac;
    rfac *= (double)(p - k);
  }
}

VectorXd SplineBasis1D::greville() const {
  VectorXd g(n_);
  for (int i = 0; i < n_; ++i) {
    double s = 0.0;
    for (int k = 1; k <= p_; ++k) s += knots_[i + k];
    g[i] = s / p_;
  }
  return g;
}

std::pair<SplineBasis1D, MatrixXd> SplineBasis1D::refine_uniform() const {
  // Insert the midpoint of every span, one Boehm step per knot.
  std::vector<double> work = knots_;
  int nfun = n_;
  MatrixXd prolong = MatrixXd::Identity(nfun, nfun);
  double h = (b_ - a_) / cells_;
  for (int c = 0; c < cells_; ++c) {
    double u = a_ + (c + 0.5) * h;
    // Find span in the current working knot vector.
    int k = 0;
    for (int i = 0; i + 1 < (int)work.size(); ++i)
      if (work[i] <= u && u < work[i + 1]) k = i;
    MatrixXd ins = MatrixXd::Zero(nfun + 1, nfun);
    for (int i = 0; i <= nfun; ++i) {
      double alpha;
      if (i <= k - p_)
        alpha = 1.0;
      else if (i >= k + 1)
        alpha = 0.0;
      else
        alpha = (u - work[i]) / (work[i + p_] - work[i]);
      if (alpha != 0.0) ins(i, i) = alpha;
      if (alpha != 1.0 && i > 0) ins(i, i - 1) = 1.0 - alpha;
    }
    prolong = (ins * prolong).eval();
    work.insert(work.begin() + k + 1, u);
    ++nfun;
  }
  SplineBasis1D fine(a_, b_, 2 * cells_, p_);
  return {fine, prolong};
}

SplineSpace::SplineSpace(const Mesh& mesh, int degree)
    : mesh_(mesh), degree_(degree) {
  for (int a = 0; a < mesh.dim(); ++a)
    axes_.emplace_back(mesh.lo(a), mesh.hi(a), mesh.cells(a), degree);
  size_ = 1;
  for (auto& ax : axes_) size_ *= ax.size();
}

int SplineSpace::local_size() const {
  int n = degree_ + 1;
  return dim() == 1 ? n : n * n;
}

std::vector<int> SplineSpace::cell_dofs(int c0, int c1) const {
  const int p = degree_;
  std::vector<int> dofs;
  dofs.reserve(local_size());
  if (dim() == 1) {
    for (int i = 0; i <= p; ++i) dofs.push_back(c0 + i);
  } else {
    for (int j = 0; j <= p; ++j)
      for (int i = 0; i <= p; ++i) dofs.push_back(flat_index(c0 + i, c1 + j));
  }
  return dofs;
}

void SplineSpace::local_basis(const VectorXd& x, int nders,
                              std::vector<int>& dofs, VectorXd& vals,
                              MatrixXd& grads, MatrixXd& hess) const {
  const int d = dim(), p = degree_;
  const int nloc = local_size();
  std::vector<MatrixXd> ax(d);
  std::vector<int> span(d), cell(d);
  for (int a = 0; a < d; ++a) {
    span[a] = axes_[a].find_span(x[a]);
    cell[a] = span[a] - p;
    axes_[a].ders_basis(x[a], nders, span[a], ax[a]);
  }
  dofs = cell_dofs(cell[0], d == 2 ? cell[1] : 0);
  vals.resize(nloc);
  if (nders >= 1) grads.resize(nloc, d);
  if (nders >= 2) hess.resize(nloc, d * d);
  if (d == 1) {
    for (int i = 0; i <= p; ++i) {
      vals[i] = ax[0](0, i);
      if (nders >= 1) grads(i, 0) = ax[0](1, i);
      if (nders >= 2) hess(i, 0) = ax[0](2, i);
    }
  } else {
    int idx = 0;
    for (int j = 0; j <= p; ++j)
      for (int i = 0; i <= p; ++i, ++idx) {
        vals[idx] = ax[0](0, i) * ax[1](0, j);
        if (nders >= 1) {
          grads(idx, 0) = ax[0](1, i) * ax[1](0, j);
          grads(idx, 1) = ax[0](0, i) * ax[1](1, j);
        }
        if (nders >= 2) {
          double dxx = ax[0](2, i) * ax[1](0, j);
          double dxy = ax[0](1, i) * ax[1](1, j);
          double dyy = ax[0](0, i) * ax[1](2, j);
          hess(idx, 0) = dxx;
          hess(idx, 1) = dxy;
          hess(idx, 2) = dxy;
          hess(idx, 3) = dyy;
        }
      }
  }
}

VectorXd SplineSpace::value(const MatrixXd& coeffs, const VectorXd& x) const {
  std::vector<int> dofs;
  VectorXd vals;
  MatrixXd g, h;
  local_basis(x, 0, dofs, vals, g, h);
  VectorXd out = VectorXd::Zero(coeffs.cols());
  for (size_t a = 0; a < dofs.size(); ++a)
    out += vals[a] * coeffs.row(dofs[a]).transpose();
  return out;
}

MatrixXd SplineSpace::gradient(const MatrixXd& coeffs,
                               const VectorXd& x) const {
  std::vector<int> dofs;
  VectorXd vals;
  MatrixXd g, h;
  local_basis(x, 1, dofs, vals, g, h);
  MatrixXd out = MatrixXd::Zero(coeffs.cols(), dim());
  for (size_t a = 0; a < dofs.size(); ++a)
    out += coeffs.row(dofs[a]).transpose() * g.row(a);
  return out;
}

MatrixXd SplineSpace::hessian(const MatrixXd& coeffs,
                              const VectorXd& x) const {
  std::vector<int> dofs;
  VectorXd vals;
  MatrixXd g, h;
  local_basis(x, 2, dofs, vals, g, h);
  MatrixXd out = MatrixXd::Zero(coeffs.cols(), dim() * dim());
  for (size_t a = 0; a < dofs.size(); ++a)
    out += coeffs.row(dofs[a]).transpose() * h.row(a);
  return out;
}

VectorXd SplineSpace::laplacian(const MatrixXd& coeffs,
                                const VectorXd& x) const {
  MatrixXd h = hessian(coeffs, x);
  VectorXd out = VectorXd::Zero(coeffs.cols());
  for (int a = 0; a < dim(); ++a) out += h.col(a * dim() + a);
  return out;
}

MatrixXd SplineSpace::interpolate(
    const std::function<VectorXd(const VectorXd&)>& f, int rank) const {
  const int d = dim();
  // Collocation matrix at tensor Greville points, solved axis by axis
  // would be possible; sizes are small, so assemble the full system.
  std::vector<VectorXd> grev(d);
  for (int a = 0; a < d; ++a) grev[a] = axes_[a].greville();
  MatrixXd rhs(size_, rank);
  MatrixXd colloc = MatrixXd::Zero(size_, size_);
  std::vector<int> dofs;
  VectorXd vals;
  MatrixXd g, h;
  auto fill_row = [&](int row, const VectorXd& x) {
    local_basis(x, 0, dofs, vals, g, h);
    for (size_t a = 0; a < dofs.size(); ++a) colloc(row, dofs[a]) = vals[a];
    rhs.row(row) = f(x).transpose();
  };
  if (d == 1) {
    VectorXd x(1);
    for (int i = 0; i < size_; ++i) {
      x[0] = grev[0][i];
      fill_row(i, x);
    }
  } else {
    VectorXd x(2);
    for (int j = 0; j < axes_[1].size(); ++j)
      for (int i = 0; i < axes_[0].size(); ++i) {
        x[0] = grev[0][i];
        x[1] = grev[1][j];
        fill_row(flat_index(i, j), x);
      }
  }
  Eigen::PartialPivLU<MatrixXd> lu(colloc);
  return lu.solve(rhs);
}

std::pair<std::shared_ptr<SplineSpace>, MatrixXd>
SplineSpace::refine_uniform() const {
  std::vector<int> fine_cells;
  std::vector<MatrixXd> prolong_axis;
  for (int a = 0; a < dim(); ++a) {
    auto [fb, pr] = axes_[a].refine_uniform();
    fine_cells.push_back(fb.cells());
    prolong_axis.push_back(pr);
  }
  std::vector<double> lo, hi;
  for (int a = 0; a < dim(); ++a) {
    lo.push_back(mesh_.lo(a));
    hi.push_back(mesh_.hi(a));
  }
  Mesh fine_mesh(dim(), lo, hi, fine_cells);
  auto fine = std::make_shared<SplineSpace>(fine_mesh, degree_);
  if (dim() == 1) return {fine, prolong_axis[0]};
  // Tensor (Kronecker) product, axis-0 fastest.
  const MatrixXd& p0 = prolong_axis[0];
  const MatrixXd& p1 = prolong_axis[1];
  MatrixXd prolong = MatrixXd::Zero(fine->size(), size_);
  for (int j1 = 0; j1 < p1.rows(); ++j1)
    for (int i1 = 0; i1 < p1.cols(); ++i1) {
      if (p1(j1, i1) == 0.0) continue;
      for (int j0 = 0; j0 < p0.rows(); ++j0)
        for (int i0 = 0; i0 < p0.cols(); ++i0) {
          if (p0(j0, i0) == 0.0) continue;
          prolong(fine->flat_index(j0, j1), flat_index(i0, i1)) =
              p0(j0, i0) * p1(j1, i1);
        }
    }
  return {fine, prolong};
}

std::vector<int> SplineSpace::side_dofs(int side) const {
  // Open knots: only the extreme basis function per axis is non-zero on
  // the corresponding boundary face.
  std::vector<int> out;
  const int d = dim();
  int axis = side / 2;
  int idx = (side % 2 == 0) ? 0 : axes_[axis].size() - 1;
  if (d == 1) {
    out.push_back(idx);
  } else if (axis == 0) {
    for (int j = 0; j < axes_[1].size(); ++j) out.push_back(flat_index(idx, j));
  } else {
    for (int i = 0; i < axes_[0].size(); ++i) out.push_back(flat_index(i, idx));
  }
  return out;
}

MatrixXd evaluate(const DiscreteField& f, const VectorXd& x,
                  DerivOrder order) {
  const SplineSpace& sp = *f.space;
  if (!sp.mesh().inside(x))
    throw OutOfRange("evaluate: point outside the domain closure");
  if ((order == DerivOrder::hessian || order == DerivOrder::laplacian) &&
      sp.degree() < 3)
    throw UnsupportedOrder(
        "evaluate: second derivatives need a C2-conforming space "
        "(degree >= 3)");
  switch (order) {
    case DerivOrder::value:
      return sp.value(f.coeffs, x);
    case DerivOrder::gradient:
      return sp.gradient(f.coeffs, x);
    case DerivOrder::hessian:
      return sp.hessian(f.coeffs, x);
    case DerivOrder::laplacian:
      return sp.laplacian(f.coeffs, x);
  }
  throw Error("evaluate: unreachable");
}

}  // namespace mel
