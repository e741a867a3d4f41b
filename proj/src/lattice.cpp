#include "latfield/lattice.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <set>

namespace latfield {

namespace {

// Hermite-style column reduction of an integer d x m matrix; returns the
// absolute determinant of the lattice generated by the columns, or 0 when
// the columns are rank deficient.
long long stencil_lattice_index(int d, std::vector<Eigen::VectorXi> cols) {
  // eliminate below-diagonal entries row by row with integer column ops
  int col = 0;
  for (int row = 0; row < d; ++row) {
    // find pivot with smallest nonzero |entry| in this row at >= col
    while (true) {
      int piv = -1;
      long long best = 0;
      for (size_t j = col; j < cols.size(); ++j) {
        long long v = std::llabs((long long)cols[j][row]);
        if (v != 0 && (piv < 0 || v < best)) {
          piv = static_cast<int>(j);
          best = v;
        }
      }
      if (piv < 0)
        break; // row is all zero from col on
      std::swap(cols[col], cols[piv]);
      bool reduced = true;
      for (size_t j = col + 1; j < cols.size(); ++j) {
        long long q = cols[j][row] / cols[col][row];
        cols[j] -= static_cast<int>(q) * cols[col];
        if (cols[j][row] != 0)
          reduced = false;
      }
      if (reduced)
        break;
    }
    bool nonzero = col < static_cast<int>(cols.size()) && cols[col][row] != 0;
    if (nonzero)
      ++col;
  }
  if (col < d)
    return 0;
  // after reduction the first d columns are lower triangular up to row perm;
  // the generated-lattice index is |det| of that block
  Eigen::MatrixXd B(d, d);
  for (int j = 0; j < d; ++j)
    B.col(j) = cols[j].cast<double>();
  double det = std::abs(B.determinant());
  return static_cast<long long>(std::llround(det));
}

} // namespace

Lattice::Lattice(Eigen::MatrixXd basis, std::vector<Site> stencil, int ncomp)
    : d_(static_cast<int>(basis.rows())), N_(ncomp), A_(std::move(basis)),
      R_(std::move(stencil)) {
  if (A_.rows() != A_.cols())
    throw SingularBasis("basis must be square");
  double det = A_.determinant();
  if (std::abs(det) < 1e-14)
    throw SingularBasis("basis is singular");
  c_vol_ = std::abs(det);
  if (R_.empty())
    throw StencilDoesNotSpan("empty stencil");
  std::set<std::vector<int>> entries;
  for (const auto &r : R_) {
    if (r.size() != d_)
      throw DimensionMismatch("stencil vector has wrong dimension");
    if (r.isZero())
      throw StencilNotSymmetric("stencil contains the zero vector");
    entries.insert(std::vector<int>(r.data(), r.data() + d_));
  }
  for (const auto &r : R_) {
    std::vector<int> neg(d_);
    for (int i = 0; i < d_; ++i)
      neg[i] = -r[i];
    if (!entries.count(neg))
      throw StencilNotSymmetric("stencil is not symmetric under negation");
  }
  if (stencil_lattice_index(d_, R_) != 1)
    throw StencilDoesNotSpan("stencil does not Z-span the lattice");
}

LatticePtr make_lattice(const Eigen::MatrixXd &basis,
                        const std::vector<Site> &stencil, int ncomp) {
  return std::make_shared<Lattice>(basis, stencil, ncomp);
}

Window::Window(std::vector<Site> sites) : sites_(std::move(sites)) {
  index_.reserve(sites_.size());
  for (size_t i = 0; i < sites_.size(); ++i) {
    auto [it, fresh] = index_.emplace(site_key(sites_[i]), int(i));
    (void)it;
    if (!fresh)
      throw Error("duplicate site in window");
  }
}

WindowPtr ball_window(const Lattice &lat, double r) {
  // bound integer coordinates by r / sigma_min(A)
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lat.basis());
  double smin = svd.singularValues().minCoeff();
  int m = static_cast<int>(std::ceil(r / smin)) + 1;
  std::vector<Site> sites;
  int d = lat.d();
  Site n(d);
  std::function<void(int)> rec = [&](int k) {
    if (k == d) {
      if (lat.radius(n) <= r)
        sites.push_back(n);
      return;
    }
    for (int v = -m; v <= m; ++v) {
      n[k] = v;
      rec(k + 1);
    }
  };
  rec(0);
  return std::make_shared<Window>(std::move(sites));
}

WindowPtr box_window(const Lattice &lat, int m) {
  std::vector<Site> sites;
  int d = lat.d();
  Site n(d);
  std::function<void(int)> rec = [&](int k) {
    if (k == d) {
      sites.push_back(n);
      return;
    }
    for (int v = -m; v <= m; ++v) {
      n[k] = v;
      rec(k + 1);
    }
  };
  rec(0);
  return std::make_shared<Window>(std::move(sites));
}

Eigen::VectorXd
finite_difference(const std::function<Eigen::VectorXd(const Site &)> &u,
                  const std::vector<Site> &dirs, const Site &site) {
  const int j = static_cast<int>(dirs.size());
  Eigen::VectorXd acc;
  // inclusion-exclusion over subsets of the direction tuple
  for (unsigned mask = 0; mask < (1u << j); ++mask) {
    Site n = site;
    int bits = 0;
    for (int i = 0; i < j; ++i)
      if (mask & (1u << i)) {
        n += dirs[i];
        ++bits;
      }
    double sign = ((j - bits) % 2 == 0) ? 1.0 : -1.0;
    Eigen::VectorXd v = u(n);
    if (acc.size() == 0)
      acc = Eigen::VectorXd::Zero(v.size());
    acc += sign * v;
  }
  return acc;
}

Eigen::VectorXd finite_difference(const LatticeField &u,
                                  const std::vector<Site> &dirs,
                                  const Site &site) {
  return finite_difference(
      [&u](const Site &n) { return u.value(n); }, dirs, site);
}

Eigen::VectorXd discrete_divergence(const BondField &g, const Site &site) {
  const auto &R = g.lattice().stencil();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(g.lattice().ncomp());
  for (size_t r = 0; r < R.size(); ++r) {
    // -D_{-rho} g_{. rho}(l) = g_{. rho}(l) - g_{. rho}(l - rho)
    out += g.value(site).col(r) - g.value(site - R[r]).col(r);
  }
  return out;
}

} // namespace latfield
