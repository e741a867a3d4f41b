#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "latfield/errors.hpp"

namespace latfield {

using Site = Eigen::VectorXi; // integer lattice coordinates n, position A n

//! Pack integer coordinates into a hashable key. Coordinates must stay
//! within +-2^20, far beyond any window used here.
inline std::int64_t site_key(const Site &n) {
  std::int64_t k = 0;
  for (int i = 0; i < n.size(); ++i)
    k |= (std::int64_t(n[i] + (1 << 20)) & ((1 << 21) - 1)) << (21 * i);
  return k;
}

//! Bravais lattice A Z^d with a finite symmetric interaction stencil.
//! Immutable after construction.
class Lattice {
public:
  Lattice(Eigen::MatrixXd basis, std::vector<Site> stencil, int ncomp);

  int d() const { return d_; }
  int ncomp() const { return N_; }
  const Eigen::MatrixXd &basis() const { return A_; }
  double cvol() const { return c_vol_; }
  const std::vector<Site> &stencil() const { return R_; }
  int stencilSize() const { return static_cast<int>(R_.size()); }

  Eigen::VectorXd position(const Site &n) const { return A_ * n.cast<double>(); }
  double radius(const Site &n) const { return position(n).norm(); }

private:
  int d_, N_;
  Eigen::MatrixXd A_;
  std::vector<Site> R_;
  double c_vol_;
};

using LatticePtr = std::shared_ptr<const Lattice>;

LatticePtr make_lattice(const Eigen::MatrixXd &basis,
                        const std::vector<Site> &stencil, int ncomp);

//! Finite set of sites with O(1) membership. Out-of-window access anywhere
//! in the library is a hard error, never a silent zero.
class Window {
public:
  Window() = default;
  explicit Window(std::vector<Site> sites);

  int size() const { return static_cast<int>(sites_.size()); }
  const Site &site(int i) const { return sites_[i]; }
  const std::vector<Site> &sites() const { return sites_; }
  bool contains(const Site &n) const {
    return index_.count(site_key(n)) != 0;
  }
  int indexOf(const Site &n) const {
    auto it = index_.find(site_key(n));
    if (it == index_.end())
      throw OutOfWindow("site not in window");
    return it->second;
  }

private:
  std::vector<Site> sites_;
  std::unordered_map<std::int64_t, int> index_;
};

using WindowPtr = std::shared_ptr<const Window>;

//! All sites with |A n| <= r.
WindowPtr ball_window(const Lattice &lat, double r);
//! All sites with coordinates in [-m, m]^d.
WindowPtr box_window(const Lattice &lat, int m);

//! Displacement field u : window -> R^N. Values are rows of a dense matrix.
class LatticeField {
public:
  LatticeField(LatticePtr lat, WindowPtr win, int ncomp)
      : lat_(std::move(lat)), win_(std::move(win)), ncomp_(ncomp),
        values_(Eigen::MatrixXd::Zero(win_->size(), ncomp)) {}

  const Lattice &lattice() const { return *lat_; }
  const Window &window() const { return *win_; }
  WindowPtr windowPtr() const { return win_; }
  int ncomp() const { return ncomp_; }

  Eigen::VectorXd value(const Site &n) const {
    return values_.row(win_->indexOf(n)).transpose();
  }
  void setValue(const Site &n, const Eigen::VectorXd &v) {
    values_.row(win_->indexOf(n)) = v.transpose();
  }
  Eigen::MatrixXd &values() { return values_; }
  const Eigen::MatrixXd &values() const { return values_; }

private:
  LatticePtr lat_;
  WindowPtr win_;
  int ncomp_;
  Eigen::MatrixXd values_; // size() x N
};

//! Bond field g : window -> R^{N x R}, one N-vector per stencil direction.
class BondField {
public:
  BondField(LatticePtr lat, WindowPtr win)
      : lat_(std::move(lat)), win_(std::move(win)),
        values_(win_->size(),
                Eigen::MatrixXd::Zero(lat_->ncomp(), lat_->stencilSize())) {}

  const Lattice &lattice() const { return *lat_; }
  const Window &window() const { return *win_; }
  Eigen::MatrixXd &value(const Site &n) { return values_[win_->indexOf(n)]; }
  const Eigen::MatrixXd &value(const Site &n) const {
    return values_[win_->indexOf(n)];
  }
  Eigen::MatrixXd &valueAt(int i) { return values_[i]; }

private:
  LatticePtr lat_;
  WindowPtr win_;
  std::vector<Eigen::MatrixXd> values_;
};

//! Iterated finite difference D_{rho_1} ... D_{rho_j} u(site), evaluated by
//! inclusion-exclusion (order-independent by construction).
Eigen::VectorXd finite_difference(const LatticeField &u,
                                  const std::vector<Site> &dirs,
                                  const Site &site);

//! Same, on a raw callable site -> vector (used by tests and kernels).
Eigen::VectorXd
finite_difference(const std::function<Eigen::VectorXd(const Site &)> &u,
                  const std::vector<Site> &dirs, const Site &site);

//! Div g(l) = -sum_rho D_{-rho} g_{. rho}(l).
Eigen::VectorXd discrete_divergence(const BondField &g, const Site &site);

} // namespace latfield
