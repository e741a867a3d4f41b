#pragma once
#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "latfield/lattice.hpp"

namespace latfield {

//! Dense multilinear form on (R^m)^3 / (R^m)^4, used for third and fourth
//! derivative tensors of V and W.
struct Form3 {
  int m = 0;
  std::vector<double> a; // m^3
  Form3() = default;
  explicit Form3(int dim) : m(dim), a(dim * dim * dim, 0.0) {}
  double &operator()(int i, int j, int k) { return a[(i * m + j) * m + k]; }
  double operator()(int i, int j, int k) const {
    return a[(i * m + j) * m + k];
  }
  double apply(const Eigen::VectorXd &x, const Eigen::VectorXd &y,
               const Eigen::VectorXd &z) const;
  double maxAbs() const;
};

struct Form4 {
  int m = 0;
  std::vector<double> a; // m^4
  Form4() = default;
  explicit Form4(int dim) : m(dim), a(dim * dim * dim * dim, 0.0) {}
  double &operator()(int i, int j, int k, int l) {
    return a[((i * m + j) * m + k) * m + l];
  }
  double operator()(int i, int j, int k, int l) const {
    return a[((i * m + j) * m + k) * m + l];
  }
  double apply(const Eigen::VectorXd &x, const Eigen::VectorXd &y,
               const Eigen::VectorXd &z, const Eigen::VectorXd &w) const;
  double maxAbs() const;
};

//! Site potential V : R^{N x R} -> R with derivatives through fourth order
//! at the origin. Stencil arguments g carry one N-vector per stencil
//! direction (columns ordered like Lattice::stencil()).
class SitePotential {
public:
  virtual ~SitePotential() = default;

  const Lattice &lattice() const { return *lat_; }
  LatticePtr latticePtr() const { return lat_; }
  const std::string &name() const { return name_; }

  virtual double value(const Eigen::MatrixXd &g) const = 0;
  virtual Eigen::MatrixXd grad(const Eigen::MatrixXd &g) const = 0;
  //! Hessian as a (N*|R|) x (N*|R|) matrix; flat index i + N*r.
  virtual Eigen::MatrixXd hess(const Eigen::MatrixXd &g) const = 0;

  //! Masked variants: entries of `alive` select the surviving stencil
  //! directions (vacancy bonds simply drop out of the per-site sum).
  virtual double valueMasked(const Eigen::MatrixXd &g,
                             const std::vector<bool> &alive) const = 0;
  virtual Eigen::MatrixXd gradMasked(const Eigen::MatrixXd &g,
                                     const std::vector<bool> &alive) const = 0;
  virtual Eigen::MatrixXd hessMasked(const Eigen::MatrixXd &g,
                                     const std::vector<bool> &alive) const = 0;

  //! True if hess(g) is block-diagonal (one N x N block per stencil
  //! direction, no cross-bond coupling); hessBlocks then packs the diagonal
  //! blocks side by side into an N x (N*|R|) matrix. Solvers use the packed
  //! form to avoid streaming the mostly-zero dense Hessian.
  virtual bool bondDiagonalHess() const { return false; }
  virtual Eigen::MatrixXd hessBlocks(const Eigen::MatrixXd &g) const;
  virtual Eigen::MatrixXd
  hessBlocksMasked(const Eigen::MatrixXd &g,
                   const std::vector<bool> &alive) const;

  //! Analytic third/fourth derivative forms at g = 0, evaluated on stencil
  //! arguments.
  virtual double d3_0(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
                      const Eigen::MatrixXd &c) const = 0;
  virtual double d4_0(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
                      const Eigen::MatrixXd &c,
                      const Eigen::MatrixXd &e) const = 0;

  //! Cached nabla^2 V(0) block C_{sigma rho} in R^{N x N}.
  const Eigen::MatrixXd &hess0() const;
  Eigen::MatrixXd hess0Block(int sigma, int rho) const;

  //! Index of -rho in the stencil ordering.
  int negIndex(int rho) const;

protected:
  SitePotential(LatticePtr lat, std::string name);

private:
  LatticePtr lat_;
  std::string name_;
  mutable Eigen::MatrixXd hess0_;
  std::vector<int> neg_;
};

using SitePotentialPtr = std::shared_ptr<const SitePotential>;

//! eval_site operation: order 0/1/2 -> value / gradient / hessian.
//! Higher orders away from 0 are not supported.
struct SiteEval {
  double value = 0;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd hess;
};
SiteEval eval_site(const SitePotential &V, const Eigen::MatrixXd &g, int order);

//! Cauchy-Born density tensors at zero strain. Flat gradient-slot index is
//! i * d + a for displacement component i and space direction a.
struct CauchyBornTensors {
  int d = 0, N = 0;
  double W0 = 0;
  Eigen::MatrixXd C2; // (N d) x (N d)
  Form3 W3;
  Form4 W4;

  //! For scalar problems, C2 as the d x d elliptic coefficient matrix.
  Eigen::MatrixXd scalarC() const;
  //! min over a grid of rank-one directions of C2[m (x) n, m (x) n].
  double legendreHadamardMin(int grid = 48) const;
};

CauchyBornTensors cauchy_born(const SitePotential &V);

//! Point-symmetry check V(A) = V((-A_{-rho})_rho) on random arguments.
struct SymmetryReport {
  double maxResidual = 0;
  bool pass = false;
};
SymmetryReport validate_symmetry(const SitePotential &V, int trials,
                                 unsigned seed = 0);

//! Fourier multiplier of the lattice Hessian,
//! Hhat(k) = sum_{rho sigma} C_{rho sigma} (2 sin^2 + 2 sin^2 - 2 sin^2).
Eigen::MatrixXd multiplier_direct(const SitePotential &V,
                                  const Eigen::VectorXd &k);

//! Lattice stability constant estimate: min over a k-grid of
//! lambda_min(Hhat(k)) / (sum over +-pairs of 4 sin^2(k.rho/2)).
double stability_constant(const SitePotential &V, int grid = 32);

//! Defect model: host potential outside B_Rdef, removed sites and reduced
//! stencils inside.
class DefectModel {
public:
  DefectModel(SitePotentialPtr host, double defectRadius,
              std::vector<Site> removed, double misfit = 0.1);

  const SitePotential &host() const { return *host_; }
  SitePotentialPtr hostPtr() const { return host_; }
  double defectRadius() const { return rdef_; }
  const std::vector<Site> &removed() const { return removed_; }

  bool isRemoved(const Site &n) const {
    return removedKeys_.count(site_key(n)) != 0;
  }
  //! Which stencil directions of site n survive (neighbour not removed).
  std::vector<bool> aliveMask(const Site &n) const;
  bool hasFullStencil(const Site &n) const;

  //! Eigenstrain of the modified core potentials V_l: sites adjacent to a
  //! removed site evaluate V at g + offset, where each surviving bond is
  //! offset by misfit times its bond vector (N == d models only; other
  //! sites, and N != d models, get a zero offset). This is what drives the
  //! relaxation: a pure bond removal leaves every surviving bond at its
  //! pair minimum and exerts no force.
  double misfit() const { return misfit_; }
  Eigen::MatrixXd strainOffset(const Site &n) const;

private:
  SitePotentialPtr host_;
  double rdef_;
  std::vector<Site> removed_;
  double misfit_;
  std::set<std::int64_t> removedKeys_;
};

using DefectModelPtr = std::shared_ptr<const DefectModel>;

struct DefectSpec {
  double defectRadius = 3.0;
  std::vector<Site> removed;
  double misfit = 0.1; // core eigenstrain, see DefectModel::strainOffset
};
DefectModelPtr make_defect_model(SitePotentialPtr host, const DefectSpec &spec);

//! Model registry keyed by name + parameter map (consumed by the CLI).
SitePotentialPtr make_model(const std::string &name,
                            const std::map<std::string, double> &params = {});
std::vector<std::string> model_names();

//! H[u](l) = -Div(nabla^2 V(0)[Du]) applied to a callable displacement.
Eigen::VectorXd
apply_H(const SitePotential &V,
        const std::function<Eigen::VectorXd(const Site &)> &u, const Site &l);

//! delta E(u)(l) = -Div(nabla V(Du(l))), the nonlinear residual force.
Eigen::VectorXd
apply_dE(const SitePotential &V,
         const std::function<Eigen::VectorXd(const Site &)> &u, const Site &l);

} // namespace latfield
