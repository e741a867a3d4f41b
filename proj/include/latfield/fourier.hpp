#pragma once
#include <Eigen/Dense>
#include <vector>

#include "latfield/potentials.hpp"

namespace latfield {

//! Fourier multiplier of H and its small-k expansion machinery:
//! Hhat(k) = sum_tau 4 A_tau sin^2(k.tau/2) over the stencil difference set,
//! homogeneous Taylor terms Hhat_{2n}, and the inverse-series terms A_{2n}.
class MultiplierSeries {
public:
  explicit MultiplierSeries(SitePotentialPtr V, int nmax = 3);

  const Lattice &lattice() const { return V_->lattice(); }
  const SitePotential &potential() const { return *V_; }
  int nmax() const { return nmax_; }

  const std::vector<Site> &diffSet() const { return taus_; }
  const Eigen::MatrixXd &coeffA(int i) const { return A_[i]; }

  //! Hhat(k) = sum_tau 4 A_tau sin^2(k.tau/2).
  Eigen::MatrixXd multiplier(const Eigen::VectorXd &k) const;

  //! 2n-homogeneous Taylor term Hhat_{2n}(k), n >= 1.
  Eigen::MatrixXd multiplierTerm(int n, const Eigen::VectorXd &k) const;

  //! Inverse-series term A_{2n}(k), n >= -1; A_{-2} = Hhat_2(k)^{-1}.
  Eigen::MatrixXd inverseSeriesTerm(int n, const Eigen::VectorXd &k) const;

  Eigen::MatrixXd h2inv(const Eigen::VectorXd &k) const;

private:
  SitePotentialPtr V_;
  int nmax_;
  std::vector<Site> taus_;
  std::vector<Eigen::VectorXd> pos_;
  std::vector<Eigen::MatrixXd> A_; // one N x N block per tau
};

//! Compositions alpha in (2N)^j with alpha_i >= 4 even and
//! sum alpha_i = 2n + 2j + 2, for all j >= 1. Returned grouped as flat list.
std::vector<std::vector<int>> inverse_series_compositions(int n);

} // namespace latfield
