#pragma once
#include <string>
#include <vector>

#include "latfield/kernels.hpp"
#include "latfield/lattice.hpp"
#include "latfield/potentials.hpp"
#include "latfield/slope.hpp"

namespace latfield {

//! Lattice Green's function on a ball window, in the paper's d=2
//! renormalized normalization.
class LatticeGreens {
public:
  LatticeGreens(SitePotentialPtr V, WindowPtr win,
                std::vector<Eigen::MatrixXd> values, int L,
                double richardsonGap, double calibrationResidual);

  const SitePotential &potential() const { return *V_; }
  SitePotentialPtr potentialPtr() const { return V_; }
  const Lattice &lattice() const { return V_->lattice(); }
  const Window &window() const { return *win_; }
  WindowPtr windowPtr() const { return win_; }
  int supercellL() const { return L_; }
  double richardsonGap() const { return gap_; }
  double calibrationResidual() const { return calib_; }

  //! G(l) as an N x N matrix; throws OutOfWindow outside the window.
  const Eigen::MatrixXd &value(const Site &n) const {
    return values_[win_->indexOf(n)];
  }
  const Eigen::MatrixXd &valueAt(int i) const { return values_[i]; }

  //! Iterated finite difference D_dirs G e_col at site l.
  Eigen::MatrixXd difference(const std::vector<Site> &dirs,
                             const Site &l) const;

private:
  SitePotentialPtr V_;
  WindowPtr win_;
  std::vector<Eigen::MatrixXd> values_;
  int L_;
  double gap_, calib_;
};

//! Supercell spectral inversion with Richardson extrapolation over L and 2L,
//! then d=2 constant calibration against G0 + G1 on the outer third of the
//! window. L must be a power of two with L >= 8 * window_radius.
//! When cacheDir is non-empty (or LATFIELD_CACHE is set), the window table
//! is cached on disk keyed by model + L + radius.
LatticeGreens compute_lattice_green(SitePotentialPtr V, double window_radius,
                                    int L, const std::string &cacheDir = "");

//! Slow validation oracle: direct quadrature of the renormalized (d=2,
//! Euler-Mascheroni) Brillouin-zone definition of G at a single site.
Eigen::MatrixXd greens_oracle(SitePotentialPtr V, const Site &l,
                              int gridNodes = 256, int sigmaNodes = 256,
                              int radialNodes = 2000);

//! Shell-max log-log decay fit of |D^j G|; j = 0 fits log growth of
//! G(l) - G(0) instead.
SlopeFit green_decay_report(const LatticeGreens &G, int j);

struct ExpansionTable {
  std::vector<Shell> shells;
  SlopeFit fit;
};

//! Shell table and slope of |D^j (G - sum_{n<=p} G_n)|, kernel differences
//! computed by sampling G_n at shifted lattice points.
ExpansionTable expansion_error_table(const LatticeGreens &G,
                                     const ContinuumKernels &kernels, int p,
                                     int j, int samplesPerShell = 32);

} // namespace latfield
