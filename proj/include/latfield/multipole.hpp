#pragma once
#include <functional>
#include <vector>

#include "latfield/greens.hpp"
#include "latfield/kernels.hpp"
#include "latfield/sym_tensor.hpp"

namespace latfield {

//! j-th moment sum f(l) (x) l^{(x)j} over physical positions l = A n,
//! stored as one symmetric j-tensor per displacement component.
struct MomentTensor {
  int order = 0;
  std::vector<SymTensor<double>> value; // one per component k
  double radius = 0;
  double tailEstimate = 0;
};

//! Partial moment sums over |A n| <= radius with a geometric tail
//! extrapolation from dyadic annuli. Throws NonSummableTail when the annulus
//! contributions do not decay.
std::vector<MomentTensor>
compute_moments(const Lattice &lat,
                const std::function<Eigen::VectorXd(const Site &)> &f,
                int jmax, double radius, double tailTol = 1e-4);

//! Multipole coefficients b^{(i,k)} over a lattice basis S, i = 0..p-1.
//! coeff[i][k] is a symmetric order-i tensor over basis indices.
struct MultipoleCoeffs {
  std::vector<Site> basis;                             // S, integer coords
  std::vector<Eigen::VectorXd> basisPos;               // A S
  std::vector<std::vector<SymTensor<double>>> coeff;   // [i][k]
  int order() const { return static_cast<int>(coeff.size()); }
  int ncomp() const { return coeff.empty() ? 0 : int(coeff[0].size()); }
};

//! Moment -> coefficient bijection: solves, per order j and component k,
//! (-1)^j j! sum_rho b_rho rho^(.) = (I_j)_k in the canonical layout.
MultipoleCoeffs fit_coefficients(const std::vector<MomentTensor> &moments,
                                 const Lattice &lat,
                                 std::vector<Site> basis = {});

//! v_b(l) = sum_{i,k} b^{(i,k)} : D_S^i G_k(l).
Eigen::VectorXd eval_discrete_multipole(const MultipoleCoeffs &b,
                                        const LatticeGreens &G, const Site &l);

//! Continuum coefficients a^{(i,n,k)} obtained by Taylor-expanding the
//! stencil differences D_S^i into derivative monomials and grouping by
//! kernel order; a[i][n][k] contracts against grad^i (G_n)_{.k}.
struct ContinuumMultipole {
  int order = 0;                                                // p
  std::vector<std::vector<std::vector<SymTensor<double>>>> a;   // [i][n][k]
};

ContinuumMultipole continuum_coefficients(const MultipoleCoeffs &b, int p);

//! sum a^{(i,n,k)} : grad^i (G_n)_{.k}(x).
Eigen::VectorXd eval_continuum_multipole(const MultipoleCoeffs &b,
                                         const ContinuumKernels &kernels,
                                         const Eigen::VectorXd &x, int p);

//! Shell table and slope of |D^j (discrete - continuum)| multipole fields.
ExpansionTable multipole_gap_table(const MultipoleCoeffs &b,
                                   const LatticeGreens &G,
                                   const ContinuumKernels &kernels, int p,
                                   int j, int samplesPerShell = 24);

} // namespace latfield
