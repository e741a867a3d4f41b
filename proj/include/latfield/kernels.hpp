#pragma once
#include <complex>
#include <vector>

#include "latfield/fourier.hpp"
#include "latfield/sym_tensor.hpp"

namespace latfield {

//! J_l special functions on the closed upper half plane (principal branch).
std::complex<double> j_function(int l, std::complex<double> w);

//! N x N matrix-valued symmetric j-tensor in x-slots: one matrix per
//! canonical multiset index of SymIndexSet(d, j).
struct KernelValue {
  int d = 0, j = 0;
  std::vector<Eigen::MatrixXd> comp;

  const Eigen::MatrixXd &at(const std::vector<int> &multi) const;
  //! Scalar-problem convenience (N = 1): component as a plain double.
  double scalar(const std::vector<int> &multi = {}) const;
  double maxAbs() const;
};

//! Continuum kernels G_n of the Green's function expansion, evaluated by the
//! Morrey surface-integral representation (d = 2).
class ContinuumKernels {
public:
  explicit ContinuumKernels(SitePotentialPtr V, double tol = 1e-9);

  const Lattice &lattice() const { return ms_.lattice(); }
  const MultiplierSeries &series() const { return ms_; }

  //! grad^j G_n(x); j up to jmax (default cap 4).
  KernelValue eval(int n, const Eigen::VectorXd &x, int j) const;

  //! Log-part matrix A of G_0 in d=2: G_0(t x) - G_0(x) = A log t.
  Eigen::MatrixXd logMatrix() const;

private:
  KernelValue evalAtLevel(int n, const Eigen::VectorXd &x, int j,
                          int nodes) const;

  MultiplierSeries ms_;
  double tol_;
};

} // namespace latfield
