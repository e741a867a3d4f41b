#include "latfield/kernels.hpp"

#include <cmath>
#include <numbers>

namespace latfield {

namespace {

using Cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

constexpr double pi = std::numbers::pi;
constexpr Cplx I{0.0, 1.0};

//! Hhat_{2n}(sigma) continued to complex sigma.
CMat multiplier_term_c(const MultiplierSeries &ms, int n, const CVec &sigma) {
  const Lattice &lat = ms.lattice();
  const int N = lat.ncomp();
  double fact = 1;
  for (int i = 2; i <= 2 * n; ++i)
    fact *= i;
  double sign = (n % 2 == 0) ? -1.0 : 1.0;
  CMat H = CMat::Zero(N, N);
  const auto &taus = ms.diffSet();
  for (size_t i = 0; i < taus.size(); ++i) {
    Cplx kt = 0;
    Eigen::VectorXd p = lat.position(taus[i]);
    for (int a = 0; a < lat.d(); ++a)
      kt += sigma[a] * p[a];
    H += (sign * 2.0 * std::pow(kt, 2 * n) / fact) * ms.coeffA(i);
  }
  return H;
}

//! A_{2n}(sigma) continued to complex sigma (composition series).
CMat inverse_series_term_c(const MultiplierSeries &ms, int n,
                           const CVec &sigma) {
  CMat H2 = multiplier_term_c(ms, 1, sigma);
  const int N = ms.lattice().ncomp();
  CMat H2i;
  if (N == 1) {
    if (std::abs(H2(0, 0)) < 1e-12)
      throw SingularH2("complex continuation hit a zero of H2");
    H2i = CMat::Constant(1, 1, 1.0 / H2(0, 0));
  } else {
    Eigen::FullPivLU<CMat> lu(H2);
    if (!lu.isInvertible())
      throw SingularH2("complex continuation hit a singular H2");
    H2i = lu.inverse();
  }
  if (n == -1)
    return H2i;
  CMat out = CMat::Zero(N, N);
  for (const auto &alpha : inverse_series_compositions(n)) {
    CMat term = H2i;
    for (int a : alpha)
      term = term * multiplier_term_c(ms, a / 2, sigma) * H2i;
    double sign = (alpha.size() % 2 == 0) ? 1.0 : -1.0;
    out += sign * term;
  }
  return out;
}

} // namespace

std::complex<double> j_function(int l, std::complex<double> w) {
  if (l >= 0) {
    if (std::abs(w) == 0.0)
      throw SingularArgument("J_l(0) with l >= 0");
    double fact = 1;
    for (int i = 2; i <= l; ++i)
      fact *= i;
    return fact * std::pow(-I * w, -l - 1);
  }
  int m = -l - 1; // J_l = (iw)^m / m! * (-log(-iw) + H_m)
  double fact = 1, harm = 0;
  for (int i = 1; i <= m; ++i) {
    fact *= i;
    harm += 1.0 / i;
  }
  return std::pow(I * w, m) / fact * (-std::log(-I * w) + harm);
}

const Eigen::MatrixXd &KernelValue::at(const std::vector<int> &multi) const {
  SymIndexSet idx(d, j);
  return comp[idx.rank(multi)];
}

double KernelValue::scalar(const std::vector<int> &multi) const {
  return at(multi)(0, 0);
}

double KernelValue::maxAbs() const {
  double m = 0;
  for (const auto &c : comp)
    m = std::max(m, c.cwiseAbs().maxCoeff());
  return m;
}

ContinuumKernels::ContinuumKernels(SitePotentialPtr V, double tol)
    : ms_(std::move(V)), tol_(tol) {
  if (ms_.lattice().d() != 2)
    throw AnisotropyUnsupported("continuum kernels implemented for d = 2");
}

KernelValue ContinuumKernels::evalAtLevel(int n, const Eigen::VectorXd &x,
                                          int j, int nodes) const {
  const Lattice &lat = ms_.lattice();
  const int N = lat.ncomp();
  const double phi = std::atan2(x[1], x[0]);
  const double delta = 0.4;
  const int l = 2 * n - 1 + j; // J index after (-Delta)^{n+1} and j gradients

  SymIndexSet idx(2, j);
  std::vector<CMat> acc(idx.size(), CMat::Zero(N, N));

  // deformed contour theta(t) = t - i delta sin(t - phi) keeps
  // Im(x . sigma) >= 0, where J_l is analytic
  for (int q = 0; q < nodes; ++q) {
    double t = 2.0 * pi * q / nodes;
    Cplx theta = t - I * delta * std::sin(t - phi);
    Cplx dtheta = 1.0 - I * delta * std::cos(t - phi);
    CVec sigma(2);
    sigma << std::cos(theta), std::sin(theta);
    Cplx w = x[0] * sigma[0] + x[1] * sigma[1];
    CMat A = inverse_series_term_c(ms_, n - 1, sigma);
    Cplx base = j_function(l, w) * dtheta * (2.0 * pi / nodes);
    for (int c = 0; c < idx.size(); ++c) {
      Cplx fac = base;
      for (int s = 0; s < j; ++s)
        fac *= I * sigma[idx.index(c)[s]];
      acc[c] += fac * A;
    }
  }

  KernelValue out;
  out.d = 2;
  out.j = j;
  const double scale = lat.cvol() / ((2.0 * pi) * (2.0 * pi));
  for (int c = 0; c < idx.size(); ++c)
    out.comp.push_back(scale * acc[c].real());
  return out;
}

KernelValue ContinuumKernels::eval(int n, const Eigen::VectorXd &x,
                                   int j) const {
  if (x.norm() == 0.0)
    throw SingularArgument("kernel evaluation at x = 0");
  if (n < 0 || j < 0 || j > 4)
    throw InvalidOrder("eval_kernel: n >= 0, 0 <= j <= 4");
  int nodes = 256;
  KernelValue prev = evalAtLevel(n, x, j, nodes);
  for (int m = 0; m < 7; ++m) {
    nodes *= 2;
    KernelValue cur = evalAtLevel(n, x, j, nodes);
    double diff = 0, scale = std::max(cur.maxAbs(), 1e-300);
    for (size_t c = 0; c < cur.comp.size(); ++c)
      diff = std::max(diff,
                      (cur.comp[c] - prev.comp[c]).cwiseAbs().maxCoeff());
    if (diff <= tol_ * scale)
      return cur;
    prev = cur;
  }
  throw QuadratureNotConverged("kernel quadrature did not settle");
}

Eigen::MatrixXd ContinuumKernels::logMatrix() const {
  Eigen::VectorXd x(2);
  x << 3.0, 1.0;
  KernelValue a = eval(0, x, 0), b = eval(0, 2.0 * x, 0);
  return (b.comp[0] - a.comp[0]) / std::log(2.0);
}

} // namespace latfield
