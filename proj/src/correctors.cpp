#include "latfield/correctors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "latfield/sym_tensor.hpp"

namespace latfield {

namespace {

constexpr double pi = std::numbers::pi;
using Cplx = std::complex<double>;

int total_order(const std::vector<int> &orders) {
  int t = 0;
  for (int o : orders)
    t += o;
  return t;
}

double dfactorial_ratio(int m, int k) { // m! / (m - k)!
  double f = 1;
  for (int i = m; i > m - k; --i)
    f *= i;
  return f;
}

class ZeroField final : public ScalarField {
public:
  explicit ZeroField(int d) : d_(d) {}
  int dim() const override { return d_; }
  double deriv(const Eigen::VectorXd &,
               const std::vector<int> &) const override {
    return 0.0;
  }

private:
  int d_;
};

class MonomialField final : public ScalarField {
public:
  explicit MonomialField(std::vector<int> powers) : p_(std::move(powers)) {}
  int dim() const override { return static_cast<int>(p_.size()); }
  double deriv(const Eigen::VectorXd &x,
               const std::vector<int> &orders) const override {
    double v = 1;
    for (size_t a = 0; a < p_.size(); ++a) {
      int k = orders[a];
      if (k > p_[a])
        return 0.0;
      v *= dfactorial_ratio(p_[a], k) * std::pow(x[int(a)], p_[a] - k);
    }
    return v;
  }

private:
  std::vector<int> p_;
};

class CombinationField final : public ScalarField {
public:
  explicit CombinationField(std::vector<std::pair<double, ScalarFieldPtr>> t)
      : terms_(std::move(t)) {}
  int dim() const override { return terms_.empty() ? 0 : terms_[0].second->dim(); }
  double deriv(const Eigen::VectorXd &x,
               const std::vector<int> &orders) const override {
    double v = 0;
    for (const auto &[c, f] : terms_)
      v += c * f->deriv(x, orders);
    return v;
  }

private:
  std::vector<std::pair<double, ScalarFieldPtr>> terms_;
};

//! (b / 2 pi) arg(z), z = x - core, branch cut on the positive real axis;
//! derivatives from d^m log(z) = (-1)^{m-1} (m-1)! z^{-m} and
//! d/dy g(z) = i g'(z).
class UCleField final : public ScalarField {
public:
  UCleField(double b, Eigen::Vector2d core) : b_(b), core_(std::move(core)) {}
  int dim() const override { return 2; }
  double deriv(const Eigen::VectorXd &x,
               const std::vector<int> &orders) const override {
    const double px = x[0] - core_[0], py = x[1] - core_[1];
    const int ax = orders[0], ay = orders[1], m = ax + ay;
    const double scale = b_ / (2.0 * pi);
    if (m == 0) {
      double th = std::atan2(py, px);
      if (th <= 0)
        th += 2.0 * pi;
      return scale * th;
    }
    Cplx z(px, py);
    Cplx fm = ((m - 1) % 2 == 0 ? 1.0 : -1.0) * dfactorial_ratio(m - 1, m - 1) *
              std::pow(z, -m);
    Cplx iy(0, 1);
    Cplx rot = std::pow(iy, ay);
    return scale * (rot * fm).imag();
  }

private:
  double b_;
  Eigen::Vector2d core_;
};

//! H_SG as a constant symmetric 4-tensor contracted against grad^4 u.
SymTensor<double> hsg_tensor(const SitePotential &V) {
  const Lattice &lat = V.lattice();
  if (lat.ncomp() != 1)
    throw NonScalarOperator("H_SG is implemented for scalar models");
  const int d = lat.d(), Rn = lat.stencilSize();
  SymTensor<double> W(d, 4);
  for (int s = 0; s < Rn; ++s) {
    Eigen::VectorXd sig = lat.position(lat.stencil()[s]);
    for (int r = 0; r < Rn; ++r) {
      double c = V.hess0Block(s, r)(0, 0);
      if (c == 0.0)
        continue;
      Eigen::VectorXd rho = lat.position(lat.stencil()[r]);
      W += sym_tensor_product<double>({sig, sig, rho, rho}) * (3.0 * c);
      W += sym_tensor_product<double>({sig, rho, rho, rho}) * (-2.0 * c);
      W += sym_tensor_product<double>({sig, sig, sig, rho}) * (-2.0 * c);
    }
  }
  W *= 1.0 / (12.0 * lat.cvol());
  return W;
}

SymTensor<double> grad4_tensor(const ScalarField &u, const Eigen::VectorXd &x) {
  const int d = u.dim();
  SymTensor<double> g4(d, 4);
  for (int c = 0; c < g4.size(); ++c) {
    std::vector<int> orders(d, 0);
    for (int slot : g4.indexSet().index(c))
      ++orders[slot];
    g4.coeff(c) = u.deriv(x, orders);
  }
  return g4;
}

double d1(const ScalarField &u, const Eigen::VectorXd &x, int a) {
  std::vector<int> o(u.dim(), 0);
  o[a] = 1;
  return u.deriv(x, o);
}

double d2(const ScalarField &u, const Eigen::VectorXd &x, int a, int b) {
  std::vector<int> o(u.dim(), 0);
  ++o[a];
  ++o[b];
  return u.deriv(x, o);
}

} // namespace

Eigen::VectorXd ScalarField::gradient(const Eigen::VectorXd &x) const {
  Eigen::VectorXd g(dim());
  std::vector<int> o(dim(), 0);
  for (int a = 0; a < dim(); ++a) {
    o[a] = 1;
    g[a] = deriv(x, o);
    o[a] = 0;
  }
  return g;
}

ScalarFieldPtr zero_field(int d) { return std::make_shared<ZeroField>(d); }

bool is_zero_field(const ScalarFieldPtr &f) {
  return std::dynamic_pointer_cast<const ZeroField>(f) != nullptr;
}

ScalarFieldPtr monomial_field(const std::vector<int> &powers) {
  return std::make_shared<MonomialField>(powers);
}

ScalarFieldPtr
linear_combination(std::vector<std::pair<double, ScalarFieldPtr>> terms) {
  return std::make_shared<CombinationField>(std::move(terms));
}

ScalarFieldPtr u_cle_screw(const SitePotential &V, const ScrewSpec &spec) {
  const Lattice &lat = V.lattice();
  if (lat.ncomp() != 1 || lat.d() != 2)
    throw AnisotropyUnsupported(
        "screw CLE profile needs the scalar antiplane setting");
  Eigen::Matrix2d C = cauchy_born(V).scalarC();
  double c = 0.5 * C.trace();
  if ((C - c * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() >
      1e-10 * std::abs(c))
    throw AnisotropyUnsupported(
        "anisotropic screw profiles are not implemented");
  // the cut must avoid lattice sites: the core may not sit on the line
  // x2 = (A n)_2 for small n2; an off-axis fractional part suffices
  for (int n2 = -4; n2 <= 4; ++n2) {
    Site n = Site::Zero(2);
    n[1] = n2;
    if (std::abs(lat.position(n)[1] - spec.core[1]) < 1e-9)
      throw ConfigInvalid("screw core must be placed off lattice rows");
  }
  return std::make_shared<UCleField>(spec.burgers, spec.core);
}

double screw_slip(const Lattice &lat, const ScrewSpec &spec, const Site &l,
                  const Site &rho) {
  Eigen::VectorXd P = lat.position(l), Q = lat.position(Site(l + rho));
  const double py = P[1] - spec.core[1], qy = Q[1] - spec.core[1];
  if (py * qy >= 0)
    return 0.0;
  const double xc = P[0] + (Q[0] - P[0]) * (-py) / (qy - py);
  if (xc <= spec.core[0])
    return 0.0;
  // crossing upward: the raw difference picked up the -b jump
  return py < 0 ? spec.burgers : -spec.burgers;
}

double apply_H_cut(const SitePotential &V, const ScrewSpec &spec,
                   const std::function<double(const Site &)> &u,
                   const Site &l) {
  const Lattice &lat = V.lattice();
  if (lat.ncomp() != 1)
    throw NonScalarOperator("cut-corrected H is scalar-only");
  const auto &R = lat.stencil();
  const int Rn = lat.stencilSize();
  auto flux = [&](const Site &m) {
    Eigen::VectorXd Du(Rn);
    double um = u(m);
    for (int s = 0; s < Rn; ++s)
      Du[s] = u(Site(m + R[s])) - um + screw_slip(lat, spec, m, R[s]);
    Eigen::VectorXd F(Rn);
    for (int r = 0; r < Rn; ++r) {
      F[r] = 0;
      for (int s = 0; s < Rn; ++s)
        F[r] += V.hess0Block(r, s)(0, 0) * Du[s];
    }
    return F;
  };
  Eigen::VectorXd Fl = flux(l);
  double out = 0;
  for (int r = 0; r < Rn; ++r)
    out -= Fl[r] - flux(Site(l - R[r]))[r];
  return out;
}

double apply_H_SG(const SitePotential &V, const ScalarField &u,
                  const Eigen::VectorXd &x) {
  return hsg_tensor(V).dot(grad4_tensor(u, x));
}

RhsFunction build_rhs_S(const SitePotential &V, int i,
                        const std::vector<ScalarFieldPtr> &lower,
                        ScalarFieldPtr multipole1) {
  if (i < 0 || i > 2)
    throw InvalidOrder("corrector right-hand sides are defined for i <= 2");
  auto zero = [](const Eigen::VectorXd &) { return 0.0; };
  if (i == 0)
    return zero;
  const Lattice &lat = V.lattice();
  if (lat.ncomp() != 1)
    throw NonScalarOperator("corrector right-hand sides are scalar-only");
  const int d = lat.d();
  auto cb = std::make_shared<CauchyBornTensors>(cauchy_born(V));
  const bool hasW3 = cb->W3.maxAbs() > 1e-13;

  if (i == 1) {
    if (d != 2 || !hasW3) // the d = 3 grouping pushes the W3 term into S_2
      return zero;
    if (lower.empty() || !lower[0])
      throw MissingPredecessor("S_1 needs u_0");
    ScalarFieldPtr u0 = lower[0];
    return [cb, u0, d](const Eigen::VectorXd &x) {
      double s = 0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c)
            s += cb->W3(a, b, c) * d2(*u0, x, a, b) * d1(*u0, x, c);
      return s;
    };
  }

  // i == 2
  if (lower.empty() || !lower[0])
    throw MissingPredecessor("S_2 needs u_0");
  ScalarFieldPtr u0 = lower[0];
  auto hsg = std::make_shared<SymTensor<double>>(hsg_tensor(V));

  if (d == 3) {
    return [cb, u0, hsg, hasW3, d](const Eigen::VectorXd &x) {
      double s = 0;
      if (hasW3)
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
              s += cb->W3(a, b, c) * d2(*u0, x, a, b) * d1(*u0, x, c);
      return s - hsg->dot(grad4_tensor(*u0, x));
    };
  }
  if (d != 2)
    throw InvalidOrder("correctors are implemented for d = 2 and d = 3");

  ScalarFieldPtr u1 = lower.size() > 1 ? lower[1] : nullptr;
  ScalarFieldPtr mp1 = multipole1;
  if (hasW3) {
    if (!u1)
      throw MissingPredecessor("S_2 needs u_1");
    if (!mp1)
      throw MissingPredecessor("S_2 needs the continuum dipole field u_1^CMP");
  }
  return [cb, u0, u1, mp1, hsg, hasW3, d](const Eigen::VectorXd &x) {
    double s = 0;
    if (hasW3) {
      // div(W3[grad u0, grad u1 + grad u1^CMP])
      auto g1t = [&](int c) {
        return d1(*u1, x, c) + (mp1 ? d1(*mp1, x, c) : 0.0);
      };
      auto g2t = [&](int a, int c) {
        return d2(*u1, x, a, c) + (mp1 ? d2(*mp1, x, a, c) : 0.0);
      };
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c)
            s += cb->W3(a, b, c) *
                 (d2(*u0, x, a, b) * g1t(c) + d1(*u0, x, b) * g2t(a, c));
    }
    if (cb->W4.maxAbs() > 1e-13) {
      // (1/6) div(W4[grad u0]^3) = (1/2) W4[grad^2 u0, grad u0, grad u0]
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c)
            for (int e = 0; e < d; ++e)
              s += 0.5 * cb->W4(a, b, c, e) * d2(*u0, x, a, b) *
                   d1(*u0, x, c) * d1(*u0, x, e);
    }
    return s - hsg->dot(grad4_tensor(*u0, x));
  };
}

// ---------------------------------------------------------------------------
// far-field radial solver

namespace {

constexpr double kGaussX[4] = {-0.8611363115940526, -0.3399810435848563,
                               0.3399810435848563, 0.8611363115940526};
constexpr double kGaussW[4] = {0.3478548451374538, 0.6521451548625461,
                               0.6521451548625461, 0.3478548451374538};

class FarFieldSolution final : public ScalarField {
public:
  FarFieldSolution(const SitePotential &V, const RhsFunction &f, double R0,
                   const FarFieldOptions &opts);

  int dim() const override { return 2; }
  double deriv(const Eigen::VectorXd &x,
               const std::vector<int> &orders) const override;

private:
  struct Polar {
    double u = 0, ur = 0, ut = 0, urr = 0, urt = 0, utt = 0;
  };
  Polar polarEval(double r, double th, int order) const;
  void cartesian(double r, double th, int order, double &u, Eigen::Vector2d &g,
                 Eigen::Matrix2d &H) const;

  Eigen::Matrix2d T_;    // y = T x maps the operator to -Laplace
  double rin_ = 0, t0_ = 0, h_ = 0;
  int K_ = 0, M_ = 0;
  std::vector<Eigen::VectorXcd> v_, dv_, vp_, dvp_; // per mode, grid tables
};

FarFieldSolution::FarFieldSolution(const SitePotential &V, const RhsFunction &f,
                                   double R0, const FarFieldOptions &opts) {
  const Lattice &lat = V.lattice();
  if (lat.ncomp() != 1 || lat.d() != 2)
    throw NonScalarOperator("far-field solver covers scalar d=2 models");
  if (R0 <= 0)
    throw ConfigInvalid("solve_far_field: R0 > 0 required");
  Eigen::Matrix2d C = cauchy_born(V).scalarC();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(C);
  if (es.eigenvalues().minCoeff() <= 0)
    throw UnstableModel("continuum operator is not elliptic");
  T_ = es.operatorInverseSqrt();
  Eigen::Matrix2d Tinv = es.operatorSqrt();
  rin_ = R0 / std::sqrt(es.eigenvalues().maxCoeff());

  const int ntheta = opts.angularNodes;
  const int mall = ntheta / 2 - 1;
  M_ = std::min(opts.keepModes, mall);
  const int ipo = opts.intervalsPerOctave;
  const int noct = static_cast<int>(std::ceil(std::log2(opts.rmaxFactor)));
  K_ = ipo * noct;
  t0_ = std::log(rin_);
  h_ = std::log(2.0) / ipo;

  // sample f on the Gauss nodes of every radial interval and on the grid
  // points, reduced to angular Fourier modes
  auto modesAt = [&](double t, Eigen::VectorXcd &gm) {
    const double r = std::exp(t);
    Eigen::VectorXd fs(ntheta);
    for (int a = 0; a < ntheta; ++a) {
      double th = 2.0 * pi * a / ntheta;
      Eigen::Vector2d y(r * std::cos(th), r * std::sin(th));
      fs[a] = f(Tinv * y);
    }
    for (int m = 0; m <= mall; ++m) {
      Cplx s = 0;
      for (int a = 0; a < ntheta; ++a) {
        double th = 2.0 * pi * a / ntheta;
        s += fs[a] * Cplx(std::cos(m * th), -std::sin(m * th));
      }
      gm[m] = s / double(ntheta);
    }
  };

  // local interval integrals, relative exponents keep everything O(g h)
  std::vector<Eigen::VectorXcd> preLoc(M_ + 1), sufLoc(M_ + 1);
  for (int m = 0; m <= M_; ++m) {
    preLoc[m] = Eigen::VectorXcd::Zero(K_);
    sufLoc[m] = Eigen::VectorXcd::Zero(K_);
  }
  Eigen::VectorXcd aLoc = Eigen::VectorXcd::Zero(K_);
  std::vector<Eigen::VectorXcd> gridg(M_ + 1,
                                      Eigen::VectorXcd::Zero(K_ + 1));
  Eigen::VectorXd ampMax = Eigen::VectorXd::Zero(mall + 1);

  Eigen::VectorXcd gm(mall + 1);
  for (int k = 0; k < K_; ++k) {
    const double ta = t0_ + k * h_, tb = ta + h_;
    for (int q = 0; q < 4; ++q) {
      const double t = 0.5 * (ta + tb) + 0.5 * h_ * kGaussX[q];
      const double w = 0.5 * h_ * kGaussW[q];
      modesAt(t, gm);
      for (int m = 0; m <= mall; ++m)
        ampMax[m] = std::max(ampMax[m], std::abs(gm[m]));
      for (int m = 0; m <= M_; ++m) {
        preLoc[m][k] += w * std::exp((m + 2.0) * (t - tb)) * gm[m];
        sufLoc[m][k] += w * std::exp((2.0 - m) * (t - ta)) * gm[m];
      }
      aLoc[k] += w * std::exp(2.0 * (t - ta)) * (t - ta) * gm[0];
    }
  }
  for (int k = 0; k <= K_; ++k) {
    modesAt(t0_ + k * h_, gm);
    for (int m = 0; m <= M_; ++m)
      gridg[m][k] = gm[m];
  }

  const double peak = ampMax.maxCoeff();
  for (int m = M_ + 1; m <= mall; ++m)
    if (ampMax[m] > opts.modeTol * peak)
      throw ModeTruncationNotConverged(
          "angular modes beyond the kept range are not negligible");

  v_.assign(M_ + 1, Eigen::VectorXcd::Zero(K_ + 1));
  dv_.assign(M_ + 1, Eigen::VectorXcd::Zero(K_ + 1));
  vp_.assign(M_ + 1, Eigen::VectorXcd::Zero(K_ + 1));
  dvp_.assign(M_ + 1, Eigen::VectorXcd::Zero(K_ + 1));

  for (int m = 1; m <= M_; ++m) {
    // P[k] = int_{t0}^{t_k} e^{(m+2)(tau - t_k)} g dtau (prefix)
    // Q[k] = int_{t_k}^{tK} e^{(2-m)(tau - t_k)} g dtau (suffix)
    Eigen::VectorXcd P = Eigen::VectorXcd::Zero(K_ + 1),
                     Q = Eigen::VectorXcd::Zero(K_ + 1);
    for (int k = 0; k < K_; ++k)
      P[k + 1] = P[k] * std::exp(-(m + 2.0) * h_) + preLoc[m][k];
    for (int k = K_ - 1; k >= 0; --k)
      Q[k] = sufLoc[m][k] + std::exp((2.0 - m) * h_) * Q[k + 1];
    for (int k = 0; k <= K_; ++k) {
      const double t = t0_ + k * h_, r = std::exp(t);
      Cplx v = std::exp(2.0 * t) * (Q[k] + P[k]) / (2.0 * m);
      Cplx vp = std::exp(t) * (Q[k] - P[k]) / 2.0;
      Cplx vpp = -gridg[m][k] - vp / r + double(m) * double(m) * v / (r * r);
      v_[m][k] = v;
      dv_[m][k] = r * vp;
      vp_[m][k] = vp;
      dvp_[m][k] = r * vpp;
    }
  }
  {
    // m = 0: v0(r) = -int_r^inf s g0(s) ln(s/r) ds, v0'(r) = (1/r) int_r^inf s g0
    Eigen::VectorXcd Q = Eigen::VectorXcd::Zero(K_ + 1),
                     A = Eigen::VectorXcd::Zero(K_ + 1);
    for (int k = K_ - 1; k >= 0; --k) {
      A[k] = aLoc[k] + std::exp(2.0 * h_) * (A[k + 1] + h_ * Q[k + 1]);
      Q[k] = sufLoc[0][k] + std::exp(2.0 * h_) * Q[k + 1];
    }
    for (int k = 0; k <= K_; ++k) {
      const double t = t0_ + k * h_, r = std::exp(t);
      Cplx v = -std::exp(2.0 * t) * A[k];
      Cplx vp = std::exp(t) * Q[k];
      Cplx vpp = -gridg[0][k] - vp / r;
      v_[0][k] = v;
      dv_[0][k] = r * vp;
      vp_[0][k] = vp;
      dvp_[0][k] = r * vpp;
    }
  }
}

namespace {
//! Cubic Hermite value and t-derivative on [t_k, t_k + h].
void hermite(double s, double h, Cplx ya, Cplx da, Cplx yb, Cplx db,
             Cplx &val, Cplx &dval) {
  const double s2 = s * s, s3 = s2 * s;
  val = (2 * s3 - 3 * s2 + 1) * ya + (s3 - 2 * s2 + s) * h * da +
        (-2 * s3 + 3 * s2) * yb + (s3 - s2) * h * db;
  dval = ((6 * s2 - 6 * s) * ya + (3 * s2 - 4 * s + 1) * h * da +
          (-6 * s2 + 6 * s) * yb + (3 * s2 - 2 * s) * h * db) /
         h;
}
} // namespace

FarFieldSolution::Polar FarFieldSolution::polarEval(double r, double th,
                                                    int order) const {
  const double t = std::log(r);
  int k = static_cast<int>(std::floor((t - t0_) / h_));
  k = std::max(0, std::min(K_ - 1, k));
  const double s = (t - (t0_ + k * h_)) / h_;

  Polar out;
  for (int m = 0; m <= M_; ++m) {
    Cplx vm, dvm, vpm, dvpm;
    hermite(s, h_, v_[m][k], dv_[m][k], v_[m][k + 1], dv_[m][k + 1], vm, dvm);
    hermite(s, h_, vp_[m][k], dvp_[m][k], vp_[m][k + 1], dvp_[m][k + 1], vpm,
            dvpm);
    const Cplx vppm = dvpm / r;
    const Cplx ph(std::cos(m * th), std::sin(m * th));
    const double w = (m == 0) ? 1.0 : 2.0;
    out.u += w * (vm * ph).real();
    if (order >= 1) {
      out.ur += w * (vpm * ph).real();
      out.ut += w * (Cplx(0, m) * vm * ph).real();
    }
    if (order >= 2) {
      out.urr += w * (vppm * ph).real();
      out.urt += w * (Cplx(0, m) * vpm * ph).real();
      out.utt += w * (-double(m) * double(m) * vm * ph).real();
    }
  }
  return out;
}

void FarFieldSolution::cartesian(double r, double th, int order, double &u,
                                 Eigen::Vector2d &g, Eigen::Matrix2d &H) const {
  g.setZero();
  H.setZero();
  if (r >= rin_) {
    Polar p = polarEval(r, th, order);
    u = p.u;
    const double c = std::cos(th), sn = std::sin(th);
    if (order >= 1) {
      g[0] = c * p.ur - sn / r * p.ut;
      g[1] = sn * p.ur + c / r * p.ut;
    }
    if (order >= 2) {
      H(0, 0) = c * c * p.urr - 2 * sn * c / r * p.urt +
                sn * sn / (r * r) * p.utt + sn * sn / r * p.ur +
                2 * sn * c / (r * r) * p.ut;
      H(1, 1) = sn * sn * p.urr + 2 * sn * c / r * p.urt +
                c * c / (r * r) * p.utt + c * c / r * p.ur -
                2 * sn * c / (r * r) * p.ut;
      H(0, 1) = H(1, 0) = sn * c * p.urr + (c * c - sn * sn) / r * p.urt -
                          sn * c / (r * r) * p.utt - sn * c / r * p.ur -
                          (c * c - sn * sn) / (r * r) * p.ut;
    }
    return;
  }
  // harmonic continuation inside the inner radius: matches the boundary
  // values (not the normal derivative) and stays smooth at the origin
  const Cplx z(r * std::cos(th), r * std::sin(th));
  u = v_[0][0].real();
  for (int m = 1; m <= M_; ++m) {
    const Cplx cm = v_[m][0] / std::pow(rin_, m);
    const Cplx zm = (m == 0) ? Cplx(1, 0) : std::pow(z, m);
    u += 2.0 * (cm * zm).real();
    if (order >= 1) {
      Cplx dz = double(m) * ((m >= 1) ? std::pow(z, m - 1) : Cplx(0, 0));
      g[0] += 2.0 * (cm * dz).real();
      g[1] += 2.0 * (cm * Cplx(0, 1) * dz).real();
    }
    if (order >= 2 && m >= 2) {
      Cplx d2z = double(m) * double(m - 1) * std::pow(z, m - 2);
      H(0, 0) += 2.0 * (cm * d2z).real();
      H(0, 1) += 2.0 * (cm * Cplx(0, 1) * d2z).real();
      H(1, 1) += 2.0 * (cm * -1.0 * d2z).real();
    }
  }
  H(1, 0) = H(0, 1);
}

double FarFieldSolution::deriv(const Eigen::VectorXd &x,
                               const std::vector<int> &orders) const {
  const int n = total_order(orders);
  if (n > 2)
    throw UnsupportedOrder("far-field solution exposes derivatives <= 2");
  const Eigen::Vector2d y = T_ * Eigen::Vector2d(x[0], x[1]);
  const double r = y.norm(), th = std::atan2(y[1], y[0]);
  double u;
  Eigen::Vector2d gy;
  Eigen::Matrix2d Hy;
  cartesian(r, th, n, u, gy, Hy);
  if (n == 0)
    return u;
  if (n == 1) {
    int a = orders[0] == 1 ? 0 : 1;
    return T_.col(a).dot(gy); // d/dx_a = sum_b T_{b a} d/dy_b
  }
  int a = -1, b = -1;
  for (int i = 0; i < 2; ++i)
    for (int rep = 0; rep < orders[i]; ++rep)
      (a < 0 ? a : b) = i;
  return T_.col(a).dot(Hy * T_.col(b));
}

} // namespace

ScalarFieldPtr solve_far_field(const SitePotential &V, const RhsFunction &f,
                               double R0, const FarFieldOptions &opts) {
  return std::make_shared<FarFieldSolution>(V, f, R0, opts);
}

double PredictorStack::value(const Eigen::VectorXd &x) const {
  double s = 0;
  for (const auto &fld : fields)
    s += (*fld)(x);
  return s;
}

double PredictorStack::deriv(const Eigen::VectorXd &x,
                             const std::vector<int> &orders) const {
  double s = 0;
  for (const auto &fld : fields)
    s += fld->deriv(x, orders);
  return s;
}

bool PredictorStack::trivial() const {
  for (const auto &fld : fields)
    if (!std::dynamic_pointer_cast<const ZeroField>(fld))
      return false;
  return true;
}

PredictorStack assemble_predictor(SitePotentialPtr V, int p,
                                  const ScrewSpec *screw, double R0,
                                  const FarFieldOptions &opts) {
  if (p < 0 || p > 2)
    throw InvalidOrder("predictor assembly supports p <= 2");
  PredictorStack st;
  st.model = V;
  st.order = p;
  st.innerRadius = R0;
  const int d = V->lattice().d();
  if (!screw) {
    // point defects: u_i = 0 for i <= d >= p (pure multipole expansion)
    for (int i = 0; i <= p; ++i)
      st.fields.push_back(zero_field(d));
    return st;
  }
  st.isScrew = true;
  st.spec = *screw;
  st.fields.push_back(u_cle_screw(*V, *screw));
  if (p >= 1) {
    const bool structuralZero =
        d == 3 || cauchy_born(*V).W3.maxAbs() < 1e-13;
    if (structuralZero) {
      st.fields.push_back(zero_field(d));
    } else {
      auto S1 = build_rhs_S(*V, 1, {st.fields[0]});
      st.fields.push_back(solve_far_field(*V, S1, R0, opts));
    }
  }
  if (p >= 2) {
    auto S2 = build_rhs_S(*V, 2, {st.fields[0], st.fields[1]});
    st.fields.push_back(solve_far_field(*V, S2, R0, opts));
  }
  return st;
}

} // namespace latfield
