#include "latfield/potentials.hpp"

#include <cmath>
#include <numbers>

namespace latfield {

double Form3::apply(const Eigen::VectorXd &x, const Eigen::VectorXd &y,
                    const Eigen::VectorXd &z) const {
  double s = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k)
        s += (*this)(i, j, k) * x[i] * y[j] * z[k];
  return s;
}

double Form3::maxAbs() const {
  double s = 0;
  for (double v : a)
    s = std::max(s, std::abs(v));
  return s;
}

double Form4::apply(const Eigen::VectorXd &x, const Eigen::VectorXd &y,
                    const Eigen::VectorXd &z, const Eigen::VectorXd &w) const {
  double s = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l)
          s += (*this)(i, j, k, l) * x[i] * y[j] * z[k] * w[l];
  return s;
}

double Form4::maxAbs() const {
  double s = 0;
  for (double v : a)
    s = std::max(s, std::abs(v));
  return s;
}

SitePotential::SitePotential(LatticePtr lat, std::string name)
    : lat_(std::move(lat)), name_(std::move(name)) {
  const auto &R = lat_->stencil();
  neg_.resize(R.size());
  for (size_t r = 0; r < R.size(); ++r) {
    neg_[r] = -1;
    for (size_t s = 0; s < R.size(); ++s)
      if (R[s] == -R[r]) {
        neg_[r] = static_cast<int>(s);
        break;
      }
  }
}

int SitePotential::negIndex(int rho) const { return neg_[rho]; }

const Eigen::MatrixXd &SitePotential::hess0() const {
  if (hess0_.size() == 0) {
    Eigen::MatrixXd zero =
        Eigen::MatrixXd::Zero(lat_->ncomp(), lat_->stencilSize());
    hess0_ = hess(zero);
  }
  return hess0_;
}

Eigen::MatrixXd SitePotential::hess0Block(int sigma, int rho) const {
  const int N = lat_->ncomp();
  return hess0().block(sigma * N, rho * N, N, N);
}

Eigen::MatrixXd SitePotential::hessBlocks(const Eigen::MatrixXd &g) const {
  if (!bondDiagonalHess())
    throw UnsupportedOrder("hessBlocks requires a bond-diagonal Hessian");
  const int N = lat_->ncomp(), R = lat_->stencilSize();
  Eigen::MatrixXd H = hess(g), out(N, N * R);
  for (int r = 0; r < R; ++r)
    out.middleCols(r * N, N) = H.block(r * N, r * N, N, N);
  return out;
}

Eigen::MatrixXd
SitePotential::hessBlocksMasked(const Eigen::MatrixXd &g,
                                const std::vector<bool> &alive) const {
  if (!bondDiagonalHess())
    throw UnsupportedOrder("hessBlocks requires a bond-diagonal Hessian");
  const int N = lat_->ncomp(), R = lat_->stencilSize();
  Eigen::MatrixXd H = hessMasked(g, alive), out(N, N * R);
  for (int r = 0; r < R; ++r)
    out.middleCols(r * N, N) = H.block(r * N, r * N, N, N);
  return out;
}

SiteEval eval_site(const SitePotential &V, const Eigen::MatrixXd &g,
                   int order) {
  if (order < 0 || order > 2)
    throw UnsupportedOrder("eval_site supports orders 0..2");
  SiteEval out;
  if (order == 0)
    out.value = V.value(g);
  else if (order == 1)
    out.grad = V.grad(g);
  else
    out.hess = V.hess(g);
  return out;
}

namespace {

//! Potentials of the form V(g) = sum over bonds of h_rho(g_rho); both
//! built-in models are of this kind, and masked (vacancy) evaluation is a
//! per-bond drop-out.
class BondSumPotential : public SitePotential {
public:
  using SitePotential::SitePotential;

  virtual double bondValue(int rho, const Eigen::VectorXd &g) const = 0;
  virtual Eigen::VectorXd bondGrad(int rho, const Eigen::VectorXd &g) const = 0;
  virtual Eigen::MatrixXd bondHess(int rho, const Eigen::VectorXd &g) const = 0;
  //! Third/fourth derivative of the bond energy at g = 0.
  virtual double bondD3(int rho, const Eigen::VectorXd &a,
                        const Eigen::VectorXd &b,
                        const Eigen::VectorXd &c) const = 0;
  virtual double bondD4(int rho, const Eigen::VectorXd &a,
                        const Eigen::VectorXd &b, const Eigen::VectorXd &c,
                        const Eigen::VectorXd &e) const = 0;

  double value(const Eigen::MatrixXd &g) const override {
    checkShape(g);
    double s = 0;
    for (int r = 0; r < lattice().stencilSize(); ++r)
      s += bondValue(r, g.col(r));
    return s;
  }

  Eigen::MatrixXd grad(const Eigen::MatrixXd &g) const override {
    checkShape(g);
    Eigen::MatrixXd out(g.rows(), g.cols());
    for (int r = 0; r < lattice().stencilSize(); ++r)
      out.col(r) = bondGrad(r, g.col(r));
    return out;
  }

  Eigen::MatrixXd hess(const Eigen::MatrixXd &g) const override {
    checkShape(g);
    const int N = lattice().ncomp(), R = lattice().stencilSize();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N * R, N * R);
    for (int r = 0; r < R; ++r)
      out.block(r * N, r * N, N, N) = bondHess(r, g.col(r));
    return out;
  }

  double valueMasked(const Eigen::MatrixXd &g,
                     const std::vector<bool> &alive) const override {
    checkShape(g);
    double s = 0;
    for (int r = 0; r < lattice().stencilSize(); ++r)
      if (alive[r])
        s += bondValue(r, g.col(r));
    return s;
  }

  Eigen::MatrixXd gradMasked(const Eigen::MatrixXd &g,
                             const std::vector<bool> &alive) const override {
    checkShape(g);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    for (int r = 0; r < lattice().stencilSize(); ++r)
      if (alive[r])
        out.col(r) = bondGrad(r, g.col(r));
    return out;
  }

  Eigen::MatrixXd hessMasked(const Eigen::MatrixXd &g,
                             const std::vector<bool> &alive) const override {
    checkShape(g);
    const int N = lattice().ncomp(), R = lattice().stencilSize();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N * R, N * R);
    for (int r = 0; r < R; ++r)
      if (alive[r])
        out.block(r * N, r * N, N, N) = bondHess(r, g.col(r));
    return out;
  }

  bool bondDiagonalHess() const override { return true; }

  Eigen::MatrixXd hessBlocks(const Eigen::MatrixXd &g) const override {
    checkShape(g);
    const int N = lattice().ncomp(), R = lattice().stencilSize();
    Eigen::MatrixXd out(N, N * R);
    for (int r = 0; r < R; ++r)
      out.middleCols(r * N, N) = bondHess(r, g.col(r));
    return out;
  }

  Eigen::MatrixXd
  hessBlocksMasked(const Eigen::MatrixXd &g,
                   const std::vector<bool> &alive) const override {
    checkShape(g);
    const int N = lattice().ncomp(), R = lattice().stencilSize();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, N * R);
    for (int r = 0; r < R; ++r)
      if (alive[r])
        out.middleCols(r * N, N) = bondHess(r, g.col(r));
    return out;
  }

  double d3_0(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
              const Eigen::MatrixXd &c) const override {
    double s = 0;
    for (int r = 0; r < lattice().stencilSize(); ++r)
      s += bondD3(r, a.col(r), b.col(r), c.col(r));
    return s;
  }

  double d4_0(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
              const Eigen::MatrixXd &c, const Eigen::MatrixXd &e) const override {
    double s = 0;
    for (int r = 0; r < lattice().stencilSize(); ++r)
      s += bondD4(r, a.col(r), b.col(r), c.col(r), e.col(r));
    return s;
  }

protected:
  void checkShape(const Eigen::MatrixXd &g) const {
    if (g.rows() != lattice().ncomp() || g.cols() != lattice().stencilSize())
      throw DimensionMismatch("stencil argument has wrong shape");
  }
};

constexpr double twopi = 2.0 * std::numbers::pi;

//! Scalar square-lattice model with V(g) = sum_rho psi(g_rho)/2.
class AntiplaneModel : public BondSumPotential {
public:
  //! psi(s), psi'(s), ... supplied as callables so the symmetry-breaking
  //! cubic variant shares the implementation.
  struct Psi {
    std::function<double(double)> f, d1, d2;
    double d3_0 = 0, d4_0 = 0;
  };

  AntiplaneModel(std::string name, Psi psi, int dim = 2)
      : BondSumPotential(hypercubicLattice(dim), std::move(name)),
        psi_(std::move(psi)) {}

  static LatticePtr hypercubicLattice(int d) {
    std::vector<Site> R;
    for (int a = 0; a < d; ++a)
      for (int s : {1, -1}) {
        Site v = Site::Zero(d);
        v[a] = s;
        R.push_back(v);
      }
    return make_lattice(Eigen::MatrixXd::Identity(d, d), R, 1);
  }

  double bondValue(int, const Eigen::VectorXd &g) const override {
    return 0.5 * psi_.f(g[0]);
  }
  Eigen::VectorXd bondGrad(int, const Eigen::VectorXd &g) const override {
    Eigen::VectorXd out(1);
    out[0] = 0.5 * psi_.d1(g[0]);
    return out;
  }
  Eigen::MatrixXd bondHess(int, const Eigen::VectorXd &g) const override {
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = 0.5 * psi_.d2(g[0]);
    return out;
  }
  double bondD3(int, const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                const Eigen::VectorXd &c) const override {
    return 0.5 * psi_.d3_0 * a[0] * b[0] * c[0];
  }
  double bondD4(int, const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                const Eigen::VectorXd &c, const Eigen::VectorXd &e) const override {
    return 0.5 * psi_.d4_0 * a[0] * b[0] * c[0] * e[0];
  }

private:
  Psi psi_;
};

//! Pair potential model: V(g) = 1/2 sum_rho phi(|pos(rho) + g_rho|) with
//! phi(r) = 1/2 (r-1)^2 + c3 (r-1)^3, equilibrium bond length 1.
class PairModel : public BondSumPotential {
public:
  PairModel(LatticePtr lat, std::string name, double c3)
      : BondSumPotential(std::move(lat), std::move(name)), c3_(c3) {
    const auto &R = lattice().stencil();
    bonds_.reserve(R.size());
    for (const auto &r : R) {
      Eigen::VectorXd b = lattice().position(r);
      if (std::abs(b.norm() - 1.0) > 1e-12)
        throw Error("pair model expects unit equilibrium bonds");
      bonds_.push_back(b);
    }
  }

  double phi(double r) const {
    double e = r - 1.0;
    return 0.5 * e * e + c3_ * e * e * e;
  }
  double dphi(double r) const {
    double e = r - 1.0;
    return e + 3.0 * c3_ * e * e;
  }
  double d2phi(double r) const { return 1.0 + 6.0 * c3_ * (r - 1.0); }
  double d3phi(double) const { return 6.0 * c3_; }

  double bondValue(int rho, const Eigen::VectorXd &g) const override {
    return 0.5 * phi((bonds_[rho] + g).norm());
  }

  Eigen::VectorXd bondGrad(int rho, const Eigen::VectorXd &g) const override {
    Eigen::VectorXd x = bonds_[rho] + g;
    double r = x.norm();
    return (0.5 * dphi(r) / r) * x;
  }

  Eigen::MatrixXd bondHess(int rho, const Eigen::VectorXd &g) const override {
    Eigen::VectorXd x = bonds_[rho] + g;
    double r = x.norm();
    Eigen::VectorXd u = x / r;
    int d = static_cast<int>(x.size());
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d, d) - u * u.transpose();
    return 0.5 * (d2phi(r) * u * u.transpose() + (dphi(r) / r) * P);
  }

  // Third derivative of r -> phi(|b+g|)/2 at g=0 with |b|=1, phi'(1)=0:
  //   D3[a,b,c] = phi''' u.a u.b u.c + phi'' sum_pairs (P a . b)(u . c)
  // where u is the unit bond and P the tangential projector.
  double bondD3(int rho, const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                const Eigen::VectorXd &c) const override {
    const Eigen::VectorXd &u = bonds_[rho];
    double ua = u.dot(a), ub = u.dot(b), uc = u.dot(c);
    double Pab = a.dot(b) - ua * ub;
    double Pac = a.dot(c) - ua * uc;
    double Pbc = b.dot(c) - ub * uc;
    double p2 = d2phi(1.0), p3 = d3phi(1.0);
    return 0.5 * (p3 * ua * ub * uc + p2 * (Pab * uc + Pac * ub + Pbc * ua));
  }

  // Fourth derivative at g=0 (phi'''' = 0 for the cubic phi):
  //   D4 = phi''' sum_{3 pairings} [ (P a.b)(u.c)(u.e) + ... 6 terms ]
  //      + phi'' [ (P..P pairings) - 2 * (P pair)(u)(u) terms ... ]
  // obtained by differentiating D3 once more in direction e.
  double bondD4(int rho, const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                const Eigen::VectorXd &c, const Eigen::VectorXd &e) const override {
    const Eigen::VectorXd &u = bonds_[rho];
    double ua = u.dot(a), ub = u.dot(b), uc = u.dot(c), ue = u.dot(e);
    auto P = [&](const Eigen::VectorXd &x, const Eigen::VectorXd &y) {
      return x.dot(y) - u.dot(x) * u.dot(y);
    };
    double p2 = d2phi(1.0), p3 = d3phi(1.0);
    double sumPuu = P(a, b) * uc * ue + P(a, c) * ub * ue + P(a, e) * ub * uc +
                    P(b, c) * ua * ue + P(b, e) * ua * uc + P(c, e) * ua * ub;
    double sumPP = P(a, b) * P(c, e) + P(a, c) * P(b, e) + P(a, e) * P(b, c);
    return 0.5 * (p3 * sumPuu + p2 * (sumPP - 2.0 * sumPuu));
  }

private:
  double c3_;
  std::vector<Eigen::VectorXd> bonds_;
};

LatticePtr triangularLattice() {
  Eigen::MatrixXd A(2, 2);
  A << 1.0, 0.5, 0.0, std::sqrt(3.0) / 2.0;
  std::vector<Site> R;
  for (auto [x, y] : {std::pair{1, 0}, {0, 1}, {1, -1}}) {
    Site v(2);
    v << x, y;
    R.push_back(v);
    R.push_back(-v);
  }
  return make_lattice(A, R, 2);
}

LatticePtr squareVectorLattice() {
  std::vector<Site> R;
  for (int a = 0; a < 2; ++a)
    for (int s : {1, -1}) {
      Site v = Site::Zero(2);
      v[a] = s;
      R.push_back(v);
    }
  return make_lattice(Eigen::MatrixXd::Identity(2, 2), R, 2);
}

} // namespace

CauchyBornTensors cauchy_born(const SitePotential &V) {
  const Lattice &lat = V.lattice();
  const int d = lat.d(), N = lat.ncomp(), R = lat.stencilSize();
  const double cv = lat.cvol();
  CauchyBornTensors out;
  out.d = d;
  out.N = N;
  out.W0 = V.value(Eigen::MatrixXd::Zero(N, R)) / cv;

  // stencil argument generated by the deformation-gradient basis slot (i,a):
  // g_rho = E_{ia} pos(rho)
  auto slotArg = [&](int flat) {
    int i = flat / d, a = flat % d;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N, R);
    for (int r = 0; r < R; ++r)
      g(i, r) = lat.position(lat.stencil()[r])[a];
    return g;
  };
  const int m = N * d;
  std::vector<Eigen::MatrixXd> E(m);
  for (int f = 0; f < m; ++f)
    E[f] = slotArg(f);

  out.C2.resize(m, m);
  const Eigen::MatrixXd &C = V.hess0();
  for (int f = 0; f < m; ++f) {
    Eigen::Map<const Eigen::VectorXd> ef(E[f].data(), N * R);
    for (int g = 0; g < m; ++g) {
      Eigen::Map<const Eigen::VectorXd> eg(E[g].data(), N * R);
      out.C2(f, g) = ef.dot(C * eg) / cv;
    }
  }

  out.W3 = Form3(m);
  for (int f = 0; f < m; ++f)
    for (int g = f; g < m; ++g)
      for (int h = g; h < m; ++h) {
        double v = V.d3_0(E[f], E[g], E[h]) / cv;
        int idx[3] = {f, g, h};
        std::sort(idx, idx + 3);
        do {
          out.W3(idx[0], idx[1], idx[2]) = v;
        } while (std::next_permutation(idx, idx + 3));
      }

  out.W4 = Form4(m);
  for (int f = 0; f < m; ++f)
    for (int g = f; g < m; ++g)
      for (int h = g; h < m; ++h)
        for (int l = h; l < m; ++l) {
          double v = V.d4_0(E[f], E[g], E[h], E[l]) / cv;
          int idx[4] = {f, g, h, l};
          std::sort(idx, idx + 4);
          do {
            out.W4(idx[0], idx[1], idx[2], idx[3]) = v;
          } while (std::next_permutation(idx, idx + 4));
        }

  return out;
}

Eigen::MatrixXd CauchyBornTensors::scalarC() const {
  if (N != 1)
    throw NonScalarOperator("scalarC requires N=1");
  return C2;
}

double CauchyBornTensors::legendreHadamardMin(int grid) const {
  double best = std::numeric_limits<double>::infinity();
  auto unitVecs = [&](int dim) {
    std::vector<Eigen::VectorXd> vs;
    if (dim == 1) {
      vs.push_back(Eigen::VectorXd::Ones(1));
    } else if (dim == 2) {
      for (int i = 0; i < grid; ++i) {
        double t = std::numbers::pi * i / grid;
        Eigen::VectorXd v(2);
        v << std::cos(t), std::sin(t);
        vs.push_back(v);
      }
    } else {
      for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
          double th = std::numbers::pi * i / grid;
          double ph = 2.0 * std::numbers::pi * j / grid;
          Eigen::VectorXd v(3);
          v << std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
              std::cos(th);
          vs.push_back(v);
        }
    }
    return vs;
  };
  for (const auto &mvec : unitVecs(N))
    for (const auto &nvec : unitVecs(d)) {
      Eigen::VectorXd mn(N * d);
      for (int i = 0; i < N; ++i)
        for (int a = 0; a < d; ++a)
          mn[i * d + a] = mvec[i] * nvec[a];
      best = std::min(best, mn.dot(C2 * mn));
    }
  return best;
}

SymmetryReport validate_symmetry(const SitePotential &V, int trials,
                                 unsigned seed) {
  const Lattice &lat = V.lattice();
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  SymmetryReport rep;
  for (int t = 0; t < trials; ++t) {
    Eigen::MatrixXd A(lat.ncomp(), lat.stencilSize());
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j)
        A(i, j) = dist(rng);
    Eigen::MatrixXd B(A.rows(), A.cols());
    for (int r = 0; r < lat.stencilSize(); ++r)
      B.col(r) = -A.col(V.negIndex(r));
    double v1 = V.value(A), v2 = V.value(B);
    double res = std::abs(v1 - v2) / std::max(1.0, std::abs(v1));
    rep.maxResidual = std::max(rep.maxResidual, res);
  }
  rep.pass = rep.maxResidual < 1e-10;
  return rep;
}

Eigen::MatrixXd multiplier_direct(const SitePotential &V,
                                  const Eigen::VectorXd &k) {
  const Lattice &lat = V.lattice();
  const int N = lat.ncomp(), R = lat.stencilSize();
  auto sin2 = [&](const Site &a) {
    double s = std::sin(0.5 * k.dot(lat.position(a)));
    return 2.0 * s * s;
  };
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  for (int r = 0; r < R; ++r)
    for (int s = 0; s < R; ++s) {
      const Site &rho = lat.stencil()[r], &sig = lat.stencil()[s];
      double w = sin2(rho) + sin2(sig) - sin2(Site(rho - sig));
      H += w * V.hess0Block(s, r);
    }
  return H;
}

double stability_constant(const SitePotential &V, int grid) {
  const Lattice &lat = V.lattice();
  const int d = lat.d();
  double c0 = std::numeric_limits<double>::infinity();
  std::vector<int> ctr(d, 0);
  // sample the Brillouin zone 2 pi A^{-T} [-1/2, 1/2)^d
  const Eigen::MatrixXd dual = twopi * lat.basis().transpose().inverse();
  Eigen::VectorXd t(d), k(d);
  while (true) {
    bool zero = true;
    for (int i = 0; i < d; ++i) {
      t[i] = double(ctr[i]) / grid - 0.5;
      if (std::abs(t[i]) > 1e-12)
        zero = false;
    }
    k = dual * t;
    if (!zero) {
      // count each +-rho pair once so that the NN Laplacian normalizes to 1
      double norm = 0;
      for (const auto &rho : lat.stencil()) {
        double s = std::sin(0.5 * k.dot(lat.position(rho)));
        norm += 2.0 * s * s;
      }
      if (norm > 1e-14) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            multiplier_direct(V, k));
        c0 = std::min(c0, es.eigenvalues().minCoeff() / norm);
      }
    }
    int i = 0;
    for (; i < d; ++i) {
      if (++ctr[i] < grid)
        break;
      ctr[i] = 0;
    }
    if (i == d)
      break;
  }
  return c0;
}

DefectModel::DefectModel(SitePotentialPtr host, double defectRadius,
                         std::vector<Site> removed, double misfit)
    : host_(std::move(host)), rdef_(defectRadius), removed_(std::move(removed)),
      misfit_(misfit) {
  for (const auto &n : removed_) {
    if (host_->lattice().radius(n) > rdef_)
      throw DefectOutsideRadius("removed site outside defect radius");
    removedKeys_.insert(site_key(n));
  }
}

std::vector<bool> DefectModel::aliveMask(const Site &n) const {
  const auto &R = host_->lattice().stencil();
  std::vector<bool> alive(R.size(), true);
  for (size_t r = 0; r < R.size(); ++r)
    if (removedKeys_.count(site_key(Site(n + R[r]))))
      alive[r] = false;
  return alive;
}

bool DefectModel::hasFullStencil(const Site &n) const {
  if (removedKeys_.empty())
    return true;
  const auto &R = host_->lattice().stencil();
  for (const auto &rho : R)
    if (removedKeys_.count(site_key(Site(n + rho))))
      return false;
  return true;
}

Eigen::MatrixXd DefectModel::strainOffset(const Site &n) const {
  const Lattice &lat = host_->lattice();
  Eigen::MatrixXd off = Eigen::MatrixXd::Zero(lat.ncomp(), lat.stencilSize());
  if (misfit_ == 0.0 || lat.ncomp() != lat.d() || hasFullStencil(n))
    return off;
  const auto &R = lat.stencil();
  for (size_t r = 0; r < R.size(); ++r)
    if (!removedKeys_.count(site_key(Site(n + R[r]))))
      off.col(static_cast<int>(r)) = misfit_ * lat.position(R[r]);
  return off;
}

DefectModelPtr make_defect_model(SitePotentialPtr host,
                                 const DefectSpec &spec) {
  return std::make_shared<DefectModel>(host, spec.defectRadius, spec.removed,
                                       spec.misfit);
}

SitePotentialPtr make_model(const std::string &name,
                            const std::map<std::string, double> &params) {
  auto get = [&](const std::string &key, double dflt) {
    auto it = params.find(key);
    return it == params.end() ? dflt : it->second;
  };
  if (name == "antiplane-sine") {
    AntiplaneModel::Psi psi;
    psi.f = [](double s) { return (1.0 - std::cos(twopi * s)) / (twopi * twopi); };
    psi.d1 = [](double s) { return std::sin(twopi * s) / twopi; };
    psi.d2 = [](double s) { return std::cos(twopi * s); };
    psi.d3_0 = 0.0;
    psi.d4_0 = -twopi * twopi;
    return std::make_shared<AntiplaneModel>("antiplane-sine", std::move(psi));
  }
  if (name == "antiplane-cubic") {
    // symmetry-breaking variant used to exercise validate_symmetry
    AntiplaneModel::Psi psi;
    psi.f = [](double s) { return s * s / 2.0 + s * s * s / 3.0; };
    psi.d1 = [](double s) { return s + s * s; };
    psi.d2 = [](double s) { return 1.0 + 2.0 * s; };
    psi.d3_0 = 2.0;
    psi.d4_0 = 0.0;
    return std::make_shared<AntiplaneModel>("antiplane-cubic", std::move(psi));
  }
  if (name == "cubic-sine") {
    AntiplaneModel::Psi psi;
    psi.f = [](double s) { return (1.0 - std::cos(twopi * s)) / (twopi * twopi); };
    psi.d1 = [](double s) { return std::sin(twopi * s) / twopi; };
    psi.d2 = [](double s) { return std::cos(twopi * s); };
    psi.d3_0 = 0.0;
    psi.d4_0 = -twopi * twopi;
    return std::make_shared<AntiplaneModel>("cubic-sine", std::move(psi), 3);
  }
  if (name == "triangular-pair")
    return std::make_shared<PairModel>(triangularLattice(), "triangular-pair",
                                       get("c3", -0.3));
  if (name == "square-pair")
    return std::make_shared<PairModel>(squareVectorLattice(), "square-pair",
                                       get("c3", -0.3));
  throw ConfigInvalid("unknown model: " + name);
}

std::vector<std::string> model_names() {
  return {"antiplane-sine", "antiplane-cubic", "cubic-sine",
          "triangular-pair", "square-pair"};
}

Eigen::VectorXd
apply_H(const SitePotential &V,
        const std::function<Eigen::VectorXd(const Site &)> &u, const Site &l) {
  const Lattice &lat = V.lattice();
  const auto &R = lat.stencil();
  const int N = lat.ncomp(), Rn = lat.stencilSize();
  // bond flux at a site: F_{. rho}(m) = sum_sigma C_{rho sigma} D_sigma u(m)
  auto flux = [&](const Site &m) {
    Eigen::MatrixXd Du(N, Rn);
    Eigen::VectorXd um = u(m);
    for (int s = 0; s < Rn; ++s)
      Du.col(s) = u(Site(m + R[s])) - um;
    Eigen::MatrixXd F(N, Rn);
    for (int r = 0; r < Rn; ++r) {
      F.col(r).setZero();
      for (int s = 0; s < Rn; ++s)
        F.col(r) += V.hess0Block(r, s) * Du.col(s);
    }
    return F;
  };
  Eigen::MatrixXd Fl = flux(l);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(N);
  for (int r = 0; r < Rn; ++r)
    out -= Fl.col(r) - flux(Site(l - R[r])).col(r);
  return out;
}

Eigen::VectorXd
apply_dE(const SitePotential &V,
         const std::function<Eigen::VectorXd(const Site &)> &u, const Site &l) {
  const Lattice &lat = V.lattice();
  const auto &R = lat.stencil();
  const int N = lat.ncomp(), Rn = lat.stencilSize();
  auto gradAt = [&](const Site &m) {
    Eigen::MatrixXd Du(N, Rn);
    Eigen::VectorXd um = u(m);
    for (int s = 0; s < Rn; ++s)
      Du.col(s) = u(Site(m + R[s])) - um;
    return V.grad(Du);
  };
  Eigen::MatrixXd Gl = gradAt(l);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(N);
  for (int r = 0; r < Rn; ++r)
    out -= Gl.col(r) - gradAt(Site(l - R[r])).col(r);
  return out;
}

} // namespace latfield
