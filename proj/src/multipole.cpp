#include "latfield/multipole.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace latfield {

namespace {

//! Symmetric outer product of the tuple (vs[m] repeated per multiset entry),
//! order 0 handled as the scalar 1 in a 0-tensor.
SymTensor<double> multiset_product(const std::vector<Eigen::VectorXd> &vecs,
                                   int dim) {
  if (vecs.empty()) {
    SymTensor<double> t(dim, 0);
    t.coeff(0) = 1.0;
    return t;
  }
  return sym_tensor_product(vecs);
}

double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i)
    f *= i;
  return f;
}

//! j-th moment of D_{rho_1}...D_{rho_i} delta_0 as a tensor in l = A n:
//! sum over support points -sum_{subset} rho with inclusion-exclusion signs.
SymTensor<double> delta_difference_moment(const std::vector<Eigen::VectorXd> &pos,
                                          int d, int j) {
  const int i = static_cast<int>(pos.size());
  SymTensor<double> out(d, j);
  for (unsigned mask = 0; mask < (1u << i); ++mask) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
    int bits = 0;
    for (int m = 0; m < i; ++m)
      if (mask & (1u << m)) {
        s -= pos[m];
        ++bits;
      }
    double sign = ((i - bits) % 2 == 0) ? 1.0 : -1.0;
    if (j == 0) {
      out.coeff(0) += sign;
    } else {
      out += sym_outer_power(s, j) * sign;
    }
  }
  return out;
}

} // namespace

std::vector<MomentTensor>
compute_moments(const Lattice &lat,
                const std::function<Eigen::VectorXd(const Site &)> &f,
                int jmax, double radius, double tailTol) {
  if (jmax < 0 || radius <= 2.0)
    throw ConfigInvalid("compute_moments: jmax >= 0 and radius > 2 required");
  const int d = lat.d(), N = lat.ncomp();
  WindowPtr win = ball_window(lat, radius);

  const int T = 4; // dyadic annuli radius/8 < ... <= radius
  // per annulus, per moment order: tensor contribution and absolute mass
  std::vector<std::vector<std::vector<SymTensor<double>>>> contrib(
      T, std::vector<std::vector<SymTensor<double>>>(jmax + 1));
  std::vector<std::vector<double>> mass(T, std::vector<double>(jmax + 1, 0.0));
  for (int t = 0; t < T; ++t)
    for (int j = 0; j <= jmax; ++j)
      contrib[t][j].assign(N, SymTensor<double>(d, j));

  for (int i = 0; i < win->size(); ++i) {
    const Site &n = win->site(i);
    Eigen::VectorXd x = lat.position(n);
    double r = x.norm();
    int t = T - 1;
    while (t > 0 && r <= radius / double(1 << (T - t)))
      --t;
    Eigen::VectorXd v = f(n);
    if (v.size() != N)
      throw DimensionMismatch("compute_moments: f component count");
    double vnorm = v.cwiseAbs().maxCoeff();
    if (vnorm == 0.0)
      continue;
    SymTensor<double> pw(d, 0);
    pw.coeff(0) = 1.0;
    for (int j = 0; j <= jmax; ++j) {
      for (int k = 0; k < N; ++k)
        contrib[t][j][k] += pw * v[k];
      mass[t][j] += vnorm * pw.maxAbs();
      if (j < jmax)
        pw = sym_outer_power(x, j + 1);
    }
  }

  std::vector<MomentTensor> out;
  for (int j = 0; j <= jmax; ++j) {
    MomentTensor m;
    m.order = j;
    m.radius = radius;
    m.value.assign(N, SymTensor<double>(d, j));
    double total = 0;
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < N; ++k)
        m.value[k] += contrib[t][j][k];
      total = std::max(total, mass[t][j]);
    }
    const double floor = 1e-13 * std::max(1.0, total);
    double cPrev = mass[T - 2][j], cLast = mass[T - 1][j];
    if (cLast > floor) {
      double ratio = cPrev > floor ? cLast / cPrev : 0.0;
      if (ratio >= 0.9)
        throw NonSummableTail("moment annulus contributions do not decay");
      if (ratio > 0.0) {
        // geometric (Aitken) tail, added per component
        double fac = ratio / (1.0 - ratio);
        for (int k = 0; k < N; ++k)
          m.value[k] += contrib[T - 1][j][k] * fac;
        m.tailEstimate = cLast * fac;
      } else {
        m.tailEstimate = cLast;
      }
      if (m.tailEstimate > tailTol * std::max(1.0, total))
        throw NonSummableTail("moment tail estimate exceeds tolerance");
    }
    out.push_back(std::move(m));
  }
  return out;
}

MultipoleCoeffs fit_coefficients(const std::vector<MomentTensor> &moments,
                                 const Lattice &lat, std::vector<Site> basis) {
  const int d = lat.d(), N = lat.ncomp();
  if (moments.empty())
    throw ConfigInvalid("fit_coefficients: no moments");
  std::vector<const MomentTensor *> byOrder(moments.size(), nullptr);
  for (const auto &m : moments) {
    if (m.order < 0 || m.order >= int(moments.size()) || byOrder[m.order])
      throw ConfigInvalid("fit_coefficients: orders must be 0..p-1");
    byOrder[m.order] = &m;
  }
  const int p = static_cast<int>(moments.size());

  if (basis.empty())
    for (int i = 0; i < d; ++i) {
      Site e = Site::Zero(d);
      e[i] = 1;
      basis.push_back(e);
    }
  if (static_cast<int>(basis.size()) != d)
    throw BasisDegenerate("multipole basis must have d directions");
  Eigen::MatrixXd B(d, d);
  for (int i = 0; i < d; ++i)
    B.col(i) = basis[i].cast<double>();
  if (std::abs(std::abs(B.determinant()) - 1.0) > 1e-12)
    throw BasisDegenerate("multipole basis does not span the lattice over Z");

  MultipoleCoeffs out;
  out.basis = basis;
  for (const auto &s : basis)
    out.basisPos.push_back(lat.position(s));

  // The system is block triangular: lower-order difference deltas have
  // nonzero higher moments, so solve order by order and subtract the
  // already-fitted contributions from each target.
  for (int j = 0; j < p; ++j) {
    const auto &mj = *byOrder[j];
    if (static_cast<int>(mj.value.size()) != N ||
        (j > 0 && mj.value[0].dim() != d))
      throw DimensionMismatch("fit_coefficients: moment shape");
    std::vector<SymTensor<double>> target;
    for (int k = 0; k < N; ++k)
      target.push_back(mj.value[k]);
    for (int i = 0; i < j; ++i) {
      const SymIndexSet &ids = out.coeff[i][0].indexSet();
      for (int c = 0; c < ids.size(); ++c) {
        std::vector<Eigen::VectorXd> pos;
        for (int slot : ids.index(c))
          pos.push_back(out.basisPos[slot]);
        SymTensor<double> dm = delta_difference_moment(pos, d, j);
        for (int k = 0; k < N; ++k)
          target[k] +=
              dm * (-ids.multiplicity(c) * out.coeff[i][k].coeff(c));
      }
    }

    SymIndexSet cols(d, j); // multisets over basis indices
    const int nsym = cols.size();
    Eigen::MatrixXd M(nsym, nsym);
    for (int c = 0; c < nsym; ++c) {
      std::vector<Eigen::VectorXd> vecs;
      for (int slot : cols.index(c))
        vecs.push_back(out.basisPos[slot]);
      M.col(c) = cols.multiplicity(c) * multiset_product(vecs, d).components();
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
    if (!lu.isInvertible())
      throw BasisDegenerate("moment-to-coefficient system is singular");
    const double scale = (j % 2 == 0 ? 1.0 : -1.0) * factorial(j);
    std::vector<SymTensor<double>> bj;
    for (int k = 0; k < N; ++k) {
      SymTensor<double> b(d, j);
      b.components() = lu.solve(target[k].components() / scale);
      bj.push_back(std::move(b));
    }
    out.coeff.push_back(std::move(bj));
  }
  return out;
}

Eigen::VectorXd eval_discrete_multipole(const MultipoleCoeffs &b,
                                        const LatticeGreens &G, const Site &l) {
  const int N = G.lattice().ncomp();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(N);
  for (int i = 0; i < b.order(); ++i) {
    const SymIndexSet &ids = b.coeff[i][0].indexSet();
    for (int c = 0; c < ids.size(); ++c) {
      std::vector<Site> dirs;
      for (int slot : ids.index(c))
        dirs.push_back(b.basis[slot]);
      Eigen::MatrixXd D = G.difference(dirs, l);
      for (int k = 0; k < N; ++k)
        u += ids.multiplicity(c) * b.coeff[i][k].coeff(c) * D.col(k);
    }
  }
  return u;
}

namespace {

//! Enumerate exponent vectors (q_1..q_i), q_j >= 1, sum <= cap.
void exponent_vectors(int i, int cap, std::vector<int> &q,
                      const std::function<void(const std::vector<int> &, int)> &fn,
                      int pos = 0, int sum = 0) {
  if (pos == i) {
    fn(q, sum);
    return;
  }
  for (int v = 1; sum + v + (i - pos - 1) <= cap; ++v) {
    q[pos] = v;
    exponent_vectors(i, cap, q, fn, pos + 1, sum + v);
  }
}

} // namespace

ContinuumMultipole continuum_coefficients(const MultipoleCoeffs &b, int p) {
  if (p < 1)
    throw InvalidOrder("continuum_coefficients: p >= 1");
  const int d = b.basisPos.empty() ? 0 : int(b.basisPos[0].size());
  const int N = b.ncomp();
  const int nmax = (p - 1) / 2;
  ContinuumMultipole out;
  out.order = p;
  out.a.resize(p); // M = 0..p-1
  for (int M = 0; M < p; ++M) {
    out.a[M].resize(nmax + 1);
    for (int n = 0; n <= nmax; ++n)
      if (2 * n + M <= p - 1)
        out.a[M][n].assign(N, SymTensor<double>(d, M));
  }

  for (int i = 0; i < std::min(p, b.order()); ++i) {
    const SymIndexSet &ids = b.coeff[i][0].indexSet();
    for (int c = 0; c < ids.size(); ++c) {
      const auto &multi = ids.index(c);
      const double mult = ids.multiplicity(c);
      std::vector<int> q(i);
      exponent_vectors(i, p - 1, q, [&](const std::vector<int> &qv, int M) {
        double w = mult;
        std::vector<Eigen::VectorXd> vecs;
        for (int jj = 0; jj < i; ++jj) {
          w /= factorial(qv[jj]);
          for (int rep = 0; rep < qv[jj]; ++rep)
            vecs.push_back(b.basisPos[multi[jj]]);
        }
        SymTensor<double> t = multiset_product(vecs, d);
        for (int n = 0; n <= nmax; ++n) {
          if (2 * n + M > p - 1)
            continue;
          for (int k = 0; k < N; ++k)
            out.a[M][n][k] += t * (w * b.coeff[i][k].coeff(c));
        }
      });
    }
  }
  return out;
}

Eigen::VectorXd eval_continuum_multipole(const MultipoleCoeffs &b,
                                         const ContinuumKernels &kernels,
                                         const Eigen::VectorXd &x, int p) {
  ContinuumMultipole cm = continuum_coefficients(b, p);
  const int N = b.ncomp();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(N);
  for (int M = 0; M < p; ++M) {
    for (size_t n = 0; n < cm.a[M].size(); ++n) {
      if (cm.a[M][n].empty())
        continue;
      double amax = 0;
      for (int k = 0; k < N; ++k)
        amax = std::max(amax, cm.a[M][n][k].maxAbs());
      if (amax == 0.0)
        continue;
      KernelValue K;
      try {
        K = kernels.eval(static_cast<int>(n), x, M);
      } catch (const InvalidOrder &e) {
        throw KernelOrderMissing(e.what());
      }
      const SymIndexSet &ids = cm.a[M][n][0].indexSet();
      for (int c = 0; c < ids.size(); ++c)
        for (int k = 0; k < N; ++k)
          u += ids.multiplicity(c) * cm.a[M][n][k].coeff(c) * K.comp[c].col(k);
    }
  }
  return u;
}

ExpansionTable multipole_gap_table(const MultipoleCoeffs &b,
                                   const LatticeGreens &G,
                                   const ContinuumKernels &kernels, int p,
                                   int j, int samplesPerShell) {
  if (j < 0 || j > 1)
    throw InvalidOrder("multipole_gap_table: j <= 1");
  const Lattice &lat = G.lattice();
  const Window &win = G.window();
  double rmax = 0;
  for (int i = 0; i < win.size(); ++i)
    rmax = std::max(rmax, lat.radius(win.site(i)));
  // margin for the basis shifts of D_S^i and the j difference directions
  double lo = 4.0, hi = rmax - double(b.order()) - 2.0 * j - 1.0;
  if (hi / lo < 4.0)
    throw WindowTooSmall("window too small for a multipole gap table");

  const int nshells = 8;
  std::vector<std::vector<int>> byShell(nshells);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < win.size(); ++i) {
    double r = lat.radius(win.site(i));
    if (r < lo || r >= hi)
      continue;
    int s = static_cast<int>(nshells * (std::log(r) - llo) / (lhi - llo));
    if (s >= 0 && s < nshells)
      byShell[s].push_back(i);
  }
  std::mt19937 rng(9172);
  std::vector<std::vector<Site>> tuples;
  if (j == 0)
    tuples.push_back({});
  else
    for (const auto &rho : lat.stencil())
      tuples.push_back({rho});

  auto contGap = [&](const std::vector<Site> &dirs, const Site &n) {
    Eigen::VectorXd err(lat.ncomp());
    auto disc = [&](const Site &m) { return eval_discrete_multipole(b, G, m); };
    err = finite_difference(disc, dirs, n);
    const int jj = static_cast<int>(dirs.size());
    for (unsigned mask = 0; mask < (1u << jj); ++mask) {
      Site m = n;
      int bits = 0;
      for (int i2 = 0; i2 < jj; ++i2)
        if (mask & (1u << i2)) {
          m += dirs[i2];
          ++bits;
        }
      double sign = ((jj - bits) % 2 == 0) ? 1.0 : -1.0;
      err -= sign * eval_continuum_multipole(b, kernels, lat.position(m), p);
    }
    return err.cwiseAbs().maxCoeff();
  };

  std::vector<double> radii, values;
  for (auto &shell : byShell) {
    std::shuffle(shell.begin(), shell.end(), rng);
    int take = std::min<int>(samplesPerShell, static_cast<int>(shell.size()));
    for (int s = 0; s < take; ++s) {
      const Site &n = win.site(shell[s]);
      double best = 0;
      for (const auto &dirs : tuples)
        best = std::max(best, contGap(dirs, n));
      radii.push_back(lat.radius(n));
      values.push_back(best);
    }
  }
  ExpansionTable out;
  out.shells = shell_max(radii, values, lo, hi, nshells);
  if (out.shells.size() < 4)
    throw WindowTooSmall("fewer than 4 populated shells");
  out.fit = fit_slope(out.shells);
  return out;
}

} // namespace latfield
