#include "latfield/greens.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace latfield {

namespace {

bool isPow2(int L) { return L > 0 && (L & (L - 1)) == 0; }

//! g_L(n) - g_L(0) for all window sites from an L x L periodic spectral
//! inversion; component (i,j) grids are processed one at a time to bound
//! memory at large L.
std::vector<Eigen::MatrixXd> supercell_diff(SitePotentialPtr V,
                                            const Window &win, int L) {
  const Lattice &lat = V->lattice();
  const int N = lat.ncomp();
  // sin^2(pi t / L) lookup over the integer phases t = m . tau mod L
  std::vector<double> s2(L);
  for (int t = 0; t < L; ++t) {
    double s = std::sin(M_PI * t / L);
    s2[t] = 4.0 * s * s;
  }

  MultiplierSeries ms(V);
  const std::vector<Site> &taus = ms.diffSet();
  const int T = static_cast<int>(taus.size());
  std::vector<Eigen::MatrixXd> Ablocks;
  for (int t = 0; t < T; ++t)
    Ablocks.push_back(ms.coeffA(t));

  Eigen::MatrixXd H(N, N);
  auto hinvAt = [&](int m1, int m2, Eigen::MatrixXd &out) {
    H.setZero();
    for (int t = 0; t < T; ++t) {
      int ph = (m1 * taus[t][0] + m2 * taus[t][1]) % L;
      if (ph < 0)
        ph += L;
      H += s2[ph] * Ablocks[t];
    }
    if (N == 1)
      out(0, 0) = 1.0 / H(0, 0);
    else
      out = H.inverse();
  };

  // the multiplier blocks are symmetric for every registry model, making
  // Hhat^{-1} (and hence the Green's matrix) symmetric; skip mirrored pairs
  bool sym = true;
  for (const auto &A : Ablocks)
    sym = sym && (A - A.transpose()).cwiseAbs().maxCoeff() == 0.0;

  std::vector<Eigen::MatrixXd> diff(win.size(),
                                    Eigen::MatrixXd::Zero(N, N));
  Eigen::FFT<double> fft;

  for (int ci = 0; ci < N; ++ci)
    for (int cj = 0; cj < N; ++cj) {
      if (sym && cj < ci) {
        for (int i = 0; i < win.size(); ++i)
          diff[i](ci, cj) = diff[i](cj, ci);
        continue;
      }
      Eigen::MatrixXcd grid(L, L);
      Eigen::MatrixXd hinv(N, N);
      for (int m2 = 0; m2 < L; ++m2)
        for (int m1 = 0; m1 < L; ++m1) {
          if (m1 == 0 && m2 == 0) {
            grid(0, 0) = 0.0;
            continue;
          }
          hinvAt(m1, m2, hinv);
          grid(m1, m2) = hinv(ci, cj);
        }
      // 2D inverse FFT (e^{+2 pi i m.n / L}, total scale 1/L^2), done as
      // two column passes around an in-place transpose: row-wise FFTs on a
      // column-major grid of this size would thrash the cache
      Eigen::VectorXcd tmp(L), res(L);
      for (int c = 0; c < L; ++c) {
        tmp = grid.col(c);
        fft.inv(res, tmp);
        grid.col(c) = res;
      }
      grid.transposeInPlace();
      for (int c = 0; c < L; ++c) {
        tmp = grid.col(c);
        fft.inv(res, tmp);
        grid.col(c) = res;
      }
      // grid now holds the transform transposed: index as (n2, n1)
      double g0 = grid(0, 0).real();
      for (int i = 0; i < win.size(); ++i) {
        const Site &n = win.site(i);
        int a = ((n[0] % L) + L) % L, b = ((n[1] % L) + L) % L;
        diff[i](ci, cj) = grid(b, a).real() - g0;
      }
    }
  return diff;
}

std::string cache_path(const std::string &dir, const SitePotential &V,
                       double radius, int L) {
  std::ostringstream os;
  os << dir << "/gf_" << V.name() << "_r" << radius << "_L" << L << ".dat";
  return os.str();
}

std::string resolve_cache_dir(const std::string &cacheDir) {
  if (!cacheDir.empty())
    return cacheDir;
  const char *env = std::getenv("LATFIELD_CACHE");
  return env ? std::string(env) : std::string();
}

} // namespace

LatticeGreens::LatticeGreens(SitePotentialPtr V, WindowPtr win,
                             std::vector<Eigen::MatrixXd> values, int L,
                             double richardsonGap, double calibrationResidual)
    : V_(std::move(V)), win_(std::move(win)), values_(std::move(values)),
      L_(L), gap_(richardsonGap), calib_(calibrationResidual) {}

Eigen::MatrixXd LatticeGreens::difference(const std::vector<Site> &dirs,
                                          const Site &l) const {
  const int j = static_cast<int>(dirs.size());
  const int N = lattice().ncomp();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(N, N);
  for (unsigned mask = 0; mask < (1u << j); ++mask) {
    Site n = l;
    int bits = 0;
    for (int i = 0; i < j; ++i)
      if (mask & (1u << i)) {
        n += dirs[i];
        ++bits;
      }
    double sign = ((j - bits) % 2 == 0) ? 1.0 : -1.0;
    acc += sign * value(n);
  }
  return acc;
}

LatticeGreens compute_lattice_green(SitePotentialPtr V, double window_radius,
                                    int L, const std::string &cacheDir) {
  const Lattice &lat = V->lattice();
  if (lat.d() != 2)
    throw AnisotropyUnsupported("lattice Green's function: d = 2 only");
  if (!isPow2(L))
    throw SupercellTooSmall("L must be a power of two");
  if (L < 8 * window_radius)
    throw SupercellTooSmall("need L >= 8 * window_radius");

  const std::string dir = resolve_cache_dir(cacheDir);
  const int N = lat.ncomp();
  if (!dir.empty()) {
    std::ifstream in(cache_path(dir, *V, window_radius, L));
    if (in) {
      std::string tag;
      int Lf = 0, Nf = 0;
      double rf = 0, gap = 0, calib = 0;
      std::size_t count = 0;
      in >> tag >> Lf >> rf >> Nf >> gap >> calib >> count;
      if (tag == "latfield-gf-v1" && Lf == L && Nf == N) {
        std::vector<Site> sites(count, Site(2));
        std::vector<Eigen::MatrixXd> vals(count, Eigen::MatrixXd(N, N));
        bool ok = true;
        for (std::size_t i = 0; i < count && ok; ++i) {
          in >> sites[i][0] >> sites[i][1];
          for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b)
              in >> vals[i](a, b);
          ok = static_cast<bool>(in);
        }
        if (ok)
          return LatticeGreens(V, std::make_shared<Window>(std::move(sites)),
                               std::move(vals), L, gap, calib);
      }
    }
  }

  if (stability_constant(*V, 16) <= 0)
    throw UnstableModel(V->name());

  WindowPtr win = ball_window(lat, window_radius);
  std::vector<Eigen::MatrixXd> d1 = supercell_diff(V, *win, L);
  std::vector<Eigen::MatrixXd> d2 = supercell_diff(V, *win, 2 * L);

  double gap = 0;
  std::vector<Eigen::MatrixXd> vals(win->size());
  for (int i = 0; i < win->size(); ++i) {
    gap = std::max(gap, (d2[i] - d1[i]).cwiseAbs().maxCoeff());
    vals[i] = (4.0 * d2[i] - d1[i]) / 3.0;
  }
  if (gap > 0.05)
    throw SupercellTooSmall("Richardson levels disagree grossly");

  // calibrate the additive constant against G0 + G1 on the outer third
  ContinuumKernels ker(V);
  std::vector<int> outer;
  for (int i = 0; i < win->size(); ++i)
    if (lat.radius(win->site(i)) >= (2.0 / 3.0) * window_radius)
      outer.push_back(i);
  int stride = std::max<std::size_t>(1, outer.size() / 160);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N, N);
  std::vector<std::pair<int, Eigen::MatrixXd>> targets;
  for (std::size_t s = 0; s < outer.size(); s += stride) {
    int i = outer[s];
    Eigen::VectorXd x = lat.position(win->site(i));
    Eigen::MatrixXd t =
        ker.eval(0, x, 0).comp[0] + ker.eval(1, x, 0).comp[0];
    targets.emplace_back(i, t);
    K += t - vals[i];
  }
  K /= double(targets.size());
  double resid = 0;
  for (auto &[i, t] : targets)
    resid += (vals[i] + K - t).squaredNorm();
  resid = std::sqrt(resid / targets.size());
  for (auto &v : vals)
    v += K;

  LatticeGreens G(V, win, std::move(vals), L, gap, resid);

  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    std::ofstream out(cache_path(dir, *V, window_radius, L));
    out.precision(17);
    out << "latfield-gf-v1 " << L << " " << window_radius << " " << N << " "
        << gap << " " << resid << " " << win->size() << "\n";
    for (int i = 0; i < win->size(); ++i) {
      const Site &n = win->site(i);
      out << n[0] << " " << n[1];
      const Eigen::MatrixXd &v = G.valueAt(i);
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b)
          out << " " << v(a, b);
      out << "\n";
    }
  }
  return G;
}

Eigen::MatrixXd greens_oracle(SitePotentialPtr V, const Site &l,
                              int gridNodes, int sigmaNodes, int radialNodes) {
  const Lattice &lat = V->lattice();
  if (lat.d() != 2)
    throw AnisotropyUnsupported("greens_oracle: d = 2 only");
  const int N = lat.ncomp();
  MultiplierSeries ms(V);
  const Eigen::VectorXd x = lat.position(l);
  const double eps = 1.5; // cutoff radius, inside the Brillouin zone

  // smooth radial cutoff: 1 on [0, eps/2], 0 on [eps, inf)
  auto bump = [](double t) { return t > 0 ? std::exp(-1.0 / t) : 0.0; };
  auto eta = [&](double r) {
    double a = bump(eps - r), b = bump(r - eps / 2.0);
    return a / (a + b);
  };

  // outer part: smooth periodic integrand, uniform grid over the cell
  const Eigen::MatrixXd dual = 2.0 * M_PI * lat.basis().transpose().inverse();
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(N, N);
  for (int m1 = 0; m1 < gridNodes; ++m1)
    for (int m2 = 0; m2 < gridNodes; ++m2) {
      Eigen::VectorXd t(2);
      t << (m1 + 0.5) / gridNodes - 0.5, (m2 + 0.5) / gridNodes - 0.5;
      Eigen::VectorXd k = dual * t;
      double w = 1.0 - eta(k.norm());
      if (w == 0.0)
        continue;
      Eigen::MatrixXd Hi = ms.multiplier(k).inverse();
      outer += (w * std::cos(k.dot(x))) * Hi; // sin part cancels by symmetry
    }
  outer /= double(gridNodes) * gridNodes;

  // inner part in polar coordinates with the e^{-r}/r renormalization
  Eigen::MatrixXd inner = Eigen::MatrixXd::Zero(N, N);
  Eigen::MatrixXd a2sum = Eigen::MatrixXd::Zero(N, N);
  for (int s = 0; s < sigmaNodes; ++s) {
    double th = 2.0 * M_PI * s / sigmaNodes;
    Eigen::VectorXd sigma(2);
    sigma << std::cos(th), std::sin(th);
    Eigen::MatrixXd A2 = ms.inverseSeriesTerm(-1, sigma);
    a2sum += A2;
    double phase0 = sigma.dot(x);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(N, N);
    for (int q = 0; q < radialNodes; ++q) {
      double r = eps * (q + 0.5) / radialNodes;
      Eigen::MatrixXd Hi = ms.multiplier(r * sigma).inverse();
      acc += r * std::cos(r * phase0) * eta(r) * Hi -
             (std::exp(-r) / r) * A2;
    }
    inner += acc * (eps / radialNodes);
  }
  const double dth = 2.0 * M_PI / sigmaNodes;
  inner *= dth;
  a2sum *= dth;
  // E1(eps) = -Ei(-eps)
  double e1 = -std::expint(-eps);
  Eigen::MatrixXd bz = inner - e1 * a2sum;

  double scale = lat.cvol() / ((2.0 * M_PI) * (2.0 * M_PI));
  return outer + scale * bz;
}

SlopeFit green_decay_report(const LatticeGreens &G, int j) {
  const Lattice &lat = G.lattice();
  const Window &win = G.window();
  double rmax = 0;
  for (int i = 0; i < win.size(); ++i)
    rmax = std::max(rmax, lat.radius(win.site(i)));

  std::vector<double> radii, values;
  const auto &R = lat.stencil();
  for (int i = 0; i < win.size(); ++i) {
    const Site &n = win.site(i);
    double r = lat.radius(n);
    if (r < 2.0 || r > rmax - 2.0 * j - 1.0)
      continue;
    double v = 0;
    if (j == 0) {
      v = (G.value(n) - G.value(Site(Site::Zero(2)))).cwiseAbs().maxCoeff();
    } else if (j == 1) {
      for (const auto &rho : R)
        v = std::max(v, G.difference({rho}, n).cwiseAbs().maxCoeff());
    } else if (j == 2) {
      for (const auto &rho : R)
        for (const auto &sig : R)
          v = std::max(v, G.difference({rho, sig}, n).cwiseAbs().maxCoeff());
    } else {
      throw InvalidOrder("green_decay_report: j <= 2");
    }
    radii.push_back(r);
    values.push_back(v);
  }
  double lo = 4.0, hi = rmax - 2.0 * j - 1.0;
  if (hi / lo < 4.0)
    throw WindowTooSmall("not enough shells for a decay fit");
  auto shells = shell_max(radii, values, lo, hi, 8);
  if (shells.size() < 4)
    throw WindowTooSmall("fewer than 4 populated shells");
  return j == 0 ? fit_log_growth(shells) : fit_slope(shells);
}

ExpansionTable expansion_error_table(const LatticeGreens &G,
                                     const ContinuumKernels &kernels, int p,
                                     int j, int samplesPerShell) {
  const Lattice &lat = G.lattice();
  const Window &win = G.window();
  double rmax = 0;
  for (int i = 0; i < win.size(); ++i)
    rmax = std::max(rmax, lat.radius(win.site(i)));
  double lo = 4.0, hi = rmax - 2.0 * j - 1.0;
  if (hi / lo < 4.0)
    throw WindowTooSmall("window too small for expansion table");

  const int nshells = 8;
  // deterministic subsample per shell: kernel quadrature per site is not free
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
  std::mt19937 rng(12345);
  std::vector<double> radii, values;
  const auto &R = lat.stencil();
  std::vector<std::vector<Site>> tuples;
  if (j == 0)
    tuples.push_back({});
  else if (j == 1)
    for (const auto &rho : R)
      tuples.push_back({rho});
  else
    throw InvalidOrder("expansion_error_table: j <= 1");

  for (auto &shell : byShell) {
    std::shuffle(shell.begin(), shell.end(), rng);
    int take = std::min<int>(samplesPerShell, static_cast<int>(shell.size()));
    for (int s = 0; s < take; ++s) {
      const Site &n = win.site(shell[s]);
      double best = 0;
      for (const auto &dirs : tuples) {
        Eigen::MatrixXd err = G.difference(dirs, n);
        // kernel difference by sampling G_n at shifted points
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
          Eigen::VectorXd x = lat.position(m);
          for (int nn = 0; nn <= p; ++nn)
            err -= sign * kernels.eval(nn, x, 0).comp[0];
        }
        best = std::max(best, err.cwiseAbs().maxCoeff());
      }
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
