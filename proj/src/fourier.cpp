#include "latfield/fourier.hpp"

#include <cmath>
#include <functional>
#include <map>

namespace latfield {

MultiplierSeries::MultiplierSeries(SitePotentialPtr V, int nmax)
    : V_(std::move(V)), nmax_(nmax) {
  const Lattice &lat = V_->lattice();
  const int N = lat.ncomp(), R = lat.stencilSize(), d = lat.d();
  const Eigen::MatrixXd &C = V_->hess0();
  auto block = [&](int r, int s) { return C.block(r * N, s * N, N, N); };

  // row sums M1(rho) = sum_sigma C_{rho sigma}
  std::vector<Eigen::MatrixXd> M1(R, Eigen::MatrixXd::Zero(N, N));
  for (int r = 0; r < R; ++r)
    for (int s = 0; s < R; ++s)
      M1[r] += block(r, s);

  // assemble A_tau over the difference set (R u {0}) - (R u {0}):
  //   sum_{rho sigma} C_{rho sigma} [2 sin^2(k.rho/2) + 2 sin^2(k.sigma/2)
  //                                  - 2 sin^2(k.(rho-sigma)/2)]
  // regrouped as sum_tau 4 A_tau sin^2(k.tau/2)
  std::map<std::vector<int>, Eigen::MatrixXd> acc;
  auto add = [&](const Site &tau, const Eigen::MatrixXd &m) {
    if (tau.isZero())
      return;
    std::vector<int> key(tau.data(), tau.data() + d);
    auto [it, fresh] = acc.emplace(key, m);
    if (!fresh)
      it->second += m;
  };
  const auto &Rset = lat.stencil();
  for (int r = 0; r < R; ++r) {
    add(Rset[r], 0.5 * (M1[r] + M1[r].transpose()));
    for (int s = 0; s < R; ++s)
      add(Site(Rset[r] - Rset[s]), -0.5 * block(r, s));
  }
  for (auto &[key, m] : acc) {
    if (m.cwiseAbs().maxCoeff() < 1e-15)
      continue;
    Site tau(d);
    for (int i = 0; i < d; ++i)
      tau[i] = key[i];
    taus_.push_back(tau);
    pos_.push_back(lat.position(tau));
    A_.push_back(m);
  }
}

Eigen::MatrixXd MultiplierSeries::multiplier(const Eigen::VectorXd &k) const {
  const int N = lattice().ncomp();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  for (size_t i = 0; i < taus_.size(); ++i) {
    double s = std::sin(0.5 * k.dot(pos_[i]));
    H += 4.0 * s * s * A_[i];
  }
  return H;
}

Eigen::MatrixXd MultiplierSeries::multiplierTerm(int n,
                                                const Eigen::VectorXd &k) const {
  if (n < 1)
    throw InvalidOrder("multiplierTerm requires n >= 1");
  const int N = lattice().ncomp();
  double fact = 1;
  for (int i = 2; i <= 2 * n; ++i)
    fact *= i;
  double sign = (n % 2 == 0) ? -1.0 : 1.0; // (-1)^{n+1}
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  for (size_t i = 0; i < taus_.size(); ++i) {
    double kt = k.dot(pos_[i]);
    H += (sign * 2.0 * std::pow(kt, 2 * n) / fact) * A_[i];
  }
  return H;
}

Eigen::MatrixXd MultiplierSeries::h2inv(const Eigen::VectorXd &k) const {
  Eigen::MatrixXd H2 = multiplierTerm(1, k);
  const int N = lattice().ncomp();
  if (N == 1) {
    if (std::abs(H2(0, 0)) < 1e-14 * k.squaredNorm())
      throw SingularH2();
    return Eigen::MatrixXd::Constant(1, 1, 1.0 / H2(0, 0));
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(H2);
  if (!lu.isInvertible() ||
      lu.rcond() < 1e-12)
    throw SingularH2();
  return lu.inverse();
}

std::vector<std::vector<int>> inverse_series_compositions(int n) {
  std::vector<std::vector<int>> out;
  // alpha in (2N)^j, alpha_i >= 4 even, sum = 2n + 2j + 2; j <= n + 1
  for (int j = 1; j <= n + 1; ++j) {
    int total = 2 * n + 2 * j + 2;
    std::vector<int> alpha(j);
    std::function<void(int, int)> rec = [&](int pos, int rem) {
      if (pos == j) {
        if (rem == 0)
          out.push_back(alpha);
        return;
      }
      int maxv = rem - 4 * (j - pos - 1);
      for (int a = 4; a <= maxv; a += 2) {
        alpha[pos] = a;
        rec(pos + 1, rem - a);
      }
    };
    rec(0, total);
  }
  return out;
}

Eigen::MatrixXd
MultiplierSeries::inverseSeriesTerm(int n, const Eigen::VectorXd &k) const {
  if (n < -1)
    throw InvalidOrder("inverseSeriesTerm requires n >= -1");
  if (k.squaredNorm() < 1e-28)
    throw SingularH2("k = 0");
  Eigen::MatrixXd H2i = h2inv(k);
  if (n == -1)
    return H2i;
  const int N = lattice().ncomp();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, N);
  for (const auto &alpha : inverse_series_compositions(n)) {
    Eigen::MatrixXd term = H2i;
    for (int a : alpha)
      term = term * multiplierTerm(a / 2, k) * H2i;
    double sign = (alpha.size() % 2 == 0) ? 1.0 : -1.0; // (-1)^j
    out += sign * term;
  }
  return out;
}

} // namespace latfield
