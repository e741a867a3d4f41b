#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "latfield/potentials.hpp"

using namespace latfield;

namespace {

Site site2(int a, int b) {
  Site s(2);
  s << a, b;
  return s;
}

Eigen::MatrixXd randomArg(const SitePotential &V, std::mt19937 &rng,
                          double amp = 0.15) {
  std::uniform_real_distribution<double> dist(-amp, amp);
  Eigen::MatrixXd g(V.lattice().ncomp(), V.lattice().stencilSize());
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < g.cols(); ++j)
      g(i, j) = dist(rng);
  return g;
}

// central mixed difference of order n in directions ds, Richardson-refined
double mixedDiff(const SitePotential &V,
                 const std::vector<Eigen::MatrixXd> &ds, double h) {
  const int n = static_cast<int>(ds.size());
  double acc = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    Eigen::MatrixXd g =
        Eigen::MatrixXd::Zero(V.lattice().ncomp(), V.lattice().stencilSize());
    double sign = 1;
    for (int i = 0; i < n; ++i) {
      double s = (mask & (1u << i)) ? 1.0 : -1.0;
      sign *= s;
      g += s * (h / 2.0) * ds[i];
    }
    acc += sign * V.value(g);
  }
  return acc / std::pow(h, n);
}

double richardson(const SitePotential &V,
                  const std::vector<Eigen::MatrixXd> &ds, double h) {
  double c = mixedDiff(V, ds, h), f = mixedDiff(V, ds, h / 2.0);
  return (4.0 * f - c) / 3.0;
}

} // namespace

TEST_CASE("eval_site: spec examples and order validation") {
  auto ap = make_model("antiplane-sine");
  const int R = ap->lattice().stencilSize();
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, R);
  CHECK(eval_site(*ap, zero, 0).value == 0.0);

  Eigen::MatrixXd H = eval_site(*ap, zero, 2).hess;
  for (int r = 0; r < R; ++r)
    for (int s = 0; s < R; ++s)
      CHECK(H(r, s) == doctest::Approx(r == s ? 0.5 : 0.0).epsilon(1e-14));

  auto tri = make_model("triangular-pair");
  Eigen::MatrixXd zero2 =
      Eigen::MatrixXd::Zero(2, tri->lattice().stencilSize());
  CHECK(eval_site(*tri, zero2, 1).grad.cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(eval_site(*ap, zero, 3), UnsupportedOrder);
}

TEST_CASE("analytic gradient and hessian match finite differences") {
  std::mt19937 rng(17);
  for (const auto &name : {"antiplane-sine", "triangular-pair", "square-pair",
                           "antiplane-cubic"}) {
    auto V = make_model(name);
    const int N = V->lattice().ncomp(), R = V->lattice().stencilSize();
    for (int trial = 0; trial < 3; ++trial) {
      Eigen::MatrixXd g = randomArg(*V, rng);
      Eigen::MatrixXd grad = V->grad(g), hess = V->hess(g);
      double h = 1e-5;
      for (int i = 0; i < N; ++i)
        for (int r = 0; r < R; ++r) {
          Eigen::MatrixXd e = Eigen::MatrixXd::Zero(N, R);
          e(i, r) = 1.0;
          double fd =
              (V->value(g + (h / 2) * e) - V->value(g - (h / 2) * e)) / h;
          CHECK(grad(i, r) == doctest::Approx(fd).epsilon(1e-6));
          Eigen::MatrixXd gfd =
              (V->grad(g + (h / 2) * e) - V->grad(g - (h / 2) * e)) / h;
          for (int j = 0; j < N; ++j)
            for (int s = 0; s < R; ++s)
              CHECK(hess(i + N * r, j + N * s) ==
                    doctest::Approx(gfd(j, s)).epsilon(2e-6));
        }
    }
  }
}

TEST_CASE("analytic third/fourth derivatives at zero match nested FD") {
  std::mt19937 rng(23);
  for (const auto &name : {"antiplane-sine", "triangular-pair",
                           "antiplane-cubic"}) {
    auto V = make_model(name);
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<Eigen::MatrixXd> ds;
      for (int i = 0; i < 4; ++i)
        ds.push_back(randomArg(*V, rng, 1.0));
      double d3 = V->d3_0(ds[0], ds[1], ds[2]);
      double fd3 = richardson(*V, {ds[0], ds[1], ds[2]}, 0.04);
      CHECK(d3 == doctest::Approx(fd3).epsilon(1e-5).scale(1.0));
      double d4 = V->d4_0(ds[0], ds[1], ds[2], ds[3]);
      double fd4 = richardson(*V, ds, 0.04);
      CHECK(d4 == doctest::Approx(fd4).epsilon(1e-4).scale(10.0));
    }
  }
}

TEST_CASE("cauchy_born: antiplane tensors") {
  auto ap = make_model("antiplane-sine");
  auto cb = cauchy_born(*ap);
  CHECK(cb.W0 == 0.0);
  CHECK((cb.C2 - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <
        1e-14);
  CHECK(cb.W3.maxAbs() < 1e-14);
  double w4 = -4.0 * std::numbers::pi * std::numbers::pi;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          double expect = (i == j && j == k && k == l) ? w4 : 0.0;
          CHECK(cb.W4(i, j, k, l) == doctest::Approx(expect).epsilon(1e-12));
        }
  CHECK(cb.legendreHadamardMin() > 0.9);
}

TEST_CASE("cauchy_born: triangular pair tensors are symmetric and elliptic") {
  auto tri = make_model("triangular-pair");
  auto cb = cauchy_born(*tri);
  CHECK(cb.W0 == doctest::Approx(0.0).scale(1.0));
  CHECK((cb.C2 - cb.C2.transpose()).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(cb.legendreHadamardMin() > 0.0);
  CHECK(cb.W3.maxAbs() > 0.1); // nonlinearity present

  // permutation symmetry of W3, W4 in gradient slots
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> pick(0, 3);
  for (int t = 0; t < 20; ++t) {
    int i = pick(rng), j = pick(rng), k = pick(rng), l = pick(rng);
    CHECK(cb.W3(i, j, k) == doctest::Approx(cb.W3(k, i, j)).epsilon(1e-13));
    CHECK(cb.W4(i, j, k, l) ==
          doctest::Approx(cb.W4(l, k, j, i)).epsilon(1e-13));
  }
}

TEST_CASE("validate_symmetry: pair and even models pass, cubic fails") {
  CHECK(validate_symmetry(*make_model("antiplane-sine"), 20).pass);
  CHECK(validate_symmetry(*make_model("triangular-pair"), 20).pass);
  auto rep = validate_symmetry(*make_model("antiplane-cubic"), 20);
  CHECK(!rep.pass);
  CHECK(rep.maxResidual > 1e-4);
}

TEST_CASE("stability constants of the built-in models") {
  CHECK(stability_constant(*make_model("antiplane-sine")) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stability_constant(*make_model("triangular-pair")) > 0.0);
  CHECK(stability_constant(*make_model("square-pair")) <= 1e-10);
}

TEST_CASE("defect models: vacancy masks, identity case, radius check") {
  auto tri = make_model("triangular-pair");
  DefectSpec spec;
  spec.defectRadius = 3.0;
  spec.removed.push_back(site2(0, 0));
  auto def = make_defect_model(tri, spec);
  CHECK(def->isRemoved(site2(0, 0)));
  for (const auto &rho : tri->lattice().stencil()) {
    auto alive = def->aliveMask(rho);
    int n = 0;
    for (bool b : alive)
      n += b;
    CHECK(n == 5);
  }
  CHECK(def->hasFullStencil(site2(4, 0)));

  auto empty = make_defect_model(tri, DefectSpec{});
  CHECK(empty->removed().empty());
  CHECK(empty->hasFullStencil(site2(0, 0)));

  DefectSpec bad;
  bad.defectRadius = 2.0;
  bad.removed.push_back(site2(5, 0));
  CHECK_THROWS_AS(make_defect_model(tri, bad), DefectOutsideRadius);
}

TEST_CASE("apply_H is the discrete negative Laplacian for antiplane-sine") {
  auto ap = make_model("antiplane-sine");
  auto u = [](const Site &n) {
    Eigen::VectorXd v(1);
    v[0] = double(n[0]) * n[0];
    return v;
  };
  CHECK(apply_H(*ap, u, site2(3, -1))[0] == doctest::Approx(-2.0));
  auto ulin = [](const Site &n) {
    Eigen::VectorXd v(1);
    v[0] = 2.0 * n[0] - n[1];
    return v;
  };
  CHECK(apply_H(*ap, ulin, site2(0, 0))[0] == doctest::Approx(0.0));
}

TEST_CASE("homogeneous equilibrium: dE(0) = 0 for all models") {
  for (const auto &name : {"antiplane-sine", "triangular-pair"}) {
    auto V = make_model(name);
    auto zero = [&](const Site &) {
      return Eigen::VectorXd::Zero(V->lattice().ncomp()).eval();
    };
    CHECK(apply_dE(*V, zero, site2(1, 2)).cwiseAbs().maxCoeff() < 1e-14);
  }
}
