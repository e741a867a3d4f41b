#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "latfield/correctors.hpp"
#include "latfield/slope.hpp"

using namespace latfield;

namespace {

Site site2(int a, int b) {
  Site s(2);
  s << a, b;
  return s;
}

Eigen::VectorXd pt(double a, double b) {
  Eigen::VectorXd x(2);
  x << a, b;
  return x;
}

double fd1(const ScalarField &u, const Eigen::VectorXd &x, int a,
           double h = 1e-5) {
  Eigen::VectorXd xp = x, xm = x;
  xp[a] += h;
  xm[a] -= h;
  return (u(xp) - u(xm)) / (2 * h);
}

//! Nonlinear per-site force delta E(u)(l) with cut-corrected differences,
//! mirroring the flux structure of the linearized operator.
double dE_cut(const SitePotential &V, const ScrewSpec &spec,
              const std::function<double(const Site &)> &u, const Site &l,
              std::map<std::int64_t, Eigen::MatrixXd> &cache) {
  const Lattice &lat = V.lattice();
  const auto &R = lat.stencil();
  const int Rn = lat.stencilSize();
  auto gradAt = [&](const Site &m) -> const Eigen::MatrixXd & {
    auto it = cache.find(site_key(m));
    if (it != cache.end())
      return it->second;
    Eigen::MatrixXd Du(1, Rn);
    double um = u(m);
    for (int s = 0; s < Rn; ++s)
      Du(0, s) = u(Site(m + R[s])) - um + screw_slip(lat, spec, m, R[s]);
    return cache.emplace(site_key(m), V.grad(Du)).first->second;
  };
  const Eigen::MatrixXd &gl = gradAt(l);
  double out = 0;
  for (int r = 0; r < Rn; ++r)
    out -= gl(0, r) - gradAt(Site(l - R[r]))(0, r);
  return out;
}

} // namespace

TEST_CASE("field primitives: monomials, combinations, zero") {
  auto m = monomial_field({2, 1}); // x^2 y
  Eigen::VectorXd x = pt(2.0, 3.0);
  CHECK((*m)(x) == doctest::Approx(12.0));
  CHECK(m->deriv(x, {1, 0}) == doctest::Approx(12.0));
  CHECK(m->deriv(x, {1, 1}) == doctest::Approx(4.0));
  CHECK(m->deriv(x, {2, 1}) == doctest::Approx(2.0));
  CHECK(m->deriv(x, {3, 0}) == 0.0);
  CHECK(m->gradient(x)[1] == doctest::Approx(4.0));

  auto c = linear_combination({{2.0, m}, {-1.0, monomial_field({0, 2})}});
  CHECK((*c)(x) == doctest::Approx(2 * 12.0 - 9.0));
  CHECK(c->deriv(x, {0, 2}) == doctest::Approx(-2.0));

  auto z = zero_field(2);
  CHECK((*z)(x) == 0.0);
  CHECK(z->deriv(x, {2, 0}) == 0.0);
}

TEST_CASE("strain-gradient operator: quartic oracle, quadratics, linearity") {
  auto V = make_model("antiplane-sine");
  Eigen::VectorXd x = pt(0.7, -1.3);

  CHECK(apply_H_SG(*V, *monomial_field({4, 0}), x) == doctest::Approx(-2.0));
  CHECK(apply_H_SG(*V, *monomial_field({0, 4}), x) == doctest::Approx(-2.0));
  CHECK(apply_H_SG(*V, *monomial_field({2, 0}), x) == doctest::Approx(0.0));
  CHECK(apply_H_SG(*V, *monomial_field({1, 1}), x) == doctest::Approx(0.0));

  auto u = monomial_field({4, 0});
  auto v = monomial_field({2, 2});
  auto w = linear_combination({{1.5, u}, {-0.25, v}});
  CHECK(apply_H_SG(*V, *w, x) ==
        doctest::Approx(1.5 * apply_H_SG(*V, *u, x) -
                        0.25 * apply_H_SG(*V, *v, x)));

  CHECK_THROWS_AS(apply_H_SG(*make_model("triangular-pair"),
                             *monomial_field({4, 0}), x),
                  NonScalarOperator);
}

TEST_CASE("screw CLE field: jump, smoothness across the cut, PDE, net force") {
  auto V = make_model("antiplane-sine");
  ScrewSpec spec; // b = 1, core (0.5, 0.5)
  auto u = u_cle_screw(*V, spec);

  // jump across the cut equals -b; gradient stays continuous
  const double eps = 1e-8;
  CHECK((*u)(pt(5.5, 0.5 + eps)) - (*u)(pt(5.5, 0.5 - eps)) ==
        doctest::Approx(-1.0).epsilon(1e-6));
  CHECK((u->gradient(pt(5.5, 0.5 + eps)) - u->gradient(pt(5.5, 0.5 - eps)))
            .norm() < 1e-6);

  // |grad u| = b / (2 pi |x - core|)
  Eigen::VectorXd x = pt(-2.7, 3.4);
  double r = (x - Eigen::VectorXd(pt(0.5, 0.5))).norm();
  CHECK(u->gradient(x).norm() ==
        doctest::Approx(1.0 / (2 * std::numbers::pi * r)).epsilon(1e-12));

  // Laplacian vanishes off the cut, through high-order derivatives
  for (auto [a, b] : {std::pair{-3.2, 2.1}, {4.0, -5.5}, {0.1, 7.3}}) {
    Eigen::VectorXd y = pt(a, b);
    CHECK(std::abs(u->deriv(y, {2, 0}) + u->deriv(y, {0, 2})) < 1e-10);
    CHECK(std::abs(u->deriv(y, {3, 0}) + u->deriv(y, {1, 2})) < 1e-10);
    CHECK(std::abs(u->deriv(y, {4, 0}) + u->deriv(y, {2, 2})) < 1e-10);
  }

  // derivatives agree with finite differences away from the cut
  Eigen::VectorXd y = pt(-3.2, 2.1);
  CHECK(u->deriv(y, {1, 0}) == doctest::Approx(fd1(*u, y, 0)).epsilon(1e-8));
  CHECK(u->deriv(y, {0, 1}) == doctest::Approx(fd1(*u, y, 1)).epsilon(1e-8));

  // zero net force: contour integral of C[grad u] nu around the core
  Eigen::Matrix2d C = cauchy_born(*V).scalarC();
  double integral = 0;
  const int nq = 256;
  for (int q = 0; q < nq; ++q) {
    double th = 2 * std::numbers::pi * q / nq;
    Eigen::Vector2d nu(std::cos(th), std::sin(th));
    Eigen::VectorXd z = pt(0.5 + nu[0], 0.5 + nu[1]);
    integral += (C * u->gradient(z)).dot(nu) * (2 * std::numbers::pi / nq);
  }
  CHECK(std::abs(integral) < 1e-10);

  CHECK_THROWS_AS(u_cle_screw(*make_model("triangular-pair"), spec),
                  AnisotropyUnsupported);
  ScrewSpec onRow;
  onRow.core = Eigen::Vector2d(0.5, 0.0);
  CHECK_THROWS_AS(u_cle_screw(*V, onRow), ConfigInvalid);
}

TEST_CASE("screw slip rule and the three-way net-force identity") {
  auto V = make_model("antiplane-sine");
  const Lattice &lat = V->lattice();
  ScrewSpec spec;

  Site up(2);
  up << 0, 1;
  Site down(2);
  down << 0, -1;
  Site right(2);
  right << 1, 0;
  CHECK(screw_slip(lat, spec, site2(3, 0), up) == doctest::Approx(1.0));
  CHECK(screw_slip(lat, spec, site2(3, 1), down) == doctest::Approx(-1.0));
  CHECK(screw_slip(lat, spec, site2(-2, 0), up) == 0.0);   // left of the core
  CHECK(screw_slip(lat, spec, site2(3, 0), right) == 0.0); // parallel to cut
  CHECK(screw_slip(lat, spec, site2(3, 1), up) == 0.0);    // no crossing

  auto ufield = u_cle_screw(*V, spec);
  auto usite = [&](const Site &n) { return (*ufield)(lat.position(n)); };

  // contour integral at radius 64 around the core
  Eigen::Matrix2d C = cauchy_born(*V).scalarC();
  double contour = 0;
  const int nq = 1024;
  for (int q = 0; q < nq; ++q) {
    double th = 2 * std::numbers::pi * q / nq;
    Eigen::Vector2d nu(std::cos(th), std::sin(th));
    Eigen::VectorXd z = pt(0.5 + 64 * nu[0], 0.5 + 64 * nu[1]);
    contour += (C * ufield->gradient(z)).dot(nu) * 64 *
               (2 * std::numbers::pi / nq);
  }

  auto win = ball_window(lat, 64.0);
  std::map<std::int64_t, Eigen::MatrixXd> cache;
  double sumH = 0, sumdE = 0, scale = 0, sumH32 = 0, sumH16 = 0;
  for (int i = 0; i < win->size(); ++i) {
    const Site &n = win->site(i);
    double h = apply_H_cut(*V, spec, usite, n);
    double f = dE_cut(*V, spec, usite, n, cache);
    sumH += h;
    sumdE += f;
    scale += std::abs(f);
    double rn = lat.position(n).norm();
    if (rn <= 32)
      sumH32 += h;
    if (rn <= 16)
      sumH16 += h;
  }
  CHECK(scale > 1e-3); // the comparison scale is real
  CHECK(std::abs(contour) < 1e-3 * scale);
  CHECK(std::abs(sumH - contour) < 1e-3 * scale);
  CHECK(std::abs(sumdE - contour) < 1e-3 * scale);
  CHECK(std::abs(sumH) <= std::abs(sumH32) + 1e-12 * scale);
  CHECK(std::abs(sumH32) <= std::abs(sumH16) + 1e-12 * scale);
}

TEST_CASE("far-field solver: zero rhs, manufactured solution, validation") {
  auto V = make_model("antiplane-sine");

  auto uz = solve_far_field(*V, [](const Eigen::VectorXd &) { return 0.0; },
                            2.0);
  CHECK((*uz)(pt(5.0, 1.0)) == 0.0);
  CHECK(uz->deriv(pt(5.0, 1.0), {1, 1}) == 0.0);

  // u* = log(r) cos(theta) / r solves -Laplace u* = 2 cos(theta) / r^3
  const double R0 = 2.0;
  auto f = [](const Eigen::VectorXd &x) {
    double r2 = x.squaredNorm();
    return 2.0 * x[0] / (r2 * r2);
  };
  auto u = solve_far_field(*V, f, R0);
  auto ustar = [](const Eigen::VectorXd &x) {
    double r2 = x.squaredNorm();
    return 0.5 * std::log(r2) * x[0] / r2;
  };
  // the particular solution differs from u* by a decaying harmonic
  // c cos(theta)/r; fit c at one point, then the gap must close
  Eigen::VectorXd xref = pt(6.0, 0.0);
  double c = ((*u)(xref)-ustar(xref)) * 6.0;
  double worst = 0;
  for (double r : {4.0, 5.5, 8.0, 11.0, 16.0, 20.0})
    for (int q = 0; q < 12; ++q) {
      double th = 2 * std::numbers::pi * q / 12;
      Eigen::VectorXd x = pt(r * std::cos(th), r * std::sin(th));
      worst = std::max(worst, std::abs((*u)(x)-ustar(x) -
                                       c * std::cos(th) / r));
    }
  CHECK(worst < 1e-6);

  // derivative tables are consistent with finite differences of the value
  Eigen::VectorXd y = pt(5.3, 2.1);
  CHECK(u->deriv(y, {1, 0}) == doctest::Approx(fd1(*u, y, 0)).epsilon(1e-5));
  CHECK(u->deriv(y, {0, 1}) == doctest::Approx(fd1(*u, y, 1)).epsilon(1e-5));
  {
    Eigen::VectorXd yp = y, ym = y;
    yp[0] += 1e-4;
    ym[0] -= 1e-4;
    double fdxx = (u->deriv(yp, {1, 0}) - u->deriv(ym, {1, 0})) / 2e-4;
    CHECK(u->deriv(y, {2, 0}) == doctest::Approx(fdxx).epsilon(1e-4));
  }
  CHECK_THROWS_AS(u->deriv(y, {2, 1}), UnsupportedOrder);

  // rhs with angular content beyond the kept modes is rejected
  auto fhigh = [](const Eigen::VectorXd &x) {
    double r2 = x.squaredNorm();
    return std::cos(28.0 * std::atan2(x[1], x[0])) / (r2 * r2);
  };
  CHECK_THROWS_AS(solve_far_field(*V, fhigh, 2.0),
                  ModeTruncationNotConverged);

  CHECK_THROWS_AS(solve_far_field(*make_model("triangular-pair"),
                                  [](const Eigen::VectorXd &) { return 0.0; },
                                  2.0),
                  NonScalarOperator);
}

TEST_CASE("corrector right-hand sides: structural zeros and validation") {
  auto V = make_model("antiplane-sine");
  ScrewSpec spec;
  auto u0 = u_cle_screw(*V, spec);

  auto S0 = build_rhs_S(*V, 0, {});
  CHECK(S0(pt(3.0, 4.0)) == 0.0);

  // grad^3 W(0) = 0 for the even bond potential, so S_1 vanishes
  auto S1 = build_rhs_S(*V, 1, {u0});
  for (auto [a, b] : {std::pair{6.0, 1.0}, {-4.0, 3.0}})
    CHECK(S1(pt(a, b)) == doctest::Approx(0.0));

  // d = 3: S_1 = 0 for every model
  auto V3 = make_model("cubic-sine");
  auto S1d3 = build_rhs_S(*V3, 1, {monomial_field({1, 1, 1})});
  Eigen::VectorXd x3(3);
  x3 << 1.0, 2.0, -1.0;
  CHECK(S1d3(x3) == 0.0);
  // d = 3: S_2 = (1/2) div grad^3 W [grad u0]^2 - H_SG[u0], first term zero
  auto S2d3 = build_rhs_S(*V3, 2, {monomial_field({4, 0, 0})});
  CHECK(S2d3(x3) == doctest::Approx(-apply_H_SG(*V3, *monomial_field({4, 0, 0}),
                                                x3)));

  CHECK_THROWS_AS(build_rhs_S(*V, 2, {}), MissingPredecessor);
  CHECK_THROWS_AS(build_rhs_S(*V, 3, {u0}), InvalidOrder);
  CHECK_THROWS_AS(build_rhs_S(*make_model("triangular-pair"), 1, {}),
                  NonScalarOperator);
}

TEST_CASE("predictor assembly: point defects, screw hierarchy, PDE check") {
  auto V = make_model("antiplane-sine");

  auto flat = assemble_predictor(V, 2);
  CHECK(flat.trivial());
  CHECK(flat.fields.size() == 3);
  CHECK(flat.value(pt(3.0, 1.0)) == 0.0);
  CHECK_THROWS_AS(assemble_predictor(V, 3), InvalidOrder);

  ScrewSpec spec;
  auto p1 = assemble_predictor(V, 1, &spec);
  CHECK(!p1.trivial());
  // S_1 = 0, so the order-1 predictor is pure u_CLE
  CHECK(p1.fields[1]->deriv(pt(7.0, 2.0), {1, 0}) == 0.0);

  auto p2 = assemble_predictor(V, 2, &spec);
  const ScalarField &u0 = *p2.fields[0];
  const ScalarField &u2 = *p2.fields[2];
  auto S2 = build_rhs_S(*V, 2, {p2.fields[0], p2.fields[1]});

  // PDE residual |H^C[u_2] - S_2| < 1e-6 |x|^{-4} at sampled points
  for (double r : {8.0, 16.0, 32.0})
    for (int q = 0; q < 8; ++q) {
      double th = 2 * std::numbers::pi * (q + 0.35) / 8;
      Eigen::VectorXd x = pt(r * std::cos(th), r * std::sin(th));
      double lap = u2.deriv(x, {2, 0}) + u2.deriv(x, {0, 2});
      CHECK(std::abs(-lap - S2(x)) < 1e-6 * std::pow(r, -4.0));
    }

  // decay contract: |grad u_2| ~ r^{2-d-p-1} log = r^{-3} log
  {
    std::vector<double> radii, vals;
    for (double r = 8; r <= 256; r *= 1.15)
      for (int q = 0; q < 16; ++q) {
        double th = 2 * std::numbers::pi * (q + 0.5) / 16;
        Eigen::VectorXd x = pt(r * std::cos(th), r * std::sin(th));
        radii.push_back(r);
        vals.push_back(u2.gradient(x).norm());
      }
    auto fit = fit_slope(shell_max(radii, vals, 8, 256, 8), 1);
    CHECK(fit.slope == doctest::Approx(-3.0).epsilon(0.1));
  }

  // lattice-residual oracle: adding u_2 steepens the force decay from the
  // order of the uncorrected CLE profile (~ r^-4) by roughly one order
  const Lattice &lat = V->lattice();
  auto force_slope = [&](const std::function<double(const Site &)> &us,
                         int deflate) {
    std::map<std::int64_t, Eigen::MatrixXd> cache;
    std::vector<double> radii, vals;
    auto win = ball_window(lat, 49.0);
    for (int i = 0; i < win->size(); ++i) {
      const Site &n = win->site(i);
      double rn = lat.position(n).norm();
      if (rn < 4)
        continue;
      radii.push_back(rn);
      vals.push_back(std::abs(dE_cut(*V, spec, us, n, cache)));
    }
    return fit_slope(shell_max(radii, vals, 6, 48, 6), deflate).slope;
  };
  auto cle = [&](const Site &n) { return u0(lat.position(n)); };
  auto corr = [&](const Site &n) { return p2.value(lat.position(n)); };
  double s0 = force_slope(cle, 0);
  double s2 = force_slope(corr, 1);
  CHECK(s0 == doctest::Approx(-4.0).epsilon(0.1));
  CHECK(s2 < s0 - 0.8);
}
