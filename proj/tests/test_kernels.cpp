#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "latfield/kernels.hpp"

using namespace latfield;

namespace {
constexpr double pi = std::numbers::pi;
using Cplx = std::complex<double>;
} // namespace

TEST_CASE("j_function: closed-form examples and branch") {
  CHECK(j_function(1, 1.0).real() == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(std::abs(j_function(1, 1.0).imag()) < 1e-14);

  Cplx jm1 = j_function(-1, 1.0);
  CHECK(jm1.real() == doctest::Approx(0.0).scale(1.0));
  CHECK(jm1.imag() == doctest::Approx(pi / 2).epsilon(1e-14));

  CHECK_THROWS_AS(j_function(0, 0.0), SingularArgument);

  // coarse recurrence example
  Cplx fd = (j_function(0, 1.1) - j_function(0, 0.9)) / 0.2;
  // central-difference remainder |J0'''| h^2 / 6 = 1.0e-2 exactly here
  CHECK(std::abs(fd - Cplx(0, 1) * j_function(1, 1.0)) < 1.5e-2);
}

TEST_CASE("j_function recurrence J_l' = i J_{l+1} to 1e-8 relative") {
  for (int l = -4; l <= 4; ++l) {
    for (double w : {0.1, 0.37, 1.0, 2.9, 10.0}) {
      double h = 1e-4 * w;
      Cplx fd = (j_function(l, w + h) - j_function(l, w - h)) / (2.0 * h);
      Cplx expect = Cplx(0, 1) * j_function(l + 1, w);
      CHECK(std::abs(fd - expect) <= 1e-7 * std::abs(expect));
    }
  }
}

TEST_CASE("antiplane G0: Laplace fundamental solution") {
  ContinuumKernels ker(make_model("antiplane-sine"));
  for (auto [a, b] : {std::pair{3.0, 1.0}, {-2.0, 5.0}, {10.0, -7.0}}) {
    Eigen::VectorXd x(2);
    x << a, b;
    KernelValue g1 = ker.eval(0, x, 1);
    double r2 = x.squaredNorm();
    CHECK(g1.scalar({0}) == doctest::Approx(-x[0] / (2 * pi * r2)).epsilon(1e-8));
    CHECK(g1.scalar({1}) == doctest::Approx(-x[1] / (2 * pi * r2)).epsilon(1e-8));
  }
  // log-part matrix A = -1/(2 pi)
  CHECK(ker.logMatrix()(0, 0) == doctest::Approx(-1.0 / (2 * pi)).epsilon(1e-8));

  // G0 - A log|x| is 0-homogeneous
  Eigen::VectorXd x(2);
  x << 4.0, 3.0;
  double g = ker.eval(0, x, 0).scalar();
  double g2 = ker.eval(0, 2.0 * x, 0).scalar();
  CHECK(g2 - g == doctest::Approx(-std::log(2.0) / (2 * pi)).epsilon(1e-8));
}

TEST_CASE("G0 annihilated by the continuum operator away from 0") {
  for (const auto &name : {"antiplane-sine"}) {
    ContinuumKernels ker(make_model(name));
    Eigen::VectorXd x(2);
    x << 7.0, -4.0;
    KernelValue h = ker.eval(0, x, 2);
    // H^C = -div(C grad): for antiplane C = Id, so trace of grad^2 G0 = 0
    double lap = h.scalar({0, 0}) + h.scalar({1, 1});
    CHECK(std::abs(lap) < 1e-8 / x.squaredNorm());
  }
}

TEST_CASE("kernel homogeneity: G1 degree -2, gradients lower by one") {
  ContinuumKernels ker(make_model("antiplane-sine"));
  Eigen::VectorXd x(2);
  x << 2.0, 1.5;
  double g1 = ker.eval(1, x, 0).scalar();
  double g1s = ker.eval(1, 2.0 * x, 0).scalar();
  CHECK(g1s == doctest::Approx(0.25 * g1).epsilon(1e-8));

  KernelValue d1 = ker.eval(1, x, 1), d1s = ker.eval(1, 2.0 * x, 1);
  CHECK(d1s.scalar({0}) == doctest::Approx(d1.scalar({0}) / 8.0).epsilon(1e-7));
  CHECK(d1s.scalar({1}) == doctest::Approx(d1.scalar({1}) / 8.0).epsilon(1e-7));
}

TEST_CASE("kernel derivatives are consistent with finite differences") {
  for (const auto &name : {"antiplane-sine", "triangular-pair"}) {
    ContinuumKernels ker(make_model(name));
    Eigen::VectorXd x(2);
    x << 5.0, 2.0;
    for (int n = 0; n <= 1; ++n) {
      KernelValue grad = ker.eval(n, x, 1);
      for (int a = 0; a < 2; ++a) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(2);
        e[a] = 1e-3 * x.norm();
        KernelValue p = ker.eval(n, x + e, 0), m = ker.eval(n, x - e, 0);
        Eigen::MatrixXd fd = (p.comp[0] - m.comp[0]) / (2.0 * e[a]);
        std::vector<int> multi = {a};
        double scale = std::max(1e-12, grad.maxAbs());
        CHECK((grad.at(multi) - fd).cwiseAbs().maxCoeff() < 1e-5 * scale);
      }
    }
  }
}

TEST_CASE("vector-valued kernels: triangular G0 log matrix is symmetric") {
  ContinuumKernels ker(make_model("triangular-pair"));
  Eigen::MatrixXd A = ker.logMatrix();
  CHECK(A.rows() == 2);
  CHECK((A - A.transpose()).cwiseAbs().maxCoeff() < 1e-8);
  // negative definite log coefficient (decaying Green's function scale)
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  CHECK(es.eigenvalues().maxCoeff() < 0.0);
}

TEST_CASE("invalid kernel arguments") {
  ContinuumKernels ker(make_model("antiplane-sine"));
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(ker.eval(0, zero, 0), SingularArgument);
  Eigen::VectorXd x(2);
  x << 1.0, 1.0;
  CHECK_THROWS_AS(ker.eval(0, x, 5), InvalidOrder);
  CHECK_THROWS_AS(ker.eval(-1, x, 0), InvalidOrder);
}
