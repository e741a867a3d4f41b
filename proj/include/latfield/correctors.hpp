#pragma once
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "latfield/potentials.hpp"

namespace latfield {

//! Smooth continuum displacement field (scalar) with mixed partials;
//! orders[a] = number of derivatives along axis a, total order <= 4.
class ScalarField {
public:
  virtual ~ScalarField() = default;
  virtual int dim() const = 0;
  virtual double deriv(const Eigen::VectorXd &x,
                       const std::vector<int> &orders) const = 0;

  double operator()(const Eigen::VectorXd &x) const {
    return deriv(x, std::vector<int>(x.size(), 0));
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd &x) const;
};

using ScalarFieldPtr = std::shared_ptr<const ScalarField>;

ScalarFieldPtr zero_field(int d);
bool is_zero_field(const ScalarFieldPtr &f);
//! prod_a x_a^{powers[a]} with exact derivatives (test fields).
ScalarFieldPtr monomial_field(const std::vector<int> &powers);
ScalarFieldPtr
linear_combination(std::vector<std::pair<double, ScalarFieldPtr>> terms);

//! Screw dislocation geometry: Burgers magnitude (along the out-of-plane
//! axis) and off-lattice core; the branch cut is
//! {x2 = core2, x1 >= core1}.
struct ScrewSpec {
  double burgers = 1.0;
  Eigen::Vector2d core = Eigen::Vector2d(0.5, 0.5);
};

//! CLE screw profile (b/2pi) arg(x - core) with the jump -b across the cut;
//! derivatives through 4th order from the complex-log closed form.
//! Requires a scalar model with isotropic Cauchy-Born coefficient.
ScalarFieldPtr u_cle_screw(const SitePotential &V, const ScrewSpec &spec);

//! Correction to add to the raw difference u(l + rho) - u(l) when the bond
//! crosses the branch cut: +-burgers, else 0.
double screw_slip(const Lattice &lat, const ScrewSpec &spec, const Site &l,
                  const Site &rho);

//! H[u] with cut-corrected (elastic) differences for fields carrying the
//! screw jump.
double apply_H_cut(const SitePotential &V, const ScrewSpec &spec,
                   const std::function<double(const Site &)> &u,
                   const Site &l);

//! Strain-gradient operator
//! (1/12 c_vol) sum_{sigma,rho} C_{sigma rho} (3 grad^4 u[s,s,r,r]
//! - 2 grad^4 u[s,r,r,r] - 2 grad^4 u[s,s,s,r]); scalar models only.
double apply_H_SG(const SitePotential &V, const ScalarField &u,
                  const Eigen::VectorXd &x);

using RhsFunction = std::function<double(const Eigen::VectorXd &)>;

//! Corrector right-hand side S_i of H^C[u_i] = S_i(u_0..u_{i-1});
//! `lower` holds u_0..u_{i-1}, `multipole1` the continuum dipole field
//! entering S_2 in d = 2 (only needed when grad^3 W(0) != 0).
RhsFunction build_rhs_S(const SitePotential &V, int i,
                        const std::vector<ScalarFieldPtr> &lower,
                        ScalarFieldPtr multipole1 = nullptr);

struct FarFieldOptions {
  double rmaxFactor = 16777216.0; // integrate over [R0, R0 * factor]
  int intervalsPerOctave = 16;
  int angularNodes = 64;
  int keepModes = 24;
  double modeTol = 1e-8; // relative size allowed for discarded modes
};

//! Particular solution of H^C[u] = f outside B_R0 for scalar models:
//! coordinates are mapped so the operator becomes -Laplace, f is expanded in
//! angular Fourier modes on a geometric radial grid (Gauss quadrature per
//! interval) and each radial mode is integrated by variation of parameters
//! with the decaying-at-infinity choice of constants. Inside B_R0 the field
//! is continued harmonically from the boundary values.
ScalarFieldPtr solve_far_field(const SitePotential &V, const RhsFunction &f,
                               double R0,
                               const FarFieldOptions &opts = {});

//! Far-field predictor hat{u}_p = sum u_i, with the screw profile as u_0
//! when a screw spec is given and zero fields for point defects.
struct PredictorStack {
  SitePotentialPtr model;
  int order = 0; // p
  bool isScrew = false;
  ScrewSpec spec;
  double innerRadius = 0;
  std::vector<ScalarFieldPtr> fields; // u_0 .. u_p

  double value(const Eigen::VectorXd &x) const;
  double deriv(const Eigen::VectorXd &x, const std::vector<int> &orders) const;
  bool trivial() const; // every field is the zero field
};

PredictorStack assemble_predictor(SitePotentialPtr V, int p,
                                  const ScrewSpec *screw = nullptr,
                                  double R0 = 4.0,
                                  const FarFieldOptions &opts = {});

} // namespace latfield
