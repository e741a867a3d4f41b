#pragma once
#include <Eigen/SparseCore>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "latfield/correctors.hpp"
#include "latfield/greens.hpp"
#include "latfield/multipole.hpp"
#include "latfield/slope.hpp"

namespace latfield {

//! Truncated-domain cell problem. Degrees of freedom are the core
//! displacement w on B_R (zero outside) and, when multipoleOrders >= 1,
//! scaled multipole coefficients b^{(i,k)} for i = 1..multipoleOrders.
//! The trial state is predictor + multipole field + w; the energy difference
//! is summed over B_Rout relative to the predictor-only state.
struct CellSpec {
  SitePotentialPtr model;                          // host potential
  DefectModelPtr defect;                           // null for dislocations
  std::shared_ptr<const PredictorStack> predictor; // null -> zero predictor
  double R = 0;
  double Rout = 0;      // 0 -> 2 R
  int multipoleOrders = 0;
  std::shared_ptr<const LatticeGreens> greens; // needed when orders >= 1
};

class CellProblem {
public:
  explicit CellProblem(CellSpec spec);

  const CellSpec &spec() const { return spec_; }
  const Lattice &lattice() const { return spec_.model->lattice(); }
  int dofCount() const { return siteDofs_ + coeffCount(); }
  int coeffCount() const { return static_cast<int>(basisFields_.size()); }
  int freeSiteCount() const { return static_cast<int>(freeIdx_.size()); }
  const Window &bigWindow() const { return *big_; }

  double energy(const Eigen::VectorXd &x) const;
  double energyAndGradient(const Eigen::VectorXd &x,
                           Eigen::VectorXd &grad) const;

  //! Per-site Hessian blocks at the trial state x, for matrix-free
  //! Hessian-vector products. Bond-diagonal models store the packed
  //! hessBlocks form; others the dense per-site matrix.
  std::vector<Eigen::MatrixXd> linearize(const Eigen::VectorXd &x) const;
  Eigen::VectorXd applyHessian(const std::vector<Eigen::MatrixXd> &siteHess,
                               const Eigen::VectorXd &v) const;

  //! Site-DOF block of the Hessian assembled as a sparse matrix (the
  //! multipole-coefficient border stays matrix-free).
  Eigen::SparseMatrix<double>
  assembleSiteHessian(const std::vector<Eigen::MatrixXd> &siteHess) const;

  //! w + multipole part of the trial state (the correction to the
  //! predictor); defined on the big window.
  Eigen::VectorXd correction(const Eigen::VectorXd &x, const Site &l) const;

  //! Unscaled multipole coefficients packed for eval_discrete_multipole
  //! (order 0 present but zero).
  MultipoleCoeffs fittedCoefficients(const Eigen::VectorXd &x) const;

private:
  Eigen::MatrixXd trialState(const Eigen::VectorXd &x, bool withPred) const;
  void siteStrain(const Eigen::MatrixXd &u, int evalOrdinal,
                  Eigen::MatrixXd &g) const;

  CellSpec spec_;
  WindowPtr big_;
  std::vector<int> evalIdx_;              // big indices of energy sites
  std::vector<int> freeIdx_;              // big indices of free sites
  std::vector<int> dofOfBig_;             // big index -> site-DOF ordinal
  std::vector<std::vector<int>> nbr_;     // per eval ordinal, big nbr indices
  std::vector<std::vector<bool>> alive_;  // per eval ordinal (defect masks)
  std::vector<bool> full_;                // per eval ordinal: full stencil
  std::vector<Eigen::MatrixXd> offset_;   // core eigenstrains (empty if full)
  Eigen::MatrixXd pred_;                  // big x N predictor values
  Eigen::MatrixXd slip_;                  // big x |stencil| cut corrections
  std::vector<Eigen::MatrixXd> basisFields_; // scaled, big x N each
  std::vector<double> scales_;
  struct CoeffMeta {
    int order, comp, canonical;
    std::vector<Site> dirs;
    double multiplicity = 1;
  };
  std::vector<CoeffMeta> coeffMeta_;
  std::vector<Site> basis_;
  int siteDofs_ = 0;
  double baseline_ = 0;
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double gradNorm = 0;
  double energy = 0; // energy difference at the returned state
  Eigen::VectorXd dofs;
};

struct SolveOptions {
  double gtol = 1e-9;
  int maxIterations = 100;
  int maxCg = 1000;
  bool checkStability = true;
};

//! Newton-Krylov minimization over all free DOFs.
SolveReport solve_cell(const CellProblem &prob, const SolveOptions &opts = {});

//! Clamped scheme: requires a problem without multipole DOFs.
SolveReport solve_clamped(const CellProblem &prob,
                          const SolveOptions &opts = {});
//! Multipole-augmented scheme (p = 0 coincides with clamped).
SolveReport solve_augmented(const CellProblem &prob,
                            const SolveOptions &opts = {});

//! l2 norm of all stencil differences of u over the window.
double difference_norm(const Lattice &lat, const Window &win,
                       const std::function<Eigen::VectorXd(const Site &)> &u);

enum class Scheme { Clamped, Augmented };

struct StudySpec {
  SitePotentialPtr model;
  DefectModelPtr defect;
  std::shared_ptr<const PredictorStack> predictor;
  std::shared_ptr<const LatticeGreens> greens;
  Scheme scheme = Scheme::Clamped;
  int multipoleOrders = 1; // for the augmented scheme
  std::vector<double> radii;
  double referenceR = 0;
  double gtol = 1e-9;
  double referenceGtol = 1e-11;
  int logDeflation = 0;
};

struct ConvergenceStudy {
  std::vector<double> radii;
  std::vector<double> errors; // ||D u_R - D u_ref||_l2 over B_referenceR
  SlopeFit fit;
  double referenceR = 0;
  std::string reference; // descriptor of the reference solve
};

//! Solves at each radius and fits the error decay against an augmented
//! p=1 reference at referenceR (>= 3x the largest study radius).
ConvergenceStudy convergence_study(const StudySpec &spec);

//! Shell-max log-log slope of max_{dirs} |D^j u| over rmin <= |A l| <= rmax.
//! u must be evaluable out to rmax plus j stencil reaches.
SlopeFit decay_report(const Lattice &lat,
                      const std::function<Eigen::VectorXd(const Site &)> &u,
                      int j, double rmin, double rmax, int nshells = 8,
                      int logDeflation = 0);

} // namespace latfield
