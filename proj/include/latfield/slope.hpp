#pragma once
#include <vector>

namespace latfield {

//! Least-squares slope of log(value) vs log(radius) with a confidence band
//! (standard error of the slope estimate).
struct SlopeFit {
  double slope = 0;
  double intercept = 0;
  double stderror = 0;
  int points = 0;
  int logDeflation = 0; // log power q divided out before fitting
  bool logDetected = false;
};

//! Radial shell decomposition of (radius, value) samples: shell s collects
//! radii in [r0 * f^s, r0 * f^{s+1}), the shell value is the max.
struct Shell {
  double radius = 0; // geometric mean radius of the shell
  double value = 0;  // shell max
  int count = 0;
};

std::vector<Shell> shell_max(const std::vector<double> &radii,
                             const std::vector<double> &values, double rmin,
                             double rmax, int nshells);

//! Fit log(value / log^q(radius)) ~ slope * log(radius) + intercept.
SlopeFit fit_slope(const std::vector<Shell> &shells, int logDeflation = 0);

//! Log-growth detection: fits value ~ a log r + b and reports whether the
//! exp-transformed power-law slope is ~0 while a is significantly nonzero.
SlopeFit fit_log_growth(const std::vector<Shell> &shells);

} // namespace latfield
