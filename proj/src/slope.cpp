#include "latfield/slope.hpp"

#include <cmath>
#include <stdexcept>

#include "latfield/errors.hpp"

namespace latfield {

std::vector<Shell> shell_max(const std::vector<double> &radii,
                             const std::vector<double> &values, double rmin,
                             double rmax, int nshells) {
  if (radii.size() != values.size())
    throw DimensionMismatch("shell_max: size mismatch");
  if (nshells < 2 || rmax <= rmin || rmin <= 0)
    throw Error("shell_max: bad shell layout");
  const double lr0 = std::log(rmin), lr1 = std::log(rmax);
  std::vector<Shell> shells(nshells);
  for (size_t i = 0; i < radii.size(); ++i) {
    double r = radii[i];
    if (r < rmin || r >= rmax)
      continue;
    int s = static_cast<int>(nshells * (std::log(r) - lr0) / (lr1 - lr0));
    if (s < 0 || s >= nshells)
      continue;
    Shell &sh = shells[s];
    sh.value = sh.count ? std::max(sh.value, std::abs(values[i]))
                        : std::abs(values[i]);
    ++sh.count;
  }
  std::vector<Shell> out;
  for (int s = 0; s < nshells; ++s) {
    if (!shells[s].count)
      continue;
    double le = lr0 + (s + 0.5) * (lr1 - lr0) / nshells;
    shells[s].radius = std::exp(le);
    out.push_back(shells[s]);
  }
  return out;
}

SlopeFit fit_slope(const std::vector<Shell> &shells, int logDeflation) {
  SlopeFit fit;
  fit.logDeflation = logDeflation;
  std::vector<double> xs, ys;
  for (const auto &sh : shells) {
    if (sh.value <= 0)
      continue;
    double v = sh.value;
    for (int q = 0; q < logDeflation; ++q)
      v /= std::log(sh.radius);
    xs.push_back(std::log(sh.radius));
    ys.push_back(std::log(v));
  }
  const int n = static_cast<int>(xs.size());
  fit.points = n;
  if (n < 2)
    throw Error("fit_slope: need at least two shells with data");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double denom = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  if (n > 2) {
    double ss = 0;
    for (int i = 0; i < n; ++i) {
      double r = ys[i] - fit.slope * xs[i] - fit.intercept;
      ss += r * r;
    }
    fit.stderror = std::sqrt(ss / (n - 2) / (sxx - sx * sx / n));
  }
  return fit;
}

SlopeFit fit_log_growth(const std::vector<Shell> &shells) {
  // linear fit value ~ a log r + b
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto &sh : shells) {
    double x = std::log(sh.radius), y = sh.value;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2)
    throw Error("fit_log_growth: need at least two shells");
  double a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double b = (sy - a * sx) / n;

  SlopeFit fit = fit_slope(shells, 1);
  // power-law slope of v/log r near zero plus a real log coefficient
  // signals logarithmic growth
  double rel = std::abs(a) / std::max(1e-300, std::abs(b) + std::abs(a));
  fit.logDetected = std::abs(fit.slope) < 0.2 && rel > 0.05;
  fit.logDeflation = 1;
  return fit;
}

} // namespace latfield
