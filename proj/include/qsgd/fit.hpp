#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qsgd {

enum class FitAxis { MEff, NEff };

inline const char* axis_name(FitAxis a) { return a == FitAxis::MEff ? "meff" : "neff"; }

// One aggregated sweep point: seed-averaged excess (population risk minus the
// irreducible sigma^2/2) with its seed stderr.
struct SweepPoint {
  double m_eff = 0.0;
  double n_eff = 0.0;
  double mean_excess = 0.0;
  double stderr_mean = 0.0;
  int seeds = 0;
};

// Fitted power law excess = amplitude * axis^exponent + floor.
struct FitResult {
  double amplitude = 0.0;
  double exponent = 0.0;
  double floor = 0.0;
  double r_squared = 0.0;         // in log space: log(excess - floor) vs log(axis)
  double r_squared_linear = 0.0;  // same fit scored in linear space
  FitAxis axis = FitAxis::NEff;
  int points_used = 0;
};

// Theoretical exponents for spectrum decay a: risk scales as M_eff^{-(a-1)}
// and N_eff^{-(a-1)/a}.
inline std::pair<double, double> theoretical_exponents(double a) {
  if (a <= 1.0) throw std::invalid_argument("theoretical_exponents: a must be > 1");
  return {-(a - 1.0), -(a - 1.0) / a};
}

// Single-axis fit: grid-search the floor C over {0} and fractions of the
// smallest excess, then ordinary least squares of log(excess - C) on
// log(axis); keep the C with the best log-space R^2. Deterministic, no
// iterative solver.
inline FitResult fit_single_axis(const std::vector<SweepPoint>& points, FitAxis axis) {
  if (points.size() < 5)
    throw std::invalid_argument("fit_single_axis: need at least 5 points");

  std::vector<double> x(points.size()), y(points.size());
  double off_min = std::numeric_limits<double>::infinity();
  double off_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    x[i] = axis == FitAxis::MEff ? points[i].m_eff : points[i].n_eff;
    const double off = axis == FitAxis::MEff ? points[i].n_eff : points[i].m_eff;
    off_min = std::min(off_min, off);
    off_max = std::max(off_max, off);
    y[i] = points[i].mean_excess;
    if (!(y[i] > 0.0))
      throw std::invalid_argument(
          "fit_single_axis: non-positive excess (check the sigma^2/2 subtraction)");
    if (i > 0 && !(x[i] > x[i - 1]))
      throw std::invalid_argument("fit_single_axis: axis values must be strictly increasing");
  }
  if (off_max - off_min > 1e-2 * std::max(std::fabs(off_min), 1e-300))
    throw std::invalid_argument("fit_single_axis: the non-swept axis must stay constant");

  const double y_min = *std::min_element(y.begin(), y.end());
  std::vector<double> floors = {0.0};
  for (int q = 1; q < 20; ++q) floors.push_back(0.05 * q * y_min);

  const double n = static_cast<double>(points.size());
  FitResult best;
  best.axis = axis;
  best.points_used = static_cast<int>(points.size());
  double best_r2 = -std::numeric_limits<double>::infinity();

  std::vector<double> lx(points.size()), ly(points.size());
  for (double floor_c : floors) {
    bool ok = true;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double shifted = y[i] - floor_c;
      if (!(shifted > 0.0)) {
        ok = false;
        break;
      }
      lx[i] = std::log(x[i]);
      ly[i] = std::log(shifted);
    }
    if (!ok) continue;

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      sx += lx[i];
      sy += ly[i];
      sxx += lx[i] * lx[i];
      sxy += lx[i] * ly[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom <= 0.0) continue;
    const double slope = (n * sxy - sx * sy) / denom;
    const double intercept = (sy - slope * sx) / n;

    double ss_res = 0, ss_tot = 0;
    const double y_bar = sy / n;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double pred = intercept + slope * lx[i];
      ss_res += (ly[i] - pred) * (ly[i] - pred);
      ss_tot += (ly[i] - y_bar) * (ly[i] - y_bar);
    }
    const double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
    if (r2 > best_r2) {
      best_r2 = r2;
      best.amplitude = std::exp(intercept);
      best.exponent = slope;
      best.floor = floor_c;
      best.r_squared = r2;
    }
  }
  if (best_r2 == -std::numeric_limits<double>::infinity())
    throw std::runtime_error("fit_single_axis: no admissible floor value");

  double ss_res = 0, ss_tot = 0, mean_y = 0;
  for (double v : y) mean_y += v;
  mean_y /= n;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double pred = best.amplitude * std::pow(x[i], best.exponent) + best.floor;
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
  }
  best.r_squared_linear = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return best;
}

inline double fit_prediction(const FitResult& fit, double axis_value) {
  return fit.amplitude * std::pow(axis_value, fit.exponent) + fit.floor;
}

}  // namespace qsgd
