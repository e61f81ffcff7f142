#ifndef SMOOTHLAB_DENSITY_GRID_HPP
#define SMOOTHLAB_DENSITY_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "smoothlab/errors.hpp"

namespace smoothlab {

/// One-dimensional density tabulated at n_cells + 1 equispaced nodes.
struct DensityGrid {
  double x_min = 0.0;
  double x_max = 1.0;
  std::size_t n_cells = 1;
  std::vector<double> values;

  static DensityGrid tabulate(double x_min, double x_max, std::size_t n_cells,
                              const std::function<double(double)>& p) {
    require(x_max > x_min && n_cells >= 2, ErrorCode::PreconditionFailed, "density grid needs x_max > x_min, n_cells >= 2");
    DensityGrid g{x_min, x_max, n_cells, std::vector<double>(n_cells + 1)};
    for (std::size_t j = 0; j <= n_cells; ++j) g.values[j] = p(g.x(j));
    return g;
  }

  /// Same spatial mesh, zero values.
  DensityGrid like() const { return {x_min, x_max, n_cells, std::vector<double>(values.size(), 0.0)}; }

  std::size_t n_nodes() const { return n_cells + 1; }
  double dx() const { return (x_max - x_min) / static_cast<double>(n_cells); }
  double x(std::size_t j) const {
    return j == n_cells ? x_max : x_min + static_cast<double>(j) * dx();
  }

  /// Trapezoid weight of node j.
  double weight(std::size_t j) const { return (j == 0 || j == n_cells) ? 0.5 * dx() : dx(); }

  double mass() const {
    double s = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) s += weight(j) * values[j];
    return s;
  }

  /// Scales to unit trapezoid mass; returns the mass before scaling.
  double normalize() {
    const double m = mass();
    if (!(m > 0.0) || !std::isfinite(m)) throw Error(ErrorCode::MassUnderflow, "density mass is not positive");
    for (double& v : values) v /= m;
    return m;
  }

  double expectation(const std::function<double(double)>& f) const {
    double s = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) s += weight(j) * values[j] * f(x(j));
    return s / mass();
  }

  double mean() const { return expectation([](double v) { return v; }); }
  double variance() const {
    const double mu = mean();
    return expectation([mu](double v) { return (v - mu) * (v - mu); });
  }

  double max_value() const {
    double top = 0.0;
    for (double v : values) top = std::max(top, v);
    return top;
  }

  /// Piecewise-linear interpolation; 0 outside [x_min, x_max].
  double value_at(double xq) const {
    if (!(xq >= x_min && xq <= x_max)) return 0.0;
    const double pos = (xq - x_min) / dx();
    const auto j = std::min(static_cast<std::size_t>(pos), n_cells - 1);
    const double theta = pos - static_cast<double>(j);
    return (1.0 - theta) * values[j] + theta * values[j + 1];
  }

  bool same_mesh(const DensityGrid& o) const {
    return x_min == o.x_min && x_max == o.x_max && n_cells == o.n_cells;
  }
};

inline double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline DensityGrid gaussian_density(double x_min, double x_max, std::size_t n_cells, double mean, double var) {
  return DensityGrid::tabulate(x_min, x_max, n_cells, [=](double x) { return normal_pdf(x, mean, var); });
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_DENSITY_GRID_HPP
