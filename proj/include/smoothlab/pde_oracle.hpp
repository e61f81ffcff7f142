#ifndef SMOOTHLAB_PDE_ORACLE_HPP
#define SMOOTHLAB_PDE_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/errors.hpp"
#include "smoothlab/filtering.hpp"
#include "smoothlab/model.hpp"
#include "smoothlab/score.hpp"
#include "smoothlab/sde.hpp"

namespace smoothlab {

struct PdeOptions {
  /// Diffusion CFL bound alpha dt / dx^2 <= cfl.
  double cfl = 0.5;
  bool auto_substep = true;
  std::size_t max_substeps = 1'000'000;
  double floor_fraction = kDefaultFloorFraction;
  double score_clip = kDefaultScoreClip;
};

/// Smallest spatial domain covering mean +- width * sd over every belief.
struct SpatialDomain {
  double x_min;
  double x_max;
  std::size_t n_cells;
};

inline SpatialDomain auto_domain(std::span<const GaussianBelief> beliefs, double dx, double width = 8.0) {
  require(dx > 0.0 && !beliefs.empty(), ErrorCode::PreconditionFailed, "auto_domain needs beliefs and dx > 0");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& b : beliefs) {
    const double sd = std::sqrt(std::max(b.cov(0, 0), 0.0));
    lo = std::min(lo, b.mean[0] - width * sd);
    hi = std::max(hi, b.mean[0] + width * sd);
  }
  lo = std::floor(lo / dx) * dx;
  const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / dx - 1e-9));
  return {lo, lo + static_cast<double>(std::max<std::size_t>(n, 2)) * dx, std::max<std::size_t>(n, 2)};
}

namespace detail {

/// Substeps needed to cover `h` under the diffusion and advection limits.
inline std::size_t required_substeps(double h, double dx, std::span<const double> drift,
                                     std::span<const double> alpha, const PdeOptions& opt) {
  double a_max = 0.0;
  double c_max = 0.0;
  for (double a : alpha) a_max = std::max(a_max, std::abs(a));
  for (double c : drift) c_max = std::max(c_max, std::abs(c));
  double dt_max = std::numeric_limits<double>::infinity();
  if (a_max > 0.0) dt_max = std::min(dt_max, opt.cfl * dx * dx / a_max);
  if (c_max > 0.0) dt_max = std::min(dt_max, dx / c_max);
  if (!std::isfinite(dt_max)) return 1;
  return static_cast<std::size_t>(std::max(1.0, std::ceil(h / dt_max - 1e-9)));
}

/// Conservative vertex-centred finite-volume steps of
///   dp/dt = -d/dx(c p) + 1/2 d^2/dx^2 (alpha p)
/// with zero-flux ends. Node j owns the dual cell of trapezoid width, so the
/// trapezoid mass is conserved exactly (up to rounding).
inline void fv_advance(std::vector<double>& p, double dx, std::span<const double> drift,
                       std::span<const double> alpha, double h, const PdeOptions& opt) {
  const std::size_t n = p.size();
  const std::size_t sub = required_substeps(h, dx, drift, alpha, opt);
  if (sub > 1 && !opt.auto_substep)
    throw Error(ErrorCode::CflViolation, "step needs " + std::to_string(sub) + " substeps");
  if (sub > opt.max_substeps)
    throw Error(ErrorCode::CflViolation, "step needs " + std::to_string(sub) + " substeps, above the configured maximum");
  const double dt = h / static_cast<double>(sub);
  std::vector<double> flux(n - 1);
  for (std::size_t s = 0; s < sub; ++s) {
    for (std::size_t j = 0; j + 1 < n; ++j) {
      flux[j] = 0.5 * (drift[j] * p[j] + drift[j + 1] * p[j + 1]) -
                (alpha[j + 1] * p[j + 1] - alpha[j] * p[j]) / (2.0 * dx);
    }
    p[0] -= dt / (0.5 * dx) * flux[0];
    for (std::size_t j = 1; j + 1 < n; ++j) p[j] += dt / dx * (flux[j - 1] - flux[j]);
    p[n - 1] += dt / (0.5 * dx) * flux[n - 2];
  }
}

/// Zeroes round-off negatives; larger negative values are an error.
inline void clamp_negative(std::vector<double>& p, const std::string& where) {
  double top = 0.0;
  for (double v : p) top = std::max(top, v);
  const double tol = 1e-10 * std::max(top, 1.0);
  for (double& v : p) {
    if (v < -tol) throw Error(ErrorCode::NegativeDensity, "density reached " + std::to_string(v) + " at " + where);
    if (v < 0.0) v = 0.0;
  }
}

inline void fill_coefficients(const ModelSpec& model, double u, const DensityGrid& g, std::vector<double>& drift,
                              std::vector<double>& alpha) {
  drift.resize(g.n_nodes());
  alpha.resize(g.n_nodes());
  for (std::size_t j = 0; j < g.n_nodes(); ++j) {
    const Vector x = scalar_vector(g.x(j));
    drift[j] = model.drift(u, x)[0];
    alpha[j] = model.alpha(u, x)(0, 0);
  }
}

}  // namespace detail

/// Forward Kolmogorov equation for a signal with null sensor; one density per node.
inline std::vector<DensityGrid> solve_fokker_planck_1d(const ModelSpec& model, const DensityGrid& initial,
                                                       const TimeGrid& grid, const PdeOptions& opt = {}) {
  require(model.dim_state() == 1, ErrorCode::DimensionMismatch, "Fokker-Planck solver is one-dimensional");
  require(model.null_sensor(), ErrorCode::PreconditionFailed, "solve_fokker_planck_1d needs b == 0");
  std::vector<DensityGrid> out;
  out.reserve(grid.n_nodes());
  DensityGrid p = initial;
  p.normalize();
  out.push_back(p);
  std::vector<double> drift;
  std::vector<double> alpha;
  for (std::size_t i = 0; i < grid.n_steps(); ++i) {
    detail::fill_coefficients(model, grid.node(i), p, drift, alpha);
    detail::fv_advance(p.values, p.dx(), drift, alpha, grid.step(), opt);
    detail::clamp_negative(p.values, "step " + std::to_string(i + 1));
    p.normalize();
    out.push_back(p);
  }
  return out;
}

struct ZakaiResult {
  std::vector<DensityGrid> densities;
  /// Cumulative log gamma_u(1) per node.
  std::vector<double> log_normalizer;
};

/// Grid filter: Fokker-Planck prediction followed by the multiplicative
/// likelihood exp(b beta^{-1} dY - 1/2 b^2 beta^{-1} h), renormalized.
inline ZakaiResult solve_zakai_1d(const ModelSpec& model, std::span<const Vector> incs, const DensityGrid& initial,
                                  const TimeGrid& grid, const PdeOptions& opt = {}) {
  require(model.dim_state() == 1 && model.dim_obs() == 1, ErrorCode::DimensionMismatch,
          "Zakai grid filter is one-dimensional");
  detail::check_increments(model, incs, grid);
  ZakaiResult res;
  res.densities.reserve(grid.n_nodes());
  DensityGrid p = initial;
  p.normalize();
  res.densities.push_back(p);
  res.log_normalizer.push_back(0.0);
  double log_gamma = 0.0;
  std::vector<double> drift;
  std::vector<double> alpha;
  const double h = grid.step();
  for (std::size_t i = 0; i < grid.n_steps(); ++i) {
    const double u = grid.node(i);
    detail::fill_coefficients(model, u, p, drift, alpha);
    detail::fv_advance(p.values, p.dx(), drift, alpha, h, opt);
    detail::clamp_negative(p.values, "step " + std::to_string(i + 1));
    const double before = p.mass();
    const double beta_inv = model.beta_inverse(u)(0, 0);
    const double dy = incs[i][0];
    for (std::size_t j = 0; j < p.n_nodes(); ++j) {
      const double b = model.sensor(u, scalar_vector(p.x(j)))[0];
      p.values[j] *= std::exp(b * beta_inv * dy - 0.5 * b * b * beta_inv * h);
    }
    const double after = p.mass();
    if (!(after > 0.0) || !std::isfinite(after))
      throw Error(ErrorCode::MassUnderflow, "unnormalized filter mass underflowed at step " + std::to_string(i + 1));
    log_gamma += std::log(after / before);
    p.normalize();
    res.densities.push_back(p);
    res.log_normalizer.push_back(log_gamma);
  }
  return res;
}

/// Mean/variance per node of a density sequence, as beliefs.
inline std::vector<GaussianBelief> density_moments(const std::vector<DensityGrid>& densities) {
  std::vector<GaussianBelief> out;
  out.reserve(densities.size());
  for (const auto& d : densities) out.push_back({scalar_vector(d.mean()), scalar_matrix(d.variance())});
  return out;
}

/// Filter track (Grid mode) from a Zakai solution: moments, predicted
/// observation and log-normalizer per node.
inline FilterTrack zakai_track(const ModelSpec& model, const TimeGrid& grid, const ZakaiResult& z) {
  FilterTrack t{grid};
  t.mode = FilterMode::Grid;
  t.beliefs = density_moments(z.densities);
  t.log_normalizer = z.log_normalizer;
  for (std::size_t i = 0; i < z.densities.size(); ++i) {
    const double u = grid.node(i);
    t.predicted_obs.push_back(
        scalar_vector(z.densities[i].expectation([&](double x) { return model.sensor(u, scalar_vector(x))[0]; })));
  }
  return t;
}

struct BackwardDensityResult {
  /// densities[k] approximates the smoothing law at node k; the last entry is
  /// the terminal density.
  std::vector<DensityGrid> densities;
  /// Mass removed by masking below the filter-density floor, per node.
  std::vector<double> masked_mass;
};

/// Backward conditional Fokker-Planck flow: from the terminal filter density,
/// evolves the smoothing density towards earlier nodes with drift
/// -a + p_u^{-1} d/dx(alpha p_u) and diffusion alpha, i.e. the adjoint of the
/// backward-diffusion generator, in conservative form.
inline BackwardDensityResult solve_backward_smoothing_density_1d(const ModelSpec& model,
                                                                  const std::vector<DensityGrid>& filter_densities,
                                                                  const TimeGrid& grid, const DensityGrid& terminal,
                                                                  const PdeOptions& opt = {}) {
  require(model.dim_state() == 1, ErrorCode::DimensionMismatch, "backward density solver is one-dimensional");
  require(filter_densities.size() == grid.n_nodes(), ErrorCode::GridMismatch, "one filter density per node required");
  for (const auto& d : filter_densities)
    require(d.same_mesh(terminal), ErrorCode::GridMismatch, "filter densities and terminal density differ in mesh");

  const std::size_t n = grid.n_steps();
  BackwardDensityResult res;
  res.densities.resize(grid.n_nodes());
  res.masked_mass.assign(grid.n_nodes(), 0.0);
  DensityGrid q = terminal;
  q.normalize();
  res.densities[n] = q;

  std::vector<double> drift;
  std::vector<double> alpha;
  for (std::size_t k = n; k >= 1; --k) {
    const double u = grid.node(k);
    const DensityGrid& p = filter_densities[k];
    detail::fill_coefficients(model, u, p, drift, alpha);
    const GridScoreTable table(p, alpha, opt.floor_fraction, opt.score_clip);
    for (std::size_t j = 0; j < drift.size(); ++j) drift[j] = -drift[j] + table.node_scores()[j];
    detail::fv_advance(q.values, q.dx(), drift, alpha, grid.step(), opt);
    detail::clamp_negative(q.values, "backward node " + std::to_string(k - 1));

    const DensityGrid& p_next = filter_densities[k - 1];
    const double floor = opt.floor_fraction * p_next.max_value();
    const double total = q.mass();
    double removed = 0.0;
    for (std::size_t j = 0; j < q.n_nodes(); ++j) {
      if (p_next.values[j] < floor) {
        removed += q.weight(j) * q.values[j];
        q.values[j] = 0.0;
      }
    }
    res.masked_mass[k - 1] = total > 0.0 ? removed / total : 0.0;
    q.normalize();
    res.densities[k - 1] = q;
  }
  return res;
}

/// Samples the density at `nodes` of a finer mesh onto the coarse mesh
/// (meshes share end points and the fine cell count is a multiple).
inline DensityGrid restrict_to(const DensityGrid& fine, const DensityGrid& coarse) {
  require(fine.x_min == coarse.x_min && fine.x_max == coarse.x_max && fine.n_cells % coarse.n_cells == 0,
          ErrorCode::GridMismatch, "meshes are not nested");
  const std::size_t ratio = fine.n_cells / coarse.n_cells;
  DensityGrid out = coarse.like();
  for (std::size_t j = 0; j < out.n_nodes(); ++j) out.values[j] = fine.values[j * ratio];
  return out;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_PDE_ORACLE_HPP
