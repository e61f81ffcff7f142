#ifndef SMOOTHLAB_SMOOTHING_HPP
#define SMOOTHLAB_SMOOTHING_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/errors.hpp"
#include "smoothlab/filtering.hpp"
#include "smoothlab/linalg.hpp"
#include "smoothlab/model.hpp"
#include "smoothlab/parallel.hpp"
#include "smoothlab/polynomial.hpp"
#include "smoothlab/random.hpp"
#include "smoothlab/score.hpp"
#include "smoothlab/sde.hpp"
#include "smoothlab/stats.hpp"

namespace smoothlab {

/// Members of the backward flow; states are kept at `recorded_steps` only
/// (always including the starting node).
struct SmoothingEnsemble {
  TimeGrid grid;
  std::size_t n_members = 0;
  int dim = 0;
  std::vector<std::size_t> recorded_steps;
  /// [record][member][component]
  std::vector<double> states;
  std::string terminal_source;
  std::size_t start_step = 0;
  std::size_t stop_step = 0;

  std::optional<std::size_t> record_of_step(std::size_t step) const {
    auto it = std::find(recorded_steps.begin(), recorded_steps.end(), step);
    if (it == recorded_steps.end()) return std::nullopt;
    return static_cast<std::size_t>(it - recorded_steps.begin());
  }

  bool has_step(std::size_t step) const { return record_of_step(step).has_value(); }

  std::span<const double> snapshot(std::size_t step) const {
    auto r = record_of_step(step);
    if (!r) throw Error(ErrorCode::PreconditionFailed, "ensemble has no record at step " + std::to_string(step));
    const std::size_t stride = n_members * static_cast<std::size_t>(dim);
    return {states.data() + *r * stride, stride};
  }

  std::span<const double> terminal() const { return snapshot(start_step); }

  Vector state(std::size_t step, std::size_t member) const {
    auto snap = snapshot(step);
    Vector x(dim);
    for (int k = 0; k < dim; ++k) x[k] = snap[member * dim + k];
    return x;
  }

  /// Column k of the snapshot at `step`.
  std::vector<double> component(std::size_t step, int k) const {
    auto snap = snapshot(step);
    std::vector<double> out(n_members);
    for (std::size_t j = 0; j < n_members; ++j) out[j] = snap[j * dim + k];
    return out;
  }
};

struct FlowOptions {
  /// Steps to keep; empty keeps every step between start and stop.
  std::vector<std::size_t> recorded_steps;
  Stream noise_stream = Stream::Backward;
  /// Lowest node reached by the flow.
  std::size_t stop_step = 0;
  /// Required to draw terminal states from a grid-mode track.
  std::optional<DensityGrid> terminal_density;
};

/// Inverse-CDF draws from a tabulated 1D density (CDF linear within cells).
inline std::vector<double> sample_from_density(const DensityGrid& density, std::size_t n, const NoiseStream& stream,
                                               std::uint64_t step = 0) {
  std::vector<double> cdf(density.n_nodes(), 0.0);
  for (std::size_t j = 1; j < cdf.size(); ++j)
    cdf[j] = cdf[j - 1] + 0.5 * density.dx() * (std::max(density.values[j - 1], 0.0) + std::max(density.values[j], 0.0));
  const double total = cdf.back();
  if (!(total > 0.0)) throw Error(ErrorCode::MassUnderflow, "cannot sample from a density with zero mass");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = stream.uniform(i, step, 0) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), v);
    std::size_t j = it == cdf.begin() ? 0 : static_cast<std::size_t>(it - cdf.begin()) - 1;
    j = std::min(j, density.n_cells - 1);
    const double span = cdf[j + 1] - cdf[j];
    const double theta = span > 0.0 ? (v - cdf[j]) / span : 0.5;
    out[i] = density.x(j) + std::clamp(theta, 0.0, 1.0) * density.dx();
  }
  return out;
}

/// N draws from the filter law at `node`: Gaussian draw in Gaussian mode,
/// systematic resampling of the stored cloud in particle mode, inverse CDF of
/// `density` in grid mode. Returns the samples and a descriptor.
inline std::pair<std::vector<double>, std::string> sample_filter_law(const FilterTrack& track, std::size_t node,
                                                                     std::size_t n, std::uint64_t seed,
                                                                     const std::optional<DensityGrid>& density = {}) {
  require(n >= 1, ErrorCode::PreconditionFailed, "ensemble size must be >= 1");
  require(node < track.n_nodes(), ErrorCode::GridMismatch, "terminal node outside the filter track");
  const NoiseStream stream(seed, Stream::Terminal);
  switch (track.mode) {
    case FilterMode::Gaussian: {
      const auto& b = track.beliefs[node];
      const int m = static_cast<int>(b.mean.size());
      const Matrix root = psd_sqrt(b.cov);
      std::vector<double> out(n * m);
      Vector xi(m);
      for (std::size_t j = 0; j < n; ++j) {
        stream.normals(j, node, xi);
        const Vector x = b.mean + root * xi;
        for (int k = 0; k < m; ++k) out[j * m + k] = x[k];
      }
      return {std::move(out), "gaussian"};
    }
    case FilterMode::Particle: {
      const ParticleCloud& cloud = track.cloud(node);
      if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "terminal cloud is empty");
      const int m = cloud.dim();
      const auto idx = systematic_resample(cloud.weights(), n, stream.uniform(0, node, 0));
      std::vector<double> out(n * m);
      for (std::size_t j = 0; j < n; ++j)
        for (int k = 0; k < m; ++k) out[j * m + k] = cloud.positions()[idx[j] * m + k];
      return {std::move(out), "particle_resample"};
    }
    case FilterMode::Grid: {
      require(density.has_value(), ErrorCode::PreconditionFailed, "grid-mode terminal sampling needs the density");
      return {sample_from_density(*density, n, stream, node), "grid_inverse_cdf"};
    }
  }
  return {};
}

namespace detail {

inline std::vector<std::size_t> normalized_records(std::vector<std::size_t> steps, std::size_t start, std::size_t stop) {
  if (steps.empty()) {
    for (std::size_t i = stop; i <= start; ++i) steps.push_back(i);
  }
  steps.push_back(start);
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  for (auto s : steps)
    require(s >= stop && s <= start, ErrorCode::PreconditionFailed,
            "recorded step " + std::to_string(s) + " outside the integrated range");
  return steps;
}

}  // namespace detail

/// Iterates backward_step from node `start_step` down to `opt.stop_step`
/// starting at `start_states` (N x m). Member j uses noise path j of
/// `opt.noise_stream`; step from node i draws step index i.
inline SmoothingEnsemble propagate_backward(const ModelSpec& model, const ScoreSource& score, const TimeGrid& grid,
                                            std::span<const double> start_states, std::size_t start_step,
                                            std::uint64_t seed, const FlowOptions& opt = {}) {
  require_same_grid(score.grid(), grid, "backward flow score source");
  const int m = model.dim_state();
  require(!start_states.empty() && start_states.size() % static_cast<std::size_t>(m) == 0, ErrorCode::DimensionMismatch,
          "start states must be N x m");
  require(start_step <= grid.n_steps() && opt.stop_step <= start_step, ErrorCode::PreconditionFailed,
          "backward flow needs stop_step <= start_step <= n_steps");
  const std::size_t N = start_states.size() / m;
  const double h = grid.step();

  SmoothingEnsemble ens{grid, N, m, detail::normalized_records(opt.recorded_steps, start_step, opt.stop_step), {},
                        "given", start_step, opt.stop_step};
  const std::size_t n_records = ens.recorded_steps.size();
  ens.states.assign(n_records * N * m, 0.0);
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> record_at(start_step + 1, npos);
  for (std::size_t r = 0; r < n_records; ++r) record_at[ens.recorded_steps[r]] = r;

  const NoiseStream stream(seed, opt.noise_stream);
  // State-independent diffusion is evaluated once per node.
  std::vector<Matrix> sigma_at;
  if (model.constant_diffusion()) {
    const Vector probe = Vector::Zero(m);
    for (std::size_t i = opt.stop_step; i <= start_step; ++i) sigma_at.push_back(model.diffusion(grid.node(i), probe));
  }
  parallel_for(N, [&](std::size_t begin, std::size_t end) {
    Vector x(m);
    Vector xi(model.dim_noise());
    for (std::size_t j = begin; j < end; ++j) {
      for (int k = 0; k < m; ++k) x[k] = start_states[j * m + k];
      auto store = [&](std::size_t step) {
        if (record_at[step] == npos) return;
        double* dst = ens.states.data() + (record_at[step] * N + j) * m;
        for (int k = 0; k < m; ++k) dst[k] = x[k];
      };
      store(start_step);
      for (std::size_t i = start_step; i > opt.stop_step; --i) {
        try {
          const double u = grid.node(i);
          stream.normals(j, i, xi);
          if (sigma_at.empty()) {
            x = backward_step(x, u, h, model, score.evaluate(i, x), xi);
          } else {
            x = backward_step(x, h, model.drift(u, x), sigma_at[i - opt.stop_step], score.evaluate(i, x), xi);
          }
        } catch (const Error& e) {
          rethrow_with_context(e, "member " + std::to_string(j) + ", node " + std::to_string(i));
        }
        store(i - 1);
      }
    }
  });
  return ens;
}

/// Backward smoothing diffusion: N draws from the terminal filter law, then
/// backward Euler steps with the score evaluated at each member's state.
inline SmoothingEnsemble backward_smoothing_flow(const ModelSpec& model, const ScoreSource& score,
                                                 const FilterTrack& track, const TimeGrid& grid, std::size_t N,
                                                 std::uint64_t seed, const FlowOptions& opt = {}) {
  require_same_grid(track.grid, grid, "backward flow filter track");
  require_same_grid(score.grid(), grid, "backward flow score source");
  const std::size_t n = grid.n_steps();
  auto [terminal, source] = sample_filter_law(track, n, N, seed, opt.terminal_density);
  SmoothingEnsemble ens = propagate_backward(model, score, grid, terminal, n, seed, opt);
  ens.terminal_source = source;
  return ens;
}

/// Per-node smoothed moments from the backward Euler scheme of the RTS
/// equations, plus the transition matrix Phi(s) of the linear backward flow,
/// Phi(t) = I, so that Cov(X_s, X_t) = Phi(s) R_t.
struct RtsTrack {
  TimeGrid grid;
  std::vector<GaussianBelief> beliefs;
  std::vector<Matrix> transition;
};

namespace detail {

/// One backward Euler step of the smoothed moments from node i to i - 1,
/// with the filter belief and coefficients taken at node i.
struct RtsState {
  Vector mean;
  Matrix cov;
  Matrix transition;
};

inline RtsState rts_step(const RtsState& st, const Matrix& A, const Matrix& alpha, const GaussianBelief& filter,
                         double h) {
  const Matrix r_inv = guarded_inverse(filter.cov, ErrorCode::SingularCovariance);
  const Matrix K = A + alpha * r_inv;
  RtsState next;
  next.mean = st.mean - h * (A * st.mean + alpha * (r_inv * (st.mean - filter.mean)));
  next.cov = symmetrized(st.cov - h * (K * st.cov + st.cov * K.transpose() - alpha));
  clamp_psd(next.cov);
  next.transition = st.transition - h * (K * st.transition);
  return next;
}

}  // namespace detail

inline RtsTrack rts_smoother(const FilterTrack& track, const ModelSpec& model, const TimeGrid& grid) {
  require(model.is_linear_gaussian(), ErrorCode::PreconditionFailed, "rts_smoother needs a linear-Gaussian model");
  require(track.mode == FilterMode::Gaussian, ErrorCode::PreconditionFailed, "rts_smoother needs a Gaussian track");
  require_same_grid(track.grid, grid, "rts_smoother");
  const auto& lg = model.linear();
  const std::size_t n = grid.n_steps();
  const double h = grid.step();
  const int m = model.dim_state();

  RtsTrack out{grid, std::vector<GaussianBelief>(grid.n_nodes()), std::vector<Matrix>(grid.n_nodes())};
  detail::RtsState st{track.beliefs[n].mean, track.beliefs[n].cov, Matrix::Identity(m, m)};
  out.beliefs[n] = {st.mean, st.cov};
  out.transition[n] = st.transition;
  for (std::size_t i = n; i >= 1; --i) {
    const double u = grid.node(i);
    const Matrix S = lg.Sigma(u);
    try {
      st = detail::rts_step(st, lg.A(u), symmetrized(S * S.transpose()), track.beliefs[i], h);
    } catch (const Error& e) {
      rethrow_with_context(e, "rts node " + std::to_string(i));
    }
    out.beliefs[i - 1] = {st.mean, st.cov};
    out.transition[i - 1] = st.transition;
  }
  return out;
}

/// Drift of the time-reversed signal at reversed time s:
/// p_{t-s}^{-1} div_alpha(p_{t-s})(x) - a_{t-s}(x), with the density score
/// taken from `density_score` at the node t - s.
inline Vector time_reversal_drift(const ModelSpec& model, const ScoreSource& density_score, double t_horizon,
                                  double s, const Vector& x) {
  require(model.null_sensor(), ErrorCode::PreconditionFailed, "time reversal needs b = 0");
  const double u = t_horizon - s;
  const std::size_t node = density_score.grid().require_node(u);
  return backward_drift(model, density_score.grid().node(node), x, density_score.evaluate(node, x));
}

struct SemigroupOptions {
  double z_threshold = 3.0;
  /// Reuse the direct run's noise on the t -> u segment.
  bool common_random_numbers = false;
};

struct SemigroupReport {
  std::vector<MomentRow> rows;
  double max_abs_z = 0.0;
  /// Largest member-wise difference between the two s-states.
  double max_state_difference = 0.0;
  bool pass = false;
};

/// Flow t -> s directly and as (t -> u, restart noise, u -> s), from shared
/// terminal draws; compares the two s-marginals.
inline SemigroupReport semigroup_check(const ModelSpec& model, const ScoreSource& score, const FilterTrack& track,
                                       double t, double u, double s, std::size_t N, std::uint64_t seed,
                                       const SemigroupOptions& opt = {}) {
  const TimeGrid& grid = track.grid;
  require_same_grid(score.grid(), grid, "semigroup_check");
  const std::size_t it = grid.require_node(t);
  const std::size_t iu = grid.require_node(u);
  const std::size_t is = grid.require_node(s);
  require(is < iu && iu < it, ErrorCode::PreconditionFailed, "semigroup_check needs s < u < t");
  const int m = model.dim_state();

  auto [terminal, source] = sample_filter_law(track, it, N, seed);

  FlowOptions direct_opt;
  direct_opt.stop_step = is;
  direct_opt.recorded_steps = {is};
  const auto direct = propagate_backward(model, score, grid, terminal, it, seed, direct_opt);

  FlowOptions first_opt;
  first_opt.stop_step = iu;
  first_opt.recorded_steps = {iu};
  first_opt.noise_stream = opt.common_random_numbers ? Stream::Backward : Stream::BackwardAlternate;
  const auto first = propagate_backward(model, score, grid, terminal, it, seed, first_opt);
  const auto mid = first.snapshot(iu);

  FlowOptions second_opt;
  second_opt.stop_step = is;
  second_opt.recorded_steps = {is};
  second_opt.noise_stream = Stream::BackwardRestart;
  const auto composed = propagate_backward(model, score, grid, std::vector<double>(mid.begin(), mid.end()), iu, seed,
                                           second_opt);

  SemigroupReport rep;
  const auto a = direct.snapshot(is);
  const auto b = composed.snapshot(is);
  for (std::size_t i = 0; i < a.size(); ++i)
    rep.max_state_difference = std::max(rep.max_state_difference, std::abs(a[i] - b[i]));
  rep.rows = compare_samples(a, b, m, opt.z_threshold);
  rep.pass = true;
  for (const auto& r : rep.rows) {
    rep.max_abs_z = std::max(rep.max_abs_z, std::abs(r.z));
    rep.pass = rep.pass && r.pass;
  }
  return rep;
}

struct DualityReport {
  double monte_carlo = 0.0;
  double standard_error = 0.0;
  double reference = 0.0;
  double z = 0.0;
  bool pass = false;
};

namespace detail {

/// f(P z) written as a quadratic form in the stacked vector z.
inline void lift_quadratic(const QuadraticForm& q, int m, int offset, int total, double& c, Eigen::VectorXd& g,
                           Eigen::MatrixXd& Q) {
  c = q.c;
  g = Eigen::VectorXd::Zero(total);
  Q = Eigen::MatrixXd::Zero(total, total);
  g.segment(offset, m) = q.g;
  Q.block(offset, offset, m, m) = symmetrized(q.Q);
}

/// E[F G] for quadratic forms F, G of z ~ N(mu, Sigma).
inline double gaussian_product_expectation(double c1, const Eigen::VectorXd& g1, const Eigen::MatrixXd& Q1, double c2,
                                           const Eigen::VectorXd& g2, const Eigen::MatrixXd& Q2,
                                           const Eigen::VectorXd& mu, const Eigen::MatrixXd& Sigma) {
  const double f0 = c1 + g1.dot(mu) + mu.dot(Q1 * mu);
  const double h0 = c2 + g2.dot(mu) + mu.dot(Q2 * mu);
  const Eigen::VectorXd f1 = g1 + 2.0 * Q1 * mu;
  const Eigen::VectorXd h1 = g2 + 2.0 * Q2 * mu;
  const double t1 = (Q1 * Sigma).trace();
  const double t2 = (Q2 * Sigma).trace();
  return f0 * h0 + f0 * t2 + h0 * t1 + f1.dot(Sigma * h1) + t1 * t2 + 2.0 * (Q1 * Sigma * Q2 * Sigma).trace();
}

}  // namespace detail

/// Monte Carlo E[f(X_s) g(X_t)] over ensemble pairs (s-state, terminal state)
/// against the joint Gaussian smoothing law from the RTS track.
inline DualityReport duality_check(const ModelSpec& model, const FilterTrack& track, const SmoothingEnsemble& ens,
                                   const Polynomial& f, const Polynomial& g, std::size_t s_step,
                                   double z_threshold = 3.0) {
  const QuadraticForm qf = to_quadratic(f);
  const QuadraticForm qg = to_quadratic(g);
  require(model.is_linear_gaussian() && track.mode == FilterMode::Gaussian, ErrorCode::PreconditionFailed,
          "duality_check needs the linear-Gaussian mode");
  require_same_grid(track.grid, ens.grid, "duality_check");
  const int m = model.dim_state();
  require(f.dim == m && g.dim == m, ErrorCode::DimensionMismatch, "test functions have the wrong dimension");
  const std::size_t n = ens.grid.n_steps();
  require(ens.start_step == n, ErrorCode::PreconditionFailed, "duality_check needs an ensemble started at t");

  const auto xs = ens.snapshot(s_step);
  const auto xt = ens.snapshot(n);
  const std::size_t N = ens.n_members;
  std::vector<double> prod(N);
  Vector a(m), b(m);
  for (std::size_t j = 0; j < N; ++j) {
    for (int k = 0; k < m; ++k) {
      a[k] = xs[j * m + k];
      b[k] = xt[j * m + k];
    }
    prod[j] = qf.value(a) * qg.value(b);
  }
  double mean = 0.0;
  for (double p : prod) mean += p;
  mean /= static_cast<double>(N);
  double var = 0.0;
  for (double p : prod) var += (p - mean) * (p - mean);
  var /= static_cast<double>(std::max<std::size_t>(N, 2) - 1);

  const RtsTrack rts = rts_smoother(track, model, track.grid);
  const auto& bs = rts.beliefs[s_step];
  const auto& bt = rts.beliefs[n];
  Eigen::VectorXd mu(2 * m);
  mu << Eigen::VectorXd(bs.mean), Eigen::VectorXd(bt.mean);
  Eigen::MatrixXd Sigma(2 * m, 2 * m);
  const Matrix cross = rts.transition[s_step] * bt.cov;
  Sigma.topLeftCorner(m, m) = bs.cov;
  Sigma.topRightCorner(m, m) = cross;
  Sigma.bottomLeftCorner(m, m) = cross.transpose();
  Sigma.bottomRightCorner(m, m) = bt.cov;

  double c1 = 0.0, c2 = 0.0;
  Eigen::VectorXd g1, g2;
  Eigen::MatrixXd Q1, Q2;
  detail::lift_quadratic(qf, m, 0, 2 * m, c1, g1, Q1);
  detail::lift_quadratic(qg, m, m, 2 * m, c2, g2, Q2);

  DualityReport rep;
  rep.monte_carlo = mean;
  rep.standard_error = std::sqrt(var / static_cast<double>(N));
  rep.reference = detail::gaussian_product_expectation(c1, g1, Q1, c2, g2, Q2, mu, Sigma);
  const MomentRow row = make_row("duality", rep.monte_carlo, rep.reference, rep.standard_error, z_threshold);
  rep.z = row.z;
  rep.pass = row.pass;
  return rep;
}

namespace detail {

/// p(x), p'(x), p''(x) of a univariate polynomial.
inline std::array<double, 3> univariate_jet(const Polynomial& f, double x) {
  require(f.dim == 1, ErrorCode::DimensionMismatch, "probe function must be univariate");
  std::array<double, 3> d{0.0, 0.0, 0.0};
  for (const auto& t : f.terms) {
    const int k = t.powers[0];
    d[0] += t.coeff * std::pow(x, k);
    if (k >= 1) d[1] += t.coeff * k * std::pow(x, k - 1);
    if (k >= 2) d[2] += t.coeff * k * (k - 1) * std::pow(x, k - 2);
  }
  return d;
}

}  // namespace detail

/// The smoothing generator applied to f at x, for a tabulated density p at
/// time u, in two forms:
///   expanded:   (-a + p^{-1} d(alpha p)) f' + 1/2 alpha f''
///   divergence: -(a f' + 1/2 alpha f'') + p^{-1} d(p alpha f')
/// Both use central differences at the mesh nodes, linearly interpolated to x.
inline std::pair<double, double> operator_consistency(const ModelSpec& model, double u, const DensityGrid& density,
                                                      const Polynomial& f, double x,
                                                      double floor_fraction = kDefaultFloorFraction) {
  require(model.dim_state() == 1, ErrorCode::DimensionMismatch, "operator_consistency is one-dimensional");
  const auto alpha = alpha_on_grid(model, u, density);
  const GridScoreTable table(density, alpha, floor_fraction, kDefaultScoreClip * 1e6);
  const double score = table.evaluate(x);

  const auto jet = detail::univariate_jet(f, x);
  const double a = model.drift(u, scalar_vector(x))[0];
  const double al = model.alpha(u, scalar_vector(x))(0, 0);
  const double expanded = (-a + score) * jet[1] + 0.5 * al * jet[2];

  // p^{-1} d(p alpha f') at the nodes bracketing x.
  const std::size_t n = density.n_nodes();
  const double dx = density.dx();
  auto flux = [&](std::size_t j) { return density.values[j] * alpha[j] * detail::univariate_jet(f, density.x(j))[1]; };
  auto div_at = [&](std::size_t j) {
    double d = 0.0;
    if (j == 0) {
      d = (-3.0 * flux(0) + 4.0 * flux(1) - flux(2)) / (2.0 * dx);
    } else if (j == n - 1) {
      d = (3.0 * flux(n - 1) - 4.0 * flux(n - 2) + flux(n - 3)) / (2.0 * dx);
    } else {
      d = (flux(j + 1) - flux(j - 1)) / (2.0 * dx);
    }
    return d / density.values[j];
  };
  const double pos = (x - density.x_min) / dx;
  const auto j = std::min(static_cast<std::size_t>(pos), density.n_cells - 1);
  const double theta = pos - static_cast<double>(j);
  const double div = (1.0 - theta) * div_at(j) + theta * div_at(j + 1);
  const double divergence = -(a * jet[1] + 0.5 * al * jet[2]) + div;
  return {expanded, divergence};
}

/// Mean and covariance of the ensemble snapshot at `step`.
inline GaussianBelief ensemble_moments(const SmoothingEnsemble& ens, std::size_t step) {
  const auto s = sample_moments(ens.snapshot(step), ens.dim);
  return {s.mean, s.cov};
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_SMOOTHING_HPP
