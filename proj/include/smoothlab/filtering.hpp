#ifndef SMOOTHLAB_FILTERING_HPP
#define SMOOTHLAB_FILTERING_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smoothlab/errors.hpp"
#include "smoothlab/linalg.hpp"
#include "smoothlab/model.hpp"
#include "smoothlab/parallel.hpp"
#include "smoothlab/polynomial.hpp"
#include "smoothlab/random.hpp"
#include "smoothlab/sde.hpp"

namespace smoothlab {

struct GaussianBelief {
  Vector mean;
  Matrix cov;
};

/// Weighted sample approximating a filtering law; positions are N x m, row-major.
class ParticleCloud {
 public:
  ParticleCloud() = default;
  ParticleCloud(int dim, std::vector<double> positions, std::vector<double> log_weights)
      : dim_(dim), positions_(std::move(positions)), log_weights_(std::move(log_weights)) {
    require(dim_ >= 1 && dim_ <= kMaxDim, ErrorCode::DimensionMismatch, "cloud dimension");
    require(positions_.size() == log_weights_.size() * static_cast<std::size_t>(dim_),
            ErrorCode::DimensionMismatch, "positions and weights disagree in count");
  }

  /// Equally weighted cloud.
  static ParticleCloud uniform(int dim, std::vector<double> positions) {
    const std::size_t n = positions.size() / static_cast<std::size_t>(dim);
    return ParticleCloud(dim, std::move(positions), std::vector<double>(n, 0.0));
  }

  int dim() const { return dim_; }
  std::size_t size() const { return log_weights_.size(); }
  bool empty() const { return log_weights_.empty(); }
  std::span<const double> positions() const { return positions_; }
  std::span<const double> log_weights() const { return log_weights_; }

  Vector position(std::size_t i) const {
    Vector x(dim_);
    for (int k = 0; k < dim_; ++k) x[k] = positions_[i * dim_ + k];
    return x;
  }

  /// Normalized weights via log-sum-exp; throws WeightCollapse when no
  /// weight is finite.
  std::vector<double> weights() const {
    require(!empty(), ErrorCode::EmptyCloud, "particle cloud is empty");
    double top = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights_)
      if (std::isfinite(lw)) top = std::max(top, lw);
    if (!std::isfinite(top)) throw Error(ErrorCode::WeightCollapse, "all particle weights underflowed");
    std::vector<double> w(size());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = std::isfinite(log_weights_[i]) ? std::exp(log_weights_[i] - top) : 0.0;
      sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
  }

  double ess() const {
    const auto w = weights();
    double s2 = 0.0;
    for (double v : w) s2 += v * v;
    return std::clamp(1.0 / s2, 1.0, static_cast<double>(size()));
  }

  /// Weighted mean and (biased, weight-normalized) covariance.
  GaussianBelief moments() const {
    const auto w = weights();
    Vector mean = Vector::Zero(dim_);
    for (std::size_t i = 0; i < size(); ++i) mean += w[i] * position(i);
    Matrix cov = Matrix::Zero(dim_, dim_);
    for (std::size_t i = 0; i < size(); ++i) {
      const Vector d = position(i) - mean;
      cov += w[i] * d * d.transpose();
    }
    return {mean, symmetrized(cov)};
  }

 private:
  int dim_ = 1;
  std::vector<double> positions_;
  std::vector<double> log_weights_;
};

/// Indices selected by systematic resampling with offset u in [0, 1).
inline std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t n_out,
                                                    double u) {
  std::vector<std::size_t> idx(n_out);
  double cumulative = weights.empty() ? 0.0 : weights[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < n_out; ++k) {
    const double target = (u + static_cast<double>(k)) / static_cast<double>(n_out);
    while (target > cumulative && j + 1 < weights.size()) cumulative += weights[++j];
    idx[k] = j;
  }
  return idx;
}

enum class FilterMode { Gaussian, Particle, Grid };

/// Filtering law along a grid: per-node moments (exact or fitted), the
/// predicted observation pi_u(b_u), and the cumulative log gamma_u(1).
struct FilterTrack {
  explicit FilterTrack(TimeGrid g) : grid(std::move(g)) {}

  TimeGrid grid;
  FilterMode mode = FilterMode::Gaussian;
  std::vector<GaussianBelief> beliefs;
  std::vector<Vector> predicted_obs;
  std::vector<double> log_normalizer;
  /// Particle mode diagnostics (pre-resampling, per node).
  std::vector<double> ess;
  std::vector<double> weight_sum_error;
  std::vector<std::size_t> resample_steps;
  /// Particle mode: clouds kept at selected nodes (the terminal node always).
  std::vector<std::optional<ParticleCloud>> clouds;
  /// Largest negative eigenvalue removed by the PSD clamp (Gaussian mode).
  double max_psd_clamp = 0.0;

  std::size_t n_nodes() const { return beliefs.size(); }
  const GaussianBelief& terminal() const { return beliefs.back(); }
  const ParticleCloud& cloud(std::size_t node) const {
    require(node < clouds.size() && clouds[node].has_value(), ErrorCode::PreconditionFailed,
            "no particle cloud stored at node " + std::to_string(node));
    return *clouds[node];
  }
  bool has_cloud(std::size_t node) const { return node < clouds.size() && clouds[node].has_value(); }
};

/// A R + R A' + alpha - R B' beta^{-1} B R, symmetrized.
inline Matrix riccati_rhs(const Matrix& A, const Matrix& alpha, const Matrix& B, const Matrix& beta,
                          const Matrix& R) {
  require(A.rows() == R.rows() && alpha.rows() == R.rows() && B.cols() == R.rows() &&
              beta.rows() == B.rows(),
          ErrorCode::DimensionMismatch, "riccati_rhs: incompatible shapes");
  const Matrix beta_inv = guarded_inverse(beta, ErrorCode::SingularNoise);
  return symmetrized(A * R + R * A.transpose() + alpha - R * B.transpose() * beta_inv * B * R);
}

namespace detail {

inline void check_increments(const ModelSpec& model, std::span<const Vector> incs, const TimeGrid& grid) {
  require(incs.size() == grid.n_steps(), ErrorCode::DimensionMismatch,
          "expected " + std::to_string(grid.n_steps()) + " observation increments, got " +
              std::to_string(incs.size()));
  for (const auto& dy : incs)
    require(dy.size() == model.dim_obs(), ErrorCode::DimensionMismatch,
            "observation increment has wrong length");
}

}  // namespace detail

/// Euler scheme for the Kalman-Bucy filter and Riccati equation.
inline FilterTrack kalman_bucy_solve(const ModelSpec& model, std::span<const Vector> incs,
                                     const TimeGrid& grid) {
  const auto& lg = model.linear();
  detail::check_increments(model, incs, grid);
  const double h = grid.step();
  FilterTrack track{grid};
  track.mode = FilterMode::Gaussian;
  track.beliefs.reserve(grid.n_nodes());

  Vector mean = lg.initial_mean;
  Matrix R = symmetrized(lg.initial_cov);
  double log_gamma = 0.0;
  for (std::size_t i = 0; i <= grid.n_steps(); ++i) {
    const double u = grid.node(i);
    const Matrix B = lg.B(u);
    track.beliefs.push_back({mean, R});
    track.predicted_obs.push_back(B * mean);
    track.log_normalizer.push_back(log_gamma);
    if (i == grid.n_steps()) break;

    const Matrix A = lg.A(u);
    const Matrix S = lg.Sigma(u);
    const Matrix alpha = symmetrized(S * S.transpose());
    const Matrix beta_inv = model.beta_inverse(u);
    const Vector& dy = incs[i];
    const Vector pib = B * mean;
    log_gamma += pib.dot(beta_inv * dy) - 0.5 * pib.dot(beta_inv * pib) * h;

    const Vector next_mean = mean + A * mean * h + R * B.transpose() * beta_inv * (dy - B * mean * h);
    Matrix next_R =
        R + symmetrized(A * R + R * A.transpose() + alpha - R * B.transpose() * beta_inv * B * R) * h;
    track.max_psd_clamp = std::max(track.max_psd_clamp, clamp_psd(next_R));
    require_finite(next_mean, [&] { return "Kalman mean, step " + std::to_string(i + 1); });
    require(next_R.allFinite(), ErrorCode::NonFiniteState, "Riccati solution diverged");
    mean = next_mean;
    R = next_R;
  }
  return track;
}

/// Prior moment ODEs m' = A m, R' = A R + R A' + alpha (Euler), for comparison
/// with the filter when B = 0.
inline std::vector<GaussianBelief> prior_moments(const ModelSpec& model, const TimeGrid& grid) {
  const auto& lg = model.linear();
  const double h = grid.step();
  std::vector<GaussianBelief> out;
  Vector mean = lg.initial_mean;
  Matrix R = symmetrized(lg.initial_cov);
  for (std::size_t i = 0; i <= grid.n_steps(); ++i) {
    out.push_back({mean, R});
    if (i == grid.n_steps()) break;
    const double u = grid.node(i);
    const Matrix A = lg.A(u);
    const Matrix S = lg.Sigma(u);
    mean = mean + A * mean * h;
    R = R + symmetrized(A * R + R * A.transpose() + S * S.transpose()) * h;
  }
  return out;
}

/// Euler slice of log Z: b' beta^{-1} dy - 1/2 b' beta^{-1} b h.
inline double log_weight_increment(const ModelSpec& model, const Vector& x, const Vector& dy, double u,
                                   double h) {
  require(h > 0.0, ErrorCode::PreconditionFailed, "log_weight_increment needs h > 0");
  const Vector b = model.sensor(u, x);
  const Matrix beta_inv = model.beta_inverse(u);
  return b.dot(beta_inv * dy) - 0.5 * b.dot(beta_inv * b) * h;
}

struct ParticleFilterOptions {
  double resample_threshold = 0.5;
  /// Nodes whose clouds are kept; empty means terminal only.
  std::vector<std::size_t> keep_clouds;
  bool keep_all_clouds = false;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v)
    if (x > top) top = x;
  if (!std::isfinite(top)) return top;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - top);
  return top + std::log(sum);
}

}  // namespace detail

/// Bootstrap particle filter: signal-dynamics proposal, multiplicative
/// weights from the Euler slice of log Z, systematic resampling below the
/// ESS threshold.
inline FilterTrack particle_filter(const ModelSpec& model, std::span<const Vector> incs,
                                   const TimeGrid& grid, std::size_t n_particles, std::uint64_t seed,
                                   const ParticleFilterOptions& options = {}) {
  require(n_particles >= 2, ErrorCode::PreconditionFailed, "particle_filter needs N >= 2");
  require(options.resample_threshold >= 0.0 && options.resample_threshold <= 1.0,
          ErrorCode::PreconditionFailed, "resample threshold must lie in [0, 1]");
  detail::check_increments(model, incs, grid);
  const int m = model.dim_state();
  const int n_obs = model.dim_obs();
  const std::size_t N = n_particles;
  const double h = grid.step();

  std::vector<bool> keep(grid.n_nodes(), options.keep_all_clouds);
  keep.back() = true;
  for (auto s : options.keep_clouds)
    if (s < keep.size()) keep[s] = true;

  FilterTrack track{grid};
  track.mode = FilterMode::Particle;
  track.clouds.resize(grid.n_nodes());

  std::vector<double> pos(N * m);
  std::vector<double> logw(N, -std::log(static_cast<double>(N)));
  const Matrix init_sqrt = psd_sqrt(model.initial_cov());
  const NoiseStream init_stream(seed, Stream::Initial);
  const NoiseStream sig_stream(seed, Stream::Signal);
  const NoiseStream res_stream(seed, Stream::Resample);

  parallel_for(N, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Vector x = sample_initial(model, init_sqrt, init_stream, i);
      for (int k = 0; k < m; ++k) pos[i * m + k] = x[k];
    }
  });

  auto record_node = [&](std::size_t node, const ParticleCloud& cloud, double ess, double wsum_err) {
    track.beliefs.push_back(cloud.moments());
    track.ess.push_back(ess);
    track.weight_sum_error.push_back(wsum_err);
    if (keep[node]) track.clouds[node] = cloud;
  };

  {
    ParticleCloud c0(m, pos, logw);
    const auto w = c0.weights();
    double s = 0.0;
    for (double v : w) s += v;
    record_node(0, c0, c0.ess(), std::abs(s - 1.0));
  }

  double log_gamma = 0.0;
  std::vector<double> sensor_vals(N * n_obs);
  std::vector<double> incr(N);
  std::vector<double> shifted(N);
  for (std::size_t step = 0; step < grid.n_steps(); ++step) {
    const double u = grid.node(step);
    const Matrix beta_inv = model.beta_inverse(u);
    const Vector& dy = incs[step];
    const Vector beta_inv_dy = beta_inv * dy;

    // Sensor values and log-weight increments at the pre-move positions,
    // then the signal move.
    parallel_for(N, [&](std::size_t b, std::size_t e) {
      Vector x(m);
      for (std::size_t i = b; i < e; ++i) {
        for (int k = 0; k < m; ++k) x[k] = pos[i * m + k];
        const Vector bx = model.sensor(u, x);
        for (int k = 0; k < n_obs; ++k) sensor_vals[i * n_obs + k] = bx[k];
        incr[i] = bx.dot(beta_inv_dy) - 0.5 * bx.dot(beta_inv * bx) * h;
        const Vector next = signal_step(model, u, h, x, sig_stream, i, step);
        require_finite(next, [&] { return "particle " + std::to_string(i) + ", step " + std::to_string(step + 1); });
        for (int k = 0; k < m; ++k) pos[i * m + k] = next[k];
      }
    });

    // pi_u(b_u) from the current (pre-update) weights.
    {
      const double lse = detail::log_sum_exp(logw);
      if (!std::isfinite(lse)) throw Error(ErrorCode::WeightCollapse, "weights collapsed at step " + std::to_string(step));
      Vector pib = Vector::Zero(n_obs);
      for (std::size_t i = 0; i < N; ++i) {
        const double w = std::exp(logw[i] - lse);
        for (int k = 0; k < n_obs; ++k) pib[k] += w * sensor_vals[i * n_obs + k];
      }
      track.predicted_obs.push_back(pib);
      track.log_normalizer.push_back(log_gamma);

      for (std::size_t i = 0; i < N; ++i) shifted[i] = logw[i] + incr[i];
      const double lse_new = detail::log_sum_exp(shifted);
      if (!std::isfinite(lse_new))
        throw Error(ErrorCode::WeightCollapse, "all weights underflowed at step " + std::to_string(step));
      log_gamma += lse_new - lse;
      for (std::size_t i = 0; i < N; ++i) logw[i] = shifted[i] - lse_new;
    }

    ParticleCloud cloud(m, pos, logw);
    const auto w = cloud.weights();
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double v : w) {
      sum += v;
      sum_sq += v * v;
    }
    const double ess = std::clamp(1.0 / sum_sq, 1.0, static_cast<double>(N));
    if (ess < options.resample_threshold * static_cast<double>(N)) {
      const auto idx = systematic_resample(w, N, res_stream.uniform(0, step, 0));
      std::vector<double> next(N * m);
      for (std::size_t i = 0; i < N; ++i)
        for (int k = 0; k < m; ++k) next[i * m + k] = pos[idx[i] * m + k];
      pos.swap(next);
      std::fill(logw.begin(), logw.end(), -std::log(static_cast<double>(N)));
      track.resample_steps.push_back(step + 1);
      cloud = ParticleCloud(m, pos, logw);
    }
    record_node(step + 1, cloud, ess, std::abs(sum - 1.0));
  }

  // Predicted observation at the terminal node, for completeness.
  {
    const auto& cloud = *track.clouds.back();
    const auto w = cloud.weights();
    Vector pib = Vector::Zero(n_obs);
    for (std::size_t i = 0; i < N; ++i) pib += w[i] * model.sensor(grid.t_end(), cloud.position(i));
    track.predicted_obs.push_back(pib);
    track.log_normalizer.push_back(log_gamma);
  }
  return track;
}

/// Weak Kushner-Stratonovich residual per step,
///   r_i = pi_{u+h}(f) - pi_u(f) - pi_u(L_u f) h - pi_u(f bbar_u)' beta^{-1} (dY_i - pi_u(b_u) h),
/// for polynomial test functions of degree <= 2. Gaussian tracks require a
/// linear-Gaussian model; particle tracks require clouds at every node.
inline std::vector<double> ks_residual(const FilterTrack& track, const Polynomial& f, const ModelSpec& model,
                                       std::span<const Vector> incs) {
  const QuadraticForm q = to_quadratic(f);
  require(q.g.size() == model.dim_state(), ErrorCode::DimensionMismatch, "test function dimension");
  detail::check_increments(model, incs, track.grid);
  const TimeGrid& grid = track.grid;
  const double h = grid.step();
  std::vector<double> r(grid.n_steps());

  if (track.mode == FilterMode::Gaussian) {
    const auto& lg = model.linear();
    for (std::size_t i = 0; i < grid.n_steps(); ++i) {
      const double u = grid.node(i);
      const auto& [mu, R] = track.beliefs[i];
      const Matrix A = lg.A(u);
      const Matrix B = lg.B(u);
      const Matrix S = lg.Sigma(u);
      const Matrix alpha = S * S.transpose();
      const Matrix beta_inv = model.beta_inverse(u);
      const double pf_now = gaussian_expectation(q, mu, R);
      const double pf_next = gaussian_expectation(q, track.beliefs[i + 1].mean, track.beliefs[i + 1].cov);
      const double p_lf = q.g.dot(A * mu) + 2.0 * ((q.Q * A * R).trace() + mu.dot(q.Q * A * mu)) +
                          (q.Q * alpha).trace();
      const Vector p_fb = B * R * (q.g + 2.0 * q.Q * mu);
      const Vector innovation = incs[i] - track.predicted_obs[i] * h;
      r[i] = pf_next - pf_now - p_lf * h - p_fb.dot(beta_inv * innovation);
    }
    return r;
  }

  require(track.mode == FilterMode::Particle, ErrorCode::PreconditionFailed,
          "ks_residual supports Gaussian and particle tracks");
  // Expectations of f are taken as c + pi(f - c) so that constants are exact.
  auto centered_mean = [&](const ParticleCloud& cloud) {
    const auto w = cloud.weights();
    double s = 0.0;
    for (std::size_t k = 0; k < cloud.size(); ++k) s += w[k] * (q.value(cloud.position(k)) - q.c);
    return q.c + s;
  };
  for (std::size_t i = 0; i < grid.n_steps(); ++i) {
    const double u = grid.node(i);
    const ParticleCloud& now = track.cloud(i);
    const ParticleCloud& next = track.cloud(i + 1);
    const auto w = now.weights();
    const Matrix beta_inv = model.beta_inverse(u);
    const Vector& pib = track.predicted_obs[i];
    double p_lf = 0.0;
    Vector p_fb = Vector::Zero(model.dim_obs());
    for (std::size_t k = 0; k < now.size(); ++k) {
      const Vector x = now.position(k);
      const double lf = q.gradient(x).dot(model.drift(u, x)) + 0.5 * (q.hessian() * model.alpha(u, x)).trace();
      p_lf += w[k] * lf;
      p_fb += w[k] * (q.value(x) - q.c) * (model.sensor(u, x) - pib);
    }
    const Vector innovation = incs[i] - pib * h;
    r[i] = centered_mean(next) - centered_mean(now) - p_lf * h - p_fb.dot(beta_inv * innovation);
  }
  return r;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_FILTERING_HPP
