#ifndef SMOOTHLAB_SDE_HPP
#define SMOOTHLAB_SDE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smoothlab/errors.hpp"
#include "smoothlab/linalg.hpp"
#include "smoothlab/model.hpp"
#include "smoothlab/parallel.hpp"
#include "smoothlab/random.hpp"

namespace smoothlab {

/// Uniform mesh t_start = u_0 < ... < u_n = t_end.
class TimeGrid {
 public:
  TimeGrid(double t_start, double t_end, std::size_t n_steps)
      : t_start_(t_start), t_end_(t_end), n_steps_(n_steps) {
    require(std::isfinite(t_start) && std::isfinite(t_end) && t_end > t_start,
            ErrorCode::PreconditionFailed, "time grid needs t_end > t_start");
    require(n_steps >= 1, ErrorCode::PreconditionFailed, "time grid needs n_steps >= 1");
  }

  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  std::size_t n_steps() const { return n_steps_; }
  std::size_t n_nodes() const { return n_steps_ + 1; }
  double step() const { return (t_end_ - t_start_) / static_cast<double>(n_steps_); }
  double node(std::size_t i) const {
    return i == n_steps_ ? t_end_ : t_start_ + static_cast<double>(i) * step();
  }

  /// Index of the node equal to t (within a relative tolerance of h), if any.
  std::optional<std::size_t> node_index(double t, double rel_tol = 1e-9) const {
    const double pos = (t - t_start_) / step();
    const double rounded = std::round(pos);
    if (rounded < 0.0 || rounded > static_cast<double>(n_steps_)) return std::nullopt;
    if (std::abs(pos - rounded) > rel_tol) return std::nullopt;
    return static_cast<std::size_t>(rounded);
  }

  std::size_t require_node(double t) const {
    auto idx = node_index(t);
    if (!idx) throw Error(ErrorCode::PreconditionFailed, "time " + std::to_string(t) + " is not a grid node");
    return *idx;
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.t_start_ == b.t_start_ && a.t_end_ == b.t_end_ && a.n_steps_ == b.n_steps_;
  }

 private:
  double t_start_;
  double t_end_;
  std::size_t n_steps_;
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const std::string& what) {
  if (!(a == b)) throw Error(ErrorCode::GridMismatch, what + ": time grids differ");
}

/// Jointly simulated signal paths plus the single observation path driven by
/// path 0. Signal values are stored only at `recorded_steps`.
struct PathBundle {
  TimeGrid grid;
  std::size_t n_paths = 0;
  int dim_state = 0;
  int dim_obs = 0;
  std::vector<std::size_t> recorded_steps;
  /// [record][path][component]
  std::vector<double> signal;
  /// [step][component], n_steps rows.
  std::vector<double> obs_increments;
  /// [node][component], Y_0 = 0.
  std::vector<double> obs_path;

  std::span<const double> snapshot(std::size_t record) const {
    const std::size_t stride = n_paths * static_cast<std::size_t>(dim_state);
    return {signal.data() + record * stride, stride};
  }

  std::optional<std::size_t> record_of_step(std::size_t step) const {
    auto it = std::find(recorded_steps.begin(), recorded_steps.end(), step);
    if (it == recorded_steps.end()) return std::nullopt;
    return static_cast<std::size_t>(it - recorded_steps.begin());
  }

  double value(std::size_t record, std::size_t path, int k) const {
    return signal[(record * n_paths + path) * static_cast<std::size_t>(dim_state) + k];
  }

  Vector increment(std::size_t step) const {
    Vector dy(dim_obs);
    for (int k = 0; k < dim_obs; ++k) dy[k] = obs_increments[step * dim_obs + k];
    return dy;
  }
};

/// Observation increments as a step-indexed list of vectors.
inline std::vector<Vector> increments_of(const PathBundle& bundle) {
  std::vector<Vector> out;
  out.reserve(bundle.grid.n_steps());
  for (std::size_t i = 0; i < bundle.grid.n_steps(); ++i) out.push_back(bundle.increment(i));
  return out;
}

inline std::vector<std::size_t> all_steps(const TimeGrid& grid) {
  std::vector<std::size_t> s(grid.n_nodes());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i;
  return s;
}

/// `where` is only invoked on failure, keeping hot loops free of string work.
template <class Where>
void require_finite(const Vector& x, Where&& where) {
  if (!x.allFinite()) throw Error(ErrorCode::NonFiniteState, "non-finite state at " + where());
}

/// Draw of X_0 for `path`; shared by forward simulation and the particle filter.
inline Vector sample_initial(const ModelSpec& model, const Matrix& initial_sqrt,
                             const NoiseStream& stream, std::uint64_t path) {
  Vector xi(model.dim_state());
  stream.normals(path, 0, xi);
  return model.initial_mean() + initial_sqrt * xi;
}

/// One Euler-Maruyama step of the signal: X + a h + sigma sqrt(h) xi.
inline Vector signal_step(const ModelSpec& model, double u, double h, const Vector& x,
                          const NoiseStream& stream, std::uint64_t path, std::uint64_t step) {
  Vector xi(model.dim_noise());
  stream.normals(path, step, xi);
  return x + model.drift(u, x) * h + model.diffusion(u, x) * (std::sqrt(h) * xi);
}

/// Euler-Maruyama simulation of the signal/observation pair. The observation
/// is generated from path 0.
inline PathBundle simulate_forward(const ModelSpec& model, const TimeGrid& grid, std::uint64_t seed,
                                   std::size_t n_paths,
                                   std::optional<std::vector<std::size_t>> recorded_steps = std::nullopt) {
  require(n_paths >= 1, ErrorCode::PreconditionFailed, "simulate_forward needs n_paths >= 1");
  const int m = model.dim_state();
  const int n = model.dim_obs();
  const std::size_t n_steps = grid.n_steps();
  const double h = grid.step();

  PathBundle out{grid, n_paths, m, n, recorded_steps ? *recorded_steps : all_steps(grid), {}, {}, {}};
  std::sort(out.recorded_steps.begin(), out.recorded_steps.end());
  out.recorded_steps.erase(std::unique(out.recorded_steps.begin(), out.recorded_steps.end()),
                           out.recorded_steps.end());
  for (auto s : out.recorded_steps)
    require(s <= n_steps, ErrorCode::PreconditionFailed, "recorded step beyond grid");
  const std::size_t n_records = out.recorded_steps.size();
  out.signal.assign(n_records * n_paths * m, 0.0);

  // Record index per step (or npos) so paths can be written in one pass.
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> record_at(n_steps + 1, npos);
  for (std::size_t r = 0; r < n_records; ++r) record_at[out.recorded_steps[r]] = r;

  const Matrix init_sqrt = psd_sqrt(model.initial_cov());
  const NoiseStream init_stream(seed, Stream::Initial);
  const NoiseStream sig_stream(seed, Stream::Signal);
  const NoiseStream obs_stream(seed, Stream::Observation);

  auto store = [&](std::size_t step, std::size_t path, const Vector& x) {
    if (record_at[step] == npos) return;
    double* dst = out.signal.data() + (record_at[step] * n_paths + path) * m;
    for (int k = 0; k < m; ++k) dst[k] = x[k];
  };

  // Path 0 drives the observation.
  out.obs_increments.assign(n_steps * n, 0.0);
  out.obs_path.assign((n_steps + 1) * n, 0.0);
  {
    Vector x = sample_initial(model, init_sqrt, init_stream, 0);
    store(0, 0, x);
    Vector eta(model.dim_obs_noise());
    for (std::size_t i = 0; i < n_steps; ++i) {
      const double u = grid.node(i);
      obs_stream.normals(0, i, eta);
      const Vector dy = model.sensor(u, x) * h + model.obs_noise(u) * (std::sqrt(h) * eta);
      require_finite(dy, [&] { return "observation step " + std::to_string(i); });
      for (int k = 0; k < n; ++k) {
        out.obs_increments[i * n + k] = dy[k];
        out.obs_path[(i + 1) * n + k] = out.obs_path[i * n + k] + dy[k];
      }
      x = signal_step(model, u, h, x, sig_stream, 0, i);
      require_finite(x, [&] { return "path 0, step " + std::to_string(i + 1); });
      store(i + 1, 0, x);
    }
  }

  parallel_for(n_paths - 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const std::size_t path = j + 1;
      Vector x = sample_initial(model, init_sqrt, init_stream, path);
      store(0, path, x);
      for (std::size_t i = 0; i < n_steps; ++i) {
        x = signal_step(model, grid.node(i), h, x, sig_stream, path, i);
        require_finite(x, [&] { return "path " + std::to_string(path) + ", step " + std::to_string(i + 1); });
        store(i + 1, path, x);
      }
    }
  });
  return out;
}

/// Drift of the backward flow at (u, x): score - a_u(x).
inline Vector backward_drift(const ModelSpec& model, double u, const Vector& x, const Vector& score) {
  return score - model.drift(u, x);
}

/// State at u - h from the state at u:
///   x + (score - a_u(x)) h + sigma_u(x) sqrt(h) noise,
/// where score = p_u^{-1} div_{alpha_u}(p_u)(x).
inline Vector backward_step(const Vector& x, double u, double h, const ModelSpec& model,
                            const Vector& score, const Vector& noise) {
  require(h > 0.0, ErrorCode::PreconditionFailed, "backward_step needs h > 0");
  Vector next = x + backward_drift(model, u, x, score) * h + model.diffusion(u, x) * (std::sqrt(h) * noise);
  require_finite(next, [&] { return "backward step from t=" + std::to_string(u); });
  return next;
}

/// Same step with a_u(x) and sigma_u(x) already evaluated.
inline Vector backward_step(const Vector& x, double h, const Vector& drift, const Matrix& sigma,
                            const Vector& score, const Vector& noise) {
  Vector next = x + (score - drift) * h + sigma * (std::sqrt(h) * noise);
  require_finite(next, [&] { return std::string("backward step"); });
  return next;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_SDE_HPP
