#ifndef SMOOTHLAB_SCORE_HPP
#define SMOOTHLAB_SCORE_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/errors.hpp"
#include "smoothlab/filtering.hpp"
#include "smoothlab/linalg.hpp"
#include "smoothlab/model.hpp"
#include "smoothlab/sde.hpp"

namespace smoothlab {

inline constexpr double kDefaultScoreClip = 1e3;
inline constexpr double kDefaultFloorFraction = 1e-12;

/// Scales v so that its norm does not exceed `clip`.
inline Vector clip_norm(Vector v, double clip) {
  const double n = v.norm();
  if (n > clip) v *= clip / n;
  return v;
}

/// p^{-1} div_alpha(p)(x) = -alpha R^{-1} (x - mean) for p = N(mean, R).
inline Vector linear_gaussian_score(const GaussianBelief& belief, const Matrix& alpha, const Vector& x) {
  const Matrix r_inv = guarded_inverse(belief.cov, ErrorCode::SingularCovariance);
  return -(alpha * (r_inv * (x - belief.mean)));
}

/// Moment-matched Gaussian surrogate of the cloud.
inline Vector gaussian_fit_score(const ParticleCloud& cloud, const Matrix& alpha, const Vector& x) {
  require(!cloud.empty(), ErrorCode::EmptyCloud, "gaussian_fit_score on an empty cloud");
  require(cloud.size() >= 2 && cloud.ess() >= 2.0 - 1e-12, ErrorCode::PreconditionFailed,
          "gaussian_fit_score needs ESS >= 2");
  return linear_gaussian_score(cloud.moments(), alpha, x);
}

/// Silverman's rule on a weighted cloud, (4/(m+2))^{1/(m+4)} sigma n_eff^{-1/(m+4)},
/// with sigma the average marginal standard deviation.
inline double silverman_bandwidth(const ParticleCloud& cloud) {
  require(!cloud.empty(), ErrorCode::EmptyCloud, "bandwidth of an empty cloud");
  const auto mom = cloud.moments();
  const int m = cloud.dim();
  const double sigma = mom.cov.diagonal().cwiseMax(0.0).cwiseSqrt().mean();
  const double n_eff = cloud.ess();
  return std::pow(4.0 / (m + 2.0), 1.0 / (m + 4.0)) * sigma * std::pow(n_eff, -1.0 / (m + 4.0));
}

/// alpha * grad log phat for the Gaussian mixture phat = sum w_i N(x_i, bw^2 I).
inline Vector kde_score(const ParticleCloud& cloud, double bandwidth, const Matrix& alpha, const Vector& x,
                        double clip = kDefaultScoreClip) {
  require(!cloud.empty(), ErrorCode::EmptyCloud, "kde_score on an empty cloud");
  require(bandwidth > 0.0, ErrorCode::PreconditionFailed, "kde bandwidth must be > 0");
  const int m = cloud.dim();
  const auto pos = cloud.positions();
  const auto lw = cloud.log_weights();
  const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
  // log kernel weights, then a log-sum-exp weighted average of (x_i - x).
  std::vector<double> lk(cloud.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double d2 = 0.0;
    for (int k = 0; k < m; ++k) {
      const double d = pos[i * m + k] - x[k];
      d2 += d * d;
    }
    lk[i] = lw[i] - 0.5 * d2 * inv_bw2;
    top = std::max(top, lk[i]);
  }
  require(std::isfinite(top), ErrorCode::WeightCollapse, "kde weights underflowed");
  Vector num = Vector::Zero(m);
  double den = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double w = std::exp(lk[i] - top);
    den += w;
    for (int k = 0; k < m; ++k) num[k] += w * (pos[i * m + k] - x[k]);
  }
  return clip_norm(alpha * (num / den) * inv_bw2, clip);
}

/// Nodewise table of div_alpha(p)/p for a 1D density, evaluated between nodes
/// by linear interpolation.
class GridScoreTable {
 public:
  GridScoreTable() = default;

  /// alpha_nodes[j] = alpha(x_j); central differences inside, second-order
  /// one-sided differences at the two ends.
  GridScoreTable(const DensityGrid& density, const std::vector<double>& alpha_nodes,
                 double floor_fraction = kDefaultFloorFraction, double clip = kDefaultScoreClip)
      : density_(density), clip_(clip) {
    const std::size_t n = density.n_nodes();
    require(alpha_nodes.size() == n, ErrorCode::DimensionMismatch, "alpha table length");
    require(n >= 3, ErrorCode::PreconditionFailed, "grid score needs at least 3 nodes");
    floor_ = floor_fraction * density.max_value();
    require(floor_ > 0.0, ErrorCode::MassUnderflow, "density is identically zero");
    const double dx = density.dx();
    std::vector<double> ap(n);
    for (std::size_t j = 0; j < n; ++j) ap[j] = alpha_nodes[j] * density.values[j];
    score_.assign(n, 0.0);
    valid_.assign(n, false);
    for (std::size_t j = 0; j < n; ++j) {
      double d;
      if (j == 0) {
        d = (-3.0 * ap[0] + 4.0 * ap[1] - ap[2]) / (2.0 * dx);
      } else if (j + 1 == n) {
        d = (3.0 * ap[n - 1] - 4.0 * ap[n - 2] + ap[n - 3]) / (2.0 * dx);
      } else {
        d = (ap[j + 1] - ap[j - 1]) / (2.0 * dx);
      }
      if (density.values[j] >= floor_) {
        valid_[j] = true;
        score_[j] = std::clamp(d / density.values[j], -clip_, clip_);
      }
    }
  }

  double evaluate(double x) const {
    if (!(x >= density_.x_min && x <= density_.x_max))
      throw Error(ErrorCode::OutOfSupport, "x=" + std::to_string(x) + " lies outside the density grid");
    const double pos = (x - density_.x_min) / density_.dx();
    const auto j = std::min(static_cast<std::size_t>(pos), density_.n_cells - 1);
    const double theta = pos - static_cast<double>(j);
    const double p = (1.0 - theta) * density_.values[j] + theta * density_.values[j + 1];
    if (!(p >= floor_)) throw Error(ErrorCode::OutOfSupport, "density below floor at x=" + std::to_string(x));
    double s;
    if (valid_[j] && valid_[j + 1]) {
      s = (1.0 - theta) * score_[j] + theta * score_[j + 1];
    } else {
      s = valid_[j] ? score_[j] : score_[j + 1];
    }
    return std::clamp(s, -clip_, clip_);
  }

  const std::vector<double>& node_scores() const { return score_; }
  const std::vector<bool>& node_valid() const { return valid_; }
  double floor() const { return floor_; }
  const DensityGrid& density() const { return density_; }

 private:
  DensityGrid density_;
  std::vector<double> score_;
  std::vector<bool> valid_;
  double floor_ = 0.0;
  double clip_ = kDefaultScoreClip;
};

/// Finite-difference div_alpha(p)/p at x for a tabulated 1D density.
inline double grid_score(const DensityGrid& density, const std::function<double(double)>& alpha, double x,
                         double floor_fraction = kDefaultFloorFraction, double clip = kDefaultScoreClip) {
  std::vector<double> a(density.n_nodes());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = alpha(density.x(j));
  return GridScoreTable(density, a, floor_fraction, clip).evaluate(x);
}

/// alpha(u, x_j) at the nodes of a 1D density grid.
inline std::vector<double> alpha_on_grid(const ModelSpec& model, double u, const DensityGrid& g) {
  std::vector<double> a(g.n_nodes());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = model.alpha(u, scalar_vector(g.x(j)))(0, 0);
  return a;
}

enum class ScoreKind { ExactLinearGaussian, GaussianFit, Kde, Grid };

inline std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::ExactLinearGaussian: return "exact_lg";
    case ScoreKind::GaussianFit: return "gaussian_fit";
    case ScoreKind::Kde: return "kde";
    case ScoreKind::Grid: return "grid";
  }
  return "unknown";
}

/// Per-node supplier of the backward drift correction p_u^{-1} div_{alpha_u}(p_u).
/// Immutable; evaluation is safe from any number of threads.
class ScoreSource {
 public:
  /// Exact score of a Gaussian filter track (linear-Gaussian models).
  static ScoreSource exact_lg(const ModelSpec& model, const FilterTrack& track,
                              double clip = kDefaultScoreClip) {
    require(model.is_linear_gaussian(), ErrorCode::PreconditionFailed, "exact_lg score needs a linear-Gaussian model");
    require(track.mode == FilterMode::Gaussian, ErrorCode::PreconditionFailed, "exact_lg score needs a Gaussian filter track");
    return from_beliefs(ScoreKind::ExactLinearGaussian, model, track.grid, track.beliefs, clip);
  }

  /// Moment-matched Gaussian at every node (works for any track).
  static ScoreSource gaussian_fit(const ModelSpec& model, const FilterTrack& track,
                                  double clip = kDefaultScoreClip) {
    return from_beliefs(ScoreKind::GaussianFit, model, track.grid, track.beliefs, clip);
  }

  /// Gaussian beliefs supplied directly (e.g. prior moments for time reversal).
  static ScoreSource from_beliefs(ScoreKind kind, const ModelSpec& model, const TimeGrid& grid,
                                  const std::vector<GaussianBelief>& beliefs, double clip = kDefaultScoreClip) {
    require(beliefs.size() == grid.n_nodes(), ErrorCode::GridMismatch, "one belief per node required");
    ScoreSource s(kind, grid, clip);
    s.gauss_ = std::make_shared<std::vector<GaussNode>>(grid.n_nodes());
    for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
      auto& node = (*s.gauss_)[i];
      node.mean = beliefs[i].mean;
      try {
        node.precision = guarded_inverse(beliefs[i].cov, ErrorCode::SingularCovariance);
        node.valid = true;
        if (model.constant_diffusion()) {
          node.alpha_precision = model.alpha(grid.node(i), node.mean) * node.precision;
          node.has_alpha = true;
        }
      } catch (const Error&) {
        node.valid = false;
      }
    }
    s.model_ = std::make_shared<ModelSpec>(model);
    return s;
  }

  /// Kernel density score from the clouds of a particle track; requires a
  /// state-independent diffusion. bandwidth <= 0 selects Silverman per node.
  static ScoreSource kde(const ModelSpec& model, const FilterTrack& track, double bandwidth = 0.0,
                         double clip = kDefaultScoreClip) {
    if (!model.constant_diffusion())
      throw Error(ErrorCode::NonConstantAlpha, "kde score needs a state-independent diffusion");
    require(track.mode == FilterMode::Particle, ErrorCode::PreconditionFailed, "kde score needs a particle track");
    ScoreSource s(ScoreKind::Kde, track.grid, clip);
    s.kde_ = std::make_shared<std::vector<KdeNode>>(track.grid.n_nodes());
    for (std::size_t i = 0; i < track.grid.n_nodes(); ++i) {
      if (!track.has_cloud(i)) continue;
      auto& node = (*s.kde_)[i];
      node.cloud = track.cloud(i);
      node.bandwidth = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(node.cloud);
      node.valid = true;
    }
    s.model_ = std::make_shared<ModelSpec>(model);
    return s;
  }

  /// Finite-difference score of tabulated 1D densities, one per node.
  static ScoreSource grid(const ModelSpec& model, const TimeGrid& grid, const std::vector<DensityGrid>& densities,
                          double floor_fraction = kDefaultFloorFraction, double clip = kDefaultScoreClip) {
    require(model.dim_state() == 1, ErrorCode::DimensionMismatch, "grid score is one-dimensional");
    require(densities.size() == grid.n_nodes(), ErrorCode::GridMismatch, "one density per node required");
    ScoreSource s(ScoreKind::Grid, grid, clip);
    s.tables_ = std::make_shared<std::vector<GridScoreTable>>();
    s.tables_->reserve(grid.n_nodes());
    for (std::size_t i = 0; i < grid.n_nodes(); ++i)
      s.tables_->emplace_back(densities[i], alpha_on_grid(model, grid.node(i), densities[i]), floor_fraction, clip);
    s.model_ = std::make_shared<ModelSpec>(model);
    return s;
  }

  ScoreKind kind() const { return kind_; }
  const TimeGrid& grid() const { return grid_; }
  double clip() const { return clip_; }

  /// Score at grid node `node` and state x; norm bounded by clip().
  Vector evaluate(std::size_t node, const Vector& x) const {
    require(node < grid_.n_nodes(), ErrorCode::GridMismatch, "score node out of range");
    const double u = grid_.node(node);
    switch (kind_) {
      case ScoreKind::ExactLinearGaussian:
      case ScoreKind::GaussianFit: {
        const auto& g = (*gauss_)[node];
        if (!g.valid)
          throw Error(ErrorCode::SingularCovariance, "filter covariance is singular at node " + std::to_string(node));
        if (g.has_alpha) return clip_norm(-(g.alpha_precision * (x - g.mean)), clip_);
        return clip_norm(-(model_->alpha(u, x) * (g.precision * (x - g.mean))), clip_);
      }
      case ScoreKind::Kde: {
        const auto& k = (*kde_)[node];
        require(k.valid, ErrorCode::PreconditionFailed, "no cloud stored at node " + std::to_string(node));
        return kde_score(k.cloud, k.bandwidth, model_->alpha(u, x), x, clip_);
      }
      case ScoreKind::Grid:
        return scalar_vector((*tables_)[node].evaluate(x[0]));
    }
    return Vector::Zero(x.size());
  }

  const GridScoreTable& table(std::size_t node) const {
    require(kind_ == ScoreKind::Grid, ErrorCode::PreconditionFailed, "not a grid score source");
    return (*tables_)[node];
  }

 private:
  struct GaussNode {
    Vector mean;
    Matrix precision;
    /// alpha * precision when alpha does not depend on x.
    Matrix alpha_precision;
    bool has_alpha = false;
    bool valid = false;
  };
  struct KdeNode {
    ParticleCloud cloud;
    double bandwidth = 0.0;
    bool valid = false;
  };

  ScoreSource(ScoreKind kind, const TimeGrid& grid, double clip) : kind_(kind), grid_(grid), clip_(clip) {
    require(clip > 0.0, ErrorCode::PreconditionFailed, "score clip must be > 0");
  }

  ScoreKind kind_;
  TimeGrid grid_;
  double clip_;
  std::shared_ptr<const ModelSpec> model_;
  std::shared_ptr<std::vector<GaussNode>> gauss_;
  std::shared_ptr<std::vector<KdeNode>> kde_;
  std::shared_ptr<std::vector<GridScoreTable>> tables_;
};

}  // namespace smoothlab

#endif  // SMOOTHLAB_SCORE_HPP
