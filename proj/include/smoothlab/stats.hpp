#ifndef SMOOTHLAB_STATS_HPP
#define SMOOTHLAB_STATS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/errors.hpp"
#include "smoothlab/linalg.hpp"

namespace smoothlab {

inline constexpr std::size_t kMinSamples = 30;

/// One compared statistic.
struct MomentRow {
  std::string statistic;
  double estimate = 0.0;
  double reference = 0.0;
  double standard_error = 0.0;
  double z = 0.0;
  bool pass = false;
};

/// Sample mean, unbiased covariance and standard errors of N x m samples:
/// plug-in for the means, delete-one jackknife (closed form) for the
/// covariance entries.
struct SampleMoments {
  Vector mean;
  Matrix cov;
  Vector mean_se;
  Matrix cov_se;
  std::size_t count = 0;
};

inline SampleMoments sample_moments(std::span<const double> samples, int m) {
  require(m >= 1 && m <= kMaxDim, ErrorCode::DimensionMismatch, "sample dimension");
  const std::size_t N = samples.size() / static_cast<std::size_t>(m);
  if (N < kMinSamples)
    throw Error(ErrorCode::TooFewSamples, "need at least " + std::to_string(kMinSamples) + " samples, got " + std::to_string(N));
  const double n = static_cast<double>(N);
  SampleMoments out;
  out.count = N;
  out.mean = Vector::Zero(m);
  for (std::size_t i = 0; i < N; ++i)
    for (int k = 0; k < m; ++k) out.mean[k] += samples[i * m + k];
  out.mean /= n;
  Matrix scatter = Matrix::Zero(m, m);
  for (std::size_t i = 0; i < N; ++i)
    for (int a = 0; a < m; ++a)
      for (int b = a; b < m; ++b)
        scatter(a, b) += (samples[i * m + a] - out.mean[a]) * (samples[i * m + b] - out.mean[b]);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < a; ++b) scatter(a, b) = scatter(b, a);
  out.cov = scatter / (n - 1.0);
  out.mean_se = (out.cov.diagonal() / n).cwiseMax(0.0).cwiseSqrt();

  // Leaving sample i out: C_{-i} = C - n/(n-1) d_a d_b, cov_{-i} = C_{-i}/(n-2).
  out.cov_se = Matrix::Zero(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = a; b < m; ++b) {
      double s1 = 0.0;
      double s2 = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double d = (samples[i * m + a] - out.mean[a]) * (samples[i * m + b] - out.mean[b]);
        const double loo = (scatter(a, b) - n / (n - 1.0) * d) / (n - 2.0);
        s1 += loo;
        s2 += loo * loo;
      }
      const double mean_loo = s1 / n;
      const double var = std::max(0.0, s2 / n - mean_loo * mean_loo);
      out.cov_se(a, b) = out.cov_se(b, a) = std::sqrt((n - 1.0) * var);
    }
  }
  return out;
}

inline std::string mean_label(int k) { return "mean[" + std::to_string(k) + "]"; }
inline std::string cov_label(int a, int b) { return "cov[" + std::to_string(a) + "," + std::to_string(b) + "]"; }

inline MomentRow make_row(std::string statistic, double estimate, double reference, double se, double z_threshold) {
  MomentRow r{std::move(statistic), estimate, reference, se, 0.0, false};
  if (se > 0.0) {
    r.z = (estimate - reference) / se;
  } else {
    r.z = estimate == reference ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), estimate - reference);
  }
  r.pass = std::abs(r.z) <= z_threshold;
  return r;
}

/// z-scores of the sample mean components and covariance entries (upper
/// triangle) against a reference law.
inline std::vector<MomentRow> compare_moments(std::span<const double> samples, int m, const Vector& ref_mean,
                                              const Matrix& ref_cov, double z_threshold = 3.0) {
  require(ref_mean.size() == m && ref_cov.rows() == m && ref_cov.cols() == m, ErrorCode::DimensionMismatch,
          "reference moments have the wrong shape");
  const SampleMoments s = sample_moments(samples, m);
  std::vector<MomentRow> rows;
  for (int k = 0; k < m; ++k) rows.push_back(make_row(mean_label(k), s.mean[k], ref_mean[k], s.mean_se[k], z_threshold));
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b)
      rows.push_back(make_row(cov_label(a, b), s.cov(a, b), ref_cov(a, b), s.cov_se(a, b), z_threshold));
  return rows;
}

/// Two independent samples: z = (est_a - est_b) / sqrt(se_a^2 + se_b^2).
/// `estimate` holds sample a, `reference` sample b.
inline std::vector<MomentRow> compare_samples(std::span<const double> a, std::span<const double> b, int m,
                                              double z_threshold = 3.0) {
  const SampleMoments sa = sample_moments(a, m);
  const SampleMoments sb = sample_moments(b, m);
  std::vector<MomentRow> rows;
  for (int k = 0; k < m; ++k)
    rows.push_back(make_row(mean_label(k), sa.mean[k], sb.mean[k], std::hypot(sa.mean_se[k], sb.mean_se[k]), z_threshold));
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j)
      rows.push_back(make_row(cov_label(i, j), sa.cov(i, j), sb.cov(i, j), std::hypot(sa.cov_se(i, j), sb.cov_se(i, j)),
                              z_threshold));
  return rows;
}

/// Trapezoid L1 distance between two densities on the same mesh.
inline double compare_densities(const DensityGrid& a, const DensityGrid& b) {
  if (!a.same_mesh(b) || a.values.size() != b.values.size())
    throw Error(ErrorCode::GridMismatch, "densities live on different meshes");
  double s = 0.0;
  for (std::size_t j = 0; j < a.values.size(); ++j) s += a.weight(j) * std::abs(a.values[j] - b.values[j]);
  return s;
}

/// Silverman's rule for unweighted 1D samples: (4/3)^{1/5} sd N^{-1/5}.
inline double silverman_bandwidth_1d(std::span<const double> x) {
  require(x.size() >= 2, ErrorCode::TooFewSamples, "bandwidth needs at least two samples");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size() - 1);
  return std::pow(4.0 / 3.0, 0.2) * std::sqrt(var) * std::pow(static_cast<double>(x.size()), -0.2);
}

/// Gaussian kernel density estimate of 1D samples on the nodes of `mesh`.
inline DensityGrid kde_on_grid(std::span<const double> x, const DensityGrid& mesh, double bandwidth = 0.0) {
  const double bw = bandwidth > 0.0 ? bandwidth : silverman_bandwidth_1d(x);
  DensityGrid out = mesh.like();
  const double dx = mesh.dx();
  const double reach = 8.0 * bw;
  const double norm = 1.0 / (static_cast<double>(x.size()) * bw * std::sqrt(2.0 * std::numbers::pi));
  for (double v : x) {
    const double lo = std::max(0.0, std::ceil((v - reach - mesh.x_min) / dx));
    const double hi = std::min(static_cast<double>(mesh.n_cells), std::floor((v + reach - mesh.x_min) / dx));
    for (auto j = static_cast<std::size_t>(lo); static_cast<double>(j) <= hi; ++j) {
      const double d = (mesh.x(j) - v) / bw;
      out.values[j] += norm * std::exp(-0.5 * d * d);
    }
  }
  return out;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_STATS_HPP
