#include <gtest/gtest.h>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/random.hpp"
#include "smoothlab/score.hpp"

using namespace smoothlab;

namespace {

const auto kOne = [](double) { return 1.0; };

ParticleCloud gaussian_cloud(std::size_t n, double mean, double var, std::uint64_t seed) {
  const NoiseStream s(seed, Stream::Generic);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = mean + std::sqrt(var) * s.normal(i, 0, 0);
  return ParticleCloud::uniform(1, std::move(x));
}

double grid_error_at_one(double dx) {
  const auto d = gaussian_density(-6.0, 6.0, static_cast<std::size_t>(std::llround(12.0 / dx)), 0.0, 1.0);
  return std::abs(grid_score(d, kOne, 1.0) + 1.0);
}

}  // namespace

TEST(LinearGaussianScore, Examples) {
  const GaussianBelief b{scalar_vector(0.0), scalar_matrix(1.0)};
  EXPECT_DOUBLE_EQ(linear_gaussian_score(b, scalar_matrix(1.0), scalar_vector(2.0))[0], -2.0);
  EXPECT_EQ(linear_gaussian_score(b, scalar_matrix(1.0), scalar_vector(0.0))[0], 0.0);
  try {
    linear_gaussian_score({scalar_vector(0.0), scalar_matrix(0.0)}, scalar_matrix(1.0), scalar_vector(1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularCovariance);
  }
}

TEST(GaussianFitScore, SymmetricPairAndDegenerateCloud) {
  EXPECT_EQ(gaussian_fit_score(ParticleCloud::uniform(1, {-1.0, 1.0}), scalar_matrix(1.0), scalar_vector(0.0))[0], 0.0);
  try {
    gaussian_fit_score(ParticleCloud::uniform(1, {0.5, 0.5, 0.5}), scalar_matrix(1.0), scalar_vector(0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularCovariance);
  }
}

TEST(KdeScore, SingleParticleAndClip) {
  const auto one = ParticleCloud::uniform(1, {0.0});
  const double bw = 0.3;
  EXPECT_NEAR(kde_score(one, bw, scalar_matrix(1.0), scalar_vector(bw))[0], -1.0 / bw, 1e-12);
  EXPECT_EQ(kde_score(ParticleCloud::uniform(1, {-1.0, 1.0}), 0.5, scalar_matrix(1.0), scalar_vector(0.0))[0], 0.0);
  EXPECT_NEAR(kde_score(one, bw, scalar_matrix(1.0), scalar_vector(50.0), 10.0).norm(), 10.0, 1e-12);
  EXPECT_THROW(kde_score(ParticleCloud(), bw, scalar_matrix(1.0), scalar_vector(0.0)), Error);
}

TEST(ScoreSources, AgreeOnLargeGaussianCloud) {
  const double mean = 0.4, var = 0.8;
  const auto cloud = gaussian_cloud(100000, mean, var, 31);
  const Matrix alpha = scalar_matrix(1.0);
  const GaussianBelief exact{scalar_vector(mean), scalar_matrix(var)};
  for (double z : {-1.5, -1.0, -0.5, 0.5, 1.0}) {
    const Vector x = scalar_vector(mean + z * std::sqrt(var));
    const double ref = linear_gaussian_score(exact, alpha, x)[0];
    EXPECT_NEAR(gaussian_fit_score(cloud, alpha, x)[0], ref, 0.05 * std::abs(ref)) << z;
  }
}

// With Silverman's bandwidth the pointwise KDE score of one 1e5 cloud has a
// spread near 8% (it shrinks only like N^-0.2), so the estimator is checked
// through its average over independent clouds.
TEST(ScoreSources, KdeAgreesOnAverageOverClouds) {
  const double mean = 0.4, var = 0.8;
  const Matrix alpha = scalar_matrix(1.0);
  const GaussianBelief exact{scalar_vector(mean), scalar_matrix(var)};
  const std::vector<double> probes{-1.5, -1.0, -0.5, 0.5, 1.0};
  const int clouds = 25;
  std::vector<double> avg(probes.size(), 0.0);
  for (int c = 0; c < clouds; ++c) {
    const auto cloud = gaussian_cloud(100000, mean, var, 100 + c);
    const double bw = silverman_bandwidth(cloud);
    for (std::size_t p = 0; p < probes.size(); ++p)
      avg[p] += kde_score(cloud, bw, alpha, scalar_vector(mean + probes[p] * std::sqrt(var)))[0] / clouds;
  }
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const double ref = linear_gaussian_score(exact, alpha, scalar_vector(mean + probes[p] * std::sqrt(var)))[0];
    EXPECT_NEAR(avg[p], ref, 0.05 * std::abs(ref)) << probes[p];
  }
}

TEST(GridScore, TabulatedGaussian) {
  const auto d = gaussian_density(-6.0, 6.0, 1200, 0.0, 1.0);
  EXPECT_NEAR(grid_score(d, kOne, 1.0), -1.0, 1e-3);
  EXPECT_NEAR(grid_score(d, kOne, 0.0), 0.0, 1e-12);
  try {
    grid_score(d, kOne, 6.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfSupport);
  }
}

TEST(GridScore, SecondOrderInDx) {
  const double ratio = grid_error_at_one(0.02) / grid_error_at_one(0.01);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(ScoreSource, OutputBoundedByClip) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 1.0, 10);
  FilterTrack t(g);
  t.beliefs.assign(g.n_nodes(), {scalar_vector(0.0), scalar_matrix(1e-3)});
  const auto s = ScoreSource::exact_lg(m, t, 5.0);
  for (double x : {-100.0, -1.0, 0.0, 0.001, 3.0})
    EXPECT_LE(s.evaluate(3, scalar_vector(x)).norm(), 5.0 + 1e-12);
}

TEST(ScoreSource, KdeNeedsConstantDiffusion) {
  auto def = benchmark("lg1d").definition();
  def.constant_diffusion = false;
  def.linear.reset();
  def.diffusion = [](double, const Vector& x) { return scalar_matrix(1.0 + x[0] * x[0]); };
  const ModelSpec m(def);
  const TimeGrid g(0.0, 1.0, 2);
  FilterTrack t(g);
  t.mode = FilterMode::Particle;
  t.beliefs.assign(g.n_nodes(), {scalar_vector(0.0), scalar_matrix(1.0)});
  t.clouds.assign(g.n_nodes(), ParticleCloud::uniform(1, {-1.0, 0.0, 1.0}));
  try {
    ScoreSource::kde(m, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonConstantAlpha);
  }
}
