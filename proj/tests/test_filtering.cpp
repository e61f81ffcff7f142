#include <gtest/gtest.h>

#include "smoothlab/filtering.hpp"
#include "smoothlab/sde.hpp"

using namespace smoothlab;

namespace {

std::vector<Vector> zero_increments(const TimeGrid& g, int n = 1) {
  return std::vector<Vector>(g.n_steps(), Vector::Zero(n));
}

ModelSpec scalar_lg(double A, double B, double S, double m0, double r0) {
  return make_linear_gaussian("t", scalar_matrix(A), scalar_matrix(B), scalar_matrix(S), scalar_matrix(1.0),
                              scalar_vector(m0), scalar_matrix(r0));
}

}  // namespace

TEST(Riccati, RightHandSideExamples) {
  const auto one = scalar_matrix(1.0);
  EXPECT_DOUBLE_EQ(riccati_rhs(scalar_matrix(0.0), one, one, one, one)(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(riccati_rhs(scalar_matrix(0.0), scalar_matrix(2.5), scalar_matrix(0.0), one, scalar_matrix(7.0))(0, 0),
                   2.5);
  EXPECT_NEAR(riccati_rhs(scalar_matrix(-1.0), one, one, one, scalar_matrix(std::sqrt(2.0) - 1.0))(0, 0), 0.0, 1e-15);
}

TEST(KalmanBucy, NoObservationGivesBrownianVariance) {
  const auto m = scalar_lg(0.0, 0.0, 1.0, 0.0, 0.0);
  const TimeGrid g(0.0, 2.0, 2000);
  const auto t = kalman_bucy_solve(m, zero_increments(g), g);
  for (std::size_t i = 0; i <= g.n_steps(); i += 100) EXPECT_NEAR(t.beliefs[i].cov(0, 0), g.node(i), 1e-12);
}

TEST(KalmanBucy, ScalarRiccatiMatchesTanh) {
  const auto m = with_initial_law(benchmark("lg1d"), scalar_vector(0.0), scalar_matrix(0.0));
  const TimeGrid g(0.0, 2.0, 2000);
  const auto t = kalman_bucy_solve(m, zero_increments(g), g);
  double err = 0.0;
  for (std::size_t i = 0; i <= g.n_steps(); ++i) err = std::max(err, std::abs(t.beliefs[i].cov(0, 0) - std::tanh(g.node(i))));
  EXPECT_LE(err, 5.0 * g.step());
}

TEST(KalmanBucy, ZeroInnovationFollowsMeanOde) {
  const auto m = scalar_lg(-0.7, 1.0, 1.0, 2.0, 0.5);
  const TimeGrid g(0.0, 1.0, 500);
  // dY = B X_hat h makes the innovation vanish, so X_hat(i+1) = (1 + A h) X_hat(i)
  std::vector<Vector> incs;
  double mean = 2.0;
  for (std::size_t i = 0; i < g.n_steps(); ++i) {
    incs.push_back(scalar_vector(mean * g.step()));
    mean += -0.7 * mean * g.step();
  }
  const auto t = kalman_bucy_solve(m, incs, g);
  EXPECT_NEAR(t.beliefs.back().mean[0], mean, 1e-12);
}

TEST(KalmanBucy, NullSensorEqualsPriorMoments) {
  const auto m = benchmark("ou");
  const TimeGrid g(0.0, 3.0, 300);
  const auto t = kalman_bucy_solve(m, zero_increments(g), g);
  const auto prior = prior_moments(m, g);
  for (std::size_t i = 0; i <= g.n_steps(); ++i) {
    EXPECT_NEAR(t.beliefs[i].mean[0], prior[i].mean[0], 1e-12);
    EXPECT_NEAR(t.beliefs[i].cov(0, 0), prior[i].cov(0, 0), 1e-12);
  }
}

TEST(KalmanBucy, CovarianceStaysSymmetricPsdForRandomStableModels) {
  const NoiseStream s(77, Stream::Generic);
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Matrix A(2, 2), S(2, 2), B(1, 2);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        A(r, c) = 0.5 * s.normal(trial, 0, r * 2 + c);
        S(r, c) = s.normal(trial, 1, r * 2 + c);
      }
    A -= 2.0 * Matrix::Identity(2, 2);
    B << s.normal(trial, 2, 0), s.normal(trial, 2, 1);
    const auto m = make_linear_gaussian("rand", A, B, S, scalar_matrix(1.0), Vector::Zero(2), Matrix::Identity(2, 2));
    const TimeGrid g(0.0, 1.0, 200);
    const auto paths = simulate_forward(m, g, trial, 1, std::vector<std::size_t>{0});
    const auto t = kalman_bucy_solve(m, increments_of(paths), g);
    EXPECT_LE(t.max_psd_clamp, 1e-10);
    for (const auto& b : t.beliefs) {
      EXPECT_EQ((b.cov - b.cov.transpose()).norm(), 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(b.cov));
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(LogWeight, Examples) {
  EXPECT_EQ(log_weight_increment(benchmark("bm"), scalar_vector(2.0), scalar_vector(0.3), 0.0, 0.1), 0.0);
  EXPECT_NEAR(log_weight_increment(benchmark("lg1d"), scalar_vector(1.0), scalar_vector(0.3), 0.0, 0.1), 0.25, 1e-15);
  Matrix B = Matrix::Zero(2, 1);
  B(0, 0) = 1.0;
  const auto m = make_linear_gaussian("two_obs", scalar_matrix(0.0), B, scalar_matrix(1.0), Matrix::Identity(2, 2),
                                      scalar_vector(0.0), scalar_matrix(1.0));
  Vector dy(2);
  dy << 0.2, 5.0;
  EXPECT_NEAR(log_weight_increment(m, scalar_vector(1.0), dy, 0.0, 0.1), 0.15, 1e-15);
}

TEST(ParticleFilter, NullSensorKeepsUniformWeightsAndForwardLaw) {
  const auto m = benchmark("bm");
  const TimeGrid g(0.0, 1.0, 50);
  ParticleFilterOptions opt;
  opt.keep_all_clouds = true;
  const auto t = particle_filter(m, zero_increments(g), g, 200, 5, opt);
  EXPECT_TRUE(t.resample_steps.empty());
  const auto& cloud = t.cloud(g.n_steps());
  for (double w : cloud.weights()) EXPECT_NEAR(w, 1.0 / 200, 1e-15);
  EXPECT_NEAR(t.log_normalizer.back(), 0.0, 1e-9);
  // same seed and noise streams as forward simulation
  const auto paths = simulate_forward(m, g, 5, 200, std::vector<std::size_t>{g.n_steps()});
  const auto snap = paths.snapshot(0);
  for (std::size_t i = 1; i < 200; ++i) EXPECT_DOUBLE_EQ(cloud.position(i)[0], snap[i]);
}

TEST(ParticleFilter, WeightsSumToOneAndEssBounded) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 1.0, 200);
  const auto paths = simulate_forward(m, g, 3, 1, std::vector<std::size_t>{0});
  const auto t = particle_filter(m, increments_of(paths), g, 1000, 8);
  for (double e : t.weight_sum_error) EXPECT_LE(e, 1e-12);
  for (double e : t.ess) EXPECT_LE(e, 1000.0 + 1e-9);
}

TEST(ParticleFilter, AgreesWithKalmanOnLinearGaussian) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 1.0, 500);
  const auto paths = simulate_forward(m, g, 17, 1, std::vector<std::size_t>{0});
  const auto incs = increments_of(paths);
  const auto pf = particle_filter(m, incs, g, 50000, 19);
  const auto kf = kalman_bucy_solve(m, incs, g);
  const auto& cloud = pf.cloud(g.n_steps());
  const auto mom = cloud.moments();
  const double se = std::sqrt(mom.cov(0, 0) / cloud.ess());
  EXPECT_LE(std::abs(mom.mean[0] - kf.beliefs.back().mean[0]), 3.0 * se);
}

TEST(ParticleFilter, RejectsSingleParticle) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 1.0, 10);
  try {
    particle_filter(m, zero_increments(g), g, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PreconditionFailed);
  }
}

TEST(ParticleCloud, EssAndMoments) {
  const auto c = ParticleCloud::uniform(1, {-1.0, 1.0});
  EXPECT_DOUBLE_EQ(c.ess(), 2.0);
  EXPECT_DOUBLE_EQ(c.moments().mean[0], 0.0);
}

TEST(SystematicResample, CopiesFollowWeights) {
  const std::vector<double> w{0.0, 1.0, 0.0};
  for (auto i : systematic_resample(w, 5, 0.3)) EXPECT_EQ(i, 1u);
}

TEST(KsResidual, ConstantTestFunctionIsExactlyZero) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 1.0, 100);
  const auto paths = simulate_forward(m, g, 2, 1, std::vector<std::size_t>{0});
  const auto incs = increments_of(paths);
  for (double r : ks_residual(kalman_bucy_solve(m, incs, g), Polynomial::constant(1, 1.0), m, incs)) EXPECT_EQ(r, 0.0);
}

TEST(KsResidual, IdentityOnGaussianTrackVanishes) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 2.0, 2000);
  const auto paths = simulate_forward(m, g, 2, 1, std::vector<std::size_t>{0});
  const auto incs = increments_of(paths);
  for (double r : ks_residual(kalman_bucy_solve(m, incs, g), Polynomial::coordinate(1, 0), m, incs))
    EXPECT_LE(std::abs(r), 1e-12);
}

TEST(KsResidual, CubicIsUnsupported) {
  const auto m = benchmark("lg1d");
  const TimeGrid g(0.0, 1.0, 10);
  const auto incs = zero_increments(g);
  try {
    ks_residual(kalman_bucy_solve(m, incs, g), Polynomial::power(1, 0, 3), m, incs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedTestFunction);
  }
}
