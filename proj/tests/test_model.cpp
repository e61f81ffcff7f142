#include <gtest/gtest.h>

#include "smoothlab/model.hpp"
#include "smoothlab/random.hpp"

using namespace smoothlab;

namespace {

ModelSpec scalar_lg(double A, double B, double S, double V) {
  return make_linear_gaussian("t", scalar_matrix(A), scalar_matrix(B), scalar_matrix(S), scalar_matrix(V),
                              scalar_vector(0.0), scalar_matrix(1.0));
}

}  // namespace

TEST(Model, ScalarLinearGaussianAssembly) {
  const auto m = scalar_lg(0.0, 1.0, 1.0, 1.0);
  EXPECT_EQ(m.dim_state(), 1);
  EXPECT_EQ(m.dim_obs(), 1);
  EXPECT_DOUBLE_EQ(m.alpha(0.3, scalar_vector(2.0))(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.beta(0.3)(0, 0), 1.0);
  EXPECT_TRUE(m.is_linear_gaussian());
}

TEST(Model, ZeroObservationNoiseIsDegenerate) {
  try {
    scalar_lg(0.0, 1.0, 1.0, 0.0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateObservationNoise);
  }
}

TEST(Model, AlphaIsSigmaSigmaTranspose) {
  Matrix S(2, 2);
  S << 1, 0, 1, 1;
  const auto m = make_linear_gaussian("t", Matrix::Zero(2, 2), Matrix::Identity(1, 2), S, scalar_matrix(1.0),
                                      Vector::Zero(2), Matrix::Identity(2, 2));
  Matrix expected(2, 2);
  expected << 1, 1, 1, 2;
  EXPECT_TRUE(alpha_at(m, 0.0, Vector::Zero(2)).isApprox(expected));
}

TEST(Model, AlphaOfDiagonalAndZeroSigma) {
  Matrix S = Matrix::Zero(2, 2);
  S(0, 0) = 2;
  S(1, 1) = 3;
  auto m = make_linear_gaussian("t", Matrix::Zero(2, 2), Matrix::Identity(1, 2), S, scalar_matrix(1.0), Vector::Zero(2),
                                Matrix::Identity(2, 2));
  const Matrix a = alpha_at(m, 0.0, Vector::Zero(2));
  EXPECT_DOUBLE_EQ(a(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(a(1, 1), 9.0);
  EXPECT_DOUBLE_EQ(a(0, 1), 0.0);
  m = make_linear_gaussian("t", Matrix::Zero(2, 2), Matrix::Identity(1, 2), Matrix::Zero(2, 2), scalar_matrix(1.0),
                           Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_TRUE(alpha_at(m, 0.0, Vector::Zero(2)).isZero());
  EXPECT_TRUE(alpha_at(scalar_lg(0, 1, 1, 1), 0.0, scalar_vector(0.0)).isIdentity());
}

TEST(Model, BenchmarkCatalog) {
  for (const char* name : {"bm", "ou", "lg1d", "lg2d", "sine1d"}) EXPECT_NO_THROW(benchmark(name)) << name;
  const auto ou = benchmark("ou");
  EXPECT_DOUBLE_EQ(ou.drift(0.0, scalar_vector(1.5))[0], -1.5);
  EXPECT_DOUBLE_EQ(ou.alpha(0.0, scalar_vector(0.0))(0, 0), 2.0);
  const auto bm = benchmark("bm");
  EXPECT_TRUE(bm.null_sensor());
  EXPECT_DOUBLE_EQ(bm.sensor(0.0, scalar_vector(3.0))[0], 0.0);
  try {
    benchmark("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownBenchmark);
  }
}

TEST(Model, Sine1dCoefficients) {
  const auto m = benchmark("sine1d");
  EXPECT_FALSE(m.is_linear_gaussian());
  EXPECT_DOUBLE_EQ(m.drift(0.0, scalar_vector(0.7))[0], std::sin(0.7));
  EXPECT_DOUBLE_EQ(m.sensor(0.0, scalar_vector(0.7))[0], 0.7);
}

TEST(Model, LinearDriftRoundTripIsExact) {
  const auto m = benchmark("lg2d");
  const NoiseStream s(3, Stream::Generic);
  const Matrix A = m.linear().A(0.0);
  for (std::uint64_t p = 0; p < 50; ++p) {
    Vector x(2);
    s.normals(p, 0, x);
    EXPECT_EQ((m.drift(0.0, x) - A * x).norm(), 0.0);
  }
}

TEST(Model, DimensionMismatchIsRejected) {
  try {
    make_linear_gaussian("t", Matrix::Zero(2, 2), scalar_matrix(1.0), Matrix::Identity(2, 2), scalar_matrix(1.0),
                         Vector::Zero(2), Matrix::Identity(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Model, WithInitialLawReplacesMoments) {
  const auto m = with_initial_law(benchmark("lg1d"), scalar_vector(2.0), scalar_matrix(0.5));
  EXPECT_DOUBLE_EQ(m.initial_mean()[0], 2.0);
  EXPECT_DOUBLE_EQ(m.initial_cov()(0, 0), 0.5);
  EXPECT_TRUE(m.is_linear_gaussian());
}
