#include <gtest/gtest.h>

#include <filesystem>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/filtering.hpp"
#include "smoothlab/io.hpp"
#include "smoothlab/random.hpp"
#include "smoothlab/report.hpp"
#include "smoothlab/sde.hpp"
#include "smoothlab/stats.hpp"

using namespace smoothlab;
namespace fs = std::filesystem;

namespace {

std::vector<double> normals(std::size_t n, double mean, double sd, std::uint64_t seed) {
  const NoiseStream s(seed, Stream::Generic);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = mean + sd * s.normal(i, 0, 0);
  return x;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "smoothlab_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(CompareDensities, Examples) {
  const auto a = gaussian_density(-8.0, 8.0, 1600, 0.0, 1.0);
  EXPECT_EQ(compare_densities(a, a), 0.0);
  EXPECT_LE(compare_densities(a, gaussian_density(-8.0, 8.0, 1600, 0.0, 1.0)), 1e-12);
  const double exact = 2.0 * (normal_cdf(0.05) - normal_cdf(-0.05));
  EXPECT_NEAR(compare_densities(a, gaussian_density(-8.0, 8.0, 1600, 0.1, 1.0)), exact, 1e-3);
  EXPECT_NEAR(exact, 0.0797, 1e-4);
  try {
    compare_densities(a, gaussian_density(-8.0, 8.0, 800, 0.0, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
  }
}

TEST(CompareMoments, TooFewSamples) {
  try {
    compare_moments(normals(5, 0, 1, 1), 1, scalar_vector(0.0), scalar_matrix(1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewSamples);
  }
}

TEST(CompareMoments, ShiftedReferenceFails) {
  const auto x = normals(10000, 0.0, 1.0, 2);
  const auto mom = sample_moments(x, 1);
  const auto rows = compare_moments(x, 1, scalar_vector(mom.mean[0] + 10.0 * mom.mean_se[0]), scalar_matrix(1.0));
  EXPECT_FALSE(rows[0].pass);
  EXPECT_NEAR(rows[0].z, -10.0, 1e-9);
}

TEST(CompareMoments, CalibratedUnderTheNull) {
  std::size_t rows = 0, passed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& r : compare_moments(normals(10000, 0.5, 2.0, 1000 + seed), 1, scalar_vector(0.5), scalar_matrix(4.0))) {
      ++rows;
      passed += r.pass;
    }
  }
  EXPECT_GE(static_cast<double>(passed) / rows, 0.99);
}

TEST(CompareMoments, StandardErrorsMatchTheory) {
  const auto mom = sample_moments(normals(40000, 0.0, 1.0, 3), 1);
  EXPECT_NEAR(mom.mean_se[0], 1.0 / 200.0, 1e-4);
  EXPECT_NEAR(mom.cov_se(0, 0), std::sqrt(2.0 / 40000), 5e-4);
}

TEST(CompareMoments, ExactMatchWithZeroError) {
  const auto r = make_row("x", 1.0, 1.0, 0.0, 3.0);
  EXPECT_EQ(r.z, 0.0);
  EXPECT_TRUE(r.pass);
  EXPECT_FALSE(make_row("x", 1.0, 2.0, 0.0, 3.0).pass);
}

TEST(CompareSamples, SameLawPassesShiftedFails) {
  const auto a = normals(20000, 0.0, 1.0, 4), b = normals(20000, 0.0, 1.0, 5), c = normals(20000, 0.2, 1.0, 6);
  for (const auto& r : compare_samples(a, b, 1, 3.0)) EXPECT_TRUE(r.pass) << r.statistic;
  EXPECT_FALSE(compare_samples(a, c, 1, 3.0)[0].pass);
}

TEST(KdeOnGrid, RecoversGaussian) {
  const auto mesh = gaussian_density(-6.0, 6.0, 600, 0.0, 1.0);
  EXPECT_LE(compare_densities(kde_on_grid(normals(50000, 0.0, 1.0, 8), mesh), mesh), 0.05);
}

TEST(Report, ExpectedFalseFailRate) {
  std::vector<ReportRow> rows(10);
  for (auto& r : rows) r.metric = "z";
  const double p = std::erfc(3.0 / std::sqrt(2.0));
  EXPECT_NEAR(expected_false_fail_rate(rows), 1.0 - std::pow(1.0 - p, 10), 1e-15);
  rows.push_back(bound_row("", std::nullopt, "mass", "max_error", 0.0, 1e-6));
  EXPECT_NEAR(expected_false_fail_rate(rows), 1.0 - std::pow(1.0 - p, 10), 1e-15);
  EXPECT_FALSE(ratio_row("", "r", 2.5, 3.0, 5.0).pass);
  EXPECT_TRUE(ratio_row("", "r", 4.1, 3.0, 5.0).pass);
}

TEST(Csv, DoublesRoundTripExactly) {
  for (double v : {0.1, -1e-300, 1.0 / 3.0, 6.02214076e23, 0.0}) EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  EXPECT_THROW(io::parse_double("abc"), Error);
}

TEST(Csv, ObservationsRoundTrip) {
  const auto m = benchmark("lg2d");
  const TimeGrid g(0.0, 1.0, 50);
  const auto b = simulate_forward(m, g, 1, 1, std::vector<std::size_t>{0});
  const auto path = scratch("obs.csv");
  io::write_observations(path, b);
  const auto back = io::read_observations(path);
  const auto incs = increments_of(b);
  ASSERT_EQ(back.size(), incs.size());
  for (std::size_t i = 0; i < incs.size(); ++i) EXPECT_EQ(back[i], incs[i]);
}

TEST(Csv, BeliefsRoundTrip) {
  const auto m = benchmark("lg2d");
  const TimeGrid g(0.0, 1.0, 50);
  const auto t = kalman_bucy_solve(m, increments_of(simulate_forward(m, g, 1, 1, std::vector<std::size_t>{0})), g);
  const auto path = scratch("beliefs.csv");
  io::write_filter_track(path, t);
  const auto back = io::read_beliefs(path);
  ASSERT_EQ(back.size(), t.beliefs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].mean, t.beliefs[i].mean);
    EXPECT_EQ(back[i].cov, t.beliefs[i].cov);
  }
}

TEST(Csv, DensityRoundTrip) {
  const auto d = gaussian_density(-3.0, 5.0, 80, 1.0, 0.7);
  const auto path = scratch("density.csv");
  io::write_density(path, d);
  const auto back = io::read_density(path);
  EXPECT_TRUE(back.same_mesh(d));
  EXPECT_EQ(back.values, d.values);
}

TEST(Csv, MissingFileIsIoError) {
  try {
    io::read_density(scratch("does_not_exist.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}
