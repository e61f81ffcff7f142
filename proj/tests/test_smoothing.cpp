#include <gtest/gtest.h>

#include "smoothlab/filtering.hpp"
#include "smoothlab/sde.hpp"
#include "smoothlab/smoothing.hpp"
#include "smoothlab/stats.hpp"

using namespace smoothlab;

namespace {

std::vector<Vector> zeros(const TimeGrid& g) { return std::vector<Vector>(g.n_steps(), scalar_vector(0.0)); }

struct LgSetup {
  ModelSpec model = benchmark("lg1d");
  TimeGrid grid{0.0, 2.0, 1000};
  std::vector<Vector> incs;
  FilterTrack track{grid};

  LgSetup() {
    incs = increments_of(simulate_forward(model, grid, 101, 1, std::vector<std::size_t>{0}));
    track = kalman_bucy_solve(model, incs, grid);
  }
};

}  // namespace

TEST(Rts, HandEulerStep) {
  const detail::RtsState st{scalar_vector(2.0), scalar_matrix(1.0), scalar_matrix(1.0)};
  const auto next = detail::rts_step(st, scalar_matrix(0.0), scalar_matrix(1.0), {scalar_vector(0.0), scalar_matrix(1.0)}, 0.1);
  EXPECT_NEAR(next.mean[0], 1.8, 1e-15);
  EXPECT_NEAR(next.cov(0, 0), 0.9, 1e-15);
}

TEST(Rts, TerminalNodeEqualsFilter) {
  const LgSetup s;
  const auto rts = rts_smoother(s.track, s.model, s.grid);
  EXPECT_EQ(rts.beliefs.back().mean, s.track.beliefs.back().mean);
  EXPECT_EQ(rts.beliefs.back().cov, s.track.beliefs.back().cov);
}

TEST(Rts, NullSensorReproducesPriorMoments) {
  const auto m = benchmark("ou");
  const TimeGrid g(0.0, 2.0, 2000);
  const auto prior = kalman_bucy_solve(m, zeros(g), g);
  const auto rts = rts_smoother(prior, m, g);
  for (std::size_t i = 0; i <= g.n_steps(); ++i) {
    EXPECT_NEAR(rts.beliefs[i].mean[0], prior.beliefs[i].mean[0], 10.0 * g.step());
    EXPECT_NEAR(rts.beliefs[i].cov(0, 0), prior.beliefs[i].cov(0, 0), 10.0 * g.step());
  }
}

TEST(Rts, RequiresLinearGaussianModel) {
  const LgSetup s;
  EXPECT_THROW(rts_smoother(s.track, benchmark("sine1d"), s.grid), Error);
}

TEST(BackwardFlow, TerminalRecordIsTheTerminalSample) {
  const LgSetup s;
  const auto score = ScoreSource::exact_lg(s.model, s.track);
  FlowOptions opt;
  opt.recorded_steps = {500};
  const auto ens = backward_smoothing_flow(s.model, score, s.track, s.grid, 500, 3, opt);
  const auto [draws, how] = sample_filter_law(s.track, s.grid.n_steps(), 500, 3);
  EXPECT_EQ(how, "gaussian");
  const auto term = ens.terminal();
  ASSERT_EQ(term.size(), draws.size());
  for (std::size_t j = 0; j < draws.size(); ++j) EXPECT_EQ(term[j], draws[j]);
  for (double v : ens.states) EXPECT_TRUE(std::isfinite(v));
}

TEST(BackwardFlow, MatchesRtsOnLinearGaussian) {
  const LgSetup s;
  const auto score = ScoreSource::exact_lg(s.model, s.track);
  FlowOptions opt;
  opt.recorded_steps = {250, 500};
  const auto ens = backward_smoothing_flow(s.model, score, s.track, s.grid, 20000, 4, opt);
  const auto rts = rts_smoother(s.track, s.model, s.grid);
  for (std::size_t k : {250u, 500u}) {
    for (const auto& row : compare_moments(ens.snapshot(k), 1, rts.beliefs[k].mean, rts.beliefs[k].cov))
      EXPECT_TRUE(row.pass) << row.statistic << " z=" << row.z;
  }
}

TEST(BackwardFlow, StationaryOuReversalKeepsLaw) {
  const auto m = with_initial_law(benchmark("ou"), scalar_vector(0.0), scalar_matrix(1.0));
  const TimeGrid g(0.0, 2.0, 500);
  const auto prior = kalman_bucy_solve(m, zeros(g), g);
  const auto score = ScoreSource::exact_lg(m, prior);
  FlowOptions opt;
  opt.recorded_steps = {0, 250};
  const auto ens = backward_smoothing_flow(m, score, prior, g, 20000, 5, opt);
  for (std::size_t k : {0u, 250u})
    for (const auto& row : compare_moments(ens.snapshot(k), 1, prior.beliefs[k].mean, prior.beliefs[k].cov))
      EXPECT_TRUE(row.pass) << row.statistic << " z=" << row.z;
}

TEST(BackwardFlow, HalvingStepReducesMeanBias) {
  // A smooth observation record (dY = c h) isolates the O(h) bias of the
  // scheme from the pathwise error of a rough record. Reference: RTS on a
  // much finer grid.
  const auto m = benchmark("lg1d");
  auto smoother = [&](std::size_t n) {
    const TimeGrid g(0.0, 2.0, n);
    const auto track = kalman_bucy_solve(m, std::vector<Vector>(n, scalar_vector(0.8 * g.step())), g);
    return std::make_pair(track, rts_smoother(track, m, g));
  };
  const double ref = smoother(64000).second.beliefs[16000].mean[0];
  auto bias = [&](std::size_t n_steps) {
    const auto [track, rts] = smoother(n_steps);
    const std::size_t k = track.grid.require_node(0.5);
    FlowOptions opt;
    opt.recorded_steps = {k};
    const auto ens = backward_smoothing_flow(m, ScoreSource::exact_lg(m, track), track, track.grid, 200000, 6, opt);
    // remove the terminal sampling error, which the linear flow carries with factor Phi
    const double term_err = sample_moments(ens.terminal(), 1).mean[0] - track.beliefs.back().mean[0];
    return std::abs(sample_moments(ens.snapshot(k), 1).mean[0] - rts.transition[k](0, 0) * term_err - ref);
  };
  const double coarse = bias(20);
  const double finer = bias(40);
  EXPECT_LT(finer, coarse) << "coarse " << coarse << " finer " << finer;
}

TEST(TimeReversal, StationaryOuHasForwardDrift) {
  const auto m = with_initial_law(benchmark("ou"), scalar_vector(0.0), scalar_matrix(1.0));
  const TimeGrid g(0.0, 1.0, 100);
  const auto prior = kalman_bucy_solve(m, zeros(g), g);
  const auto score = ScoreSource::exact_lg(m, prior);
  for (double x : {-2.0, 0.3, 1.7}) EXPECT_NEAR(time_reversal_drift(m, score, 1.0, 0.4, scalar_vector(x))[0], -x, 1e-9);
}

TEST(TimeReversal, BrownianDriftPointsHome) {
  const double x0 = 0.5;
  const auto m = with_initial_law(benchmark("bm"), scalar_vector(x0), scalar_matrix(0.0));
  const TimeGrid g(0.0, 1.0, 100);
  const auto prior = kalman_bucy_solve(m, zeros(g), g);
  const auto score = ScoreSource::exact_lg(m, prior);
  const double u = 0.6;  // time to go is the forward time u
  for (double x : {-1.0, 2.0}) EXPECT_NEAR(time_reversal_drift(m, score, 1.0, 1.0 - u, scalar_vector(x))[0], -(x - x0) / u, 1e-9);
  EXPECT_NEAR(time_reversal_drift(m, score, 1.0, 1.0 - u, scalar_vector(x0))[0], 0.0, 1e-12);
}

TEST(TimeReversal, BackwardDriftEqualsReversalDrift) {
  const auto m = benchmark("ou");
  const TimeGrid g(0.0, 2.0, 200);
  const auto prior = kalman_bucy_solve(m, zeros(g), g);
  const auto score = ScoreSource::exact_lg(m, prior);
  const NoiseStream probe(8, Stream::Generic);
  for (std::uint64_t p = 0; p < 100; ++p) {
    const std::size_t node = 1 + p % g.n_steps();
    const Vector x = scalar_vector(2.0 * probe.normal(p, 0, 0));
    const double flow = backward_drift(m, g.node(node), x, score.evaluate(node, x))[0];
    const double rev = time_reversal_drift(m, score, 2.0, 2.0 - g.node(node), x)[0];
    EXPECT_NEAR(flow, rev, 1e-12);
  }
}

TEST(TimeReversal, NeedsNullSensor) {
  const LgSetup s;
  EXPECT_THROW(time_reversal_drift(s.model, ScoreSource::exact_lg(s.model, s.track), 2.0, 1.0, scalar_vector(0.0)), Error);
}

TEST(Semigroup, DeterministicFlowComposesExactly) {
  const auto m = make_linear_gaussian("still", scalar_matrix(-0.5), scalar_matrix(1.0), scalar_matrix(0.0),
                                      scalar_matrix(1.0), scalar_vector(1.0), scalar_matrix(1.0));
  const TimeGrid g(0.0, 1.0, 200);
  const auto track = kalman_bucy_solve(m, increments_of(simulate_forward(m, g, 4, 1, std::vector<std::size_t>{0})), g);
  const auto rep = semigroup_check(m, ScoreSource::exact_lg(m, track), track, 1.0, 0.6, 0.2, 100, 9);
  EXPECT_LE(rep.max_state_difference, 1e-12);
}

TEST(Semigroup, LinearGaussianCompositionAgrees) {
  const LgSetup s;
  const auto rep = semigroup_check(s.model, ScoreSource::exact_lg(s.model, s.track), s.track, 2.0, 1.0, 0.5, 20000, 12);
  EXPECT_TRUE(rep.pass) << "max |z| " << rep.max_abs_z;
}

TEST(Semigroup, IntermediateTimeMustLieBetween) {
  const LgSetup s;
  try {
    semigroup_check(s.model, ScoreSource::exact_lg(s.model, s.track), s.track, 2.0, 0.2, 0.5, 100, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PreconditionFailed);
  }
}

TEST(Duality, ConstantsAndCubic) {
  const LgSetup s;
  FlowOptions opt;
  opt.recorded_steps = {500};
  const auto ens = backward_smoothing_flow(s.model, ScoreSource::exact_lg(s.model, s.track), s.track, s.grid, 2000, 2, opt);
  const auto one = Polynomial::constant(1, 1.0);
  const auto rep = duality_check(s.model, s.track, ens, one, one, 500);
  EXPECT_EQ(rep.monte_carlo, 1.0);
  EXPECT_EQ(rep.reference, 1.0);
  try {
    duality_check(s.model, s.track, ens, Polynomial::power(1, 0, 3), one, 500);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedTestFunction);
  }
}

TEST(Duality, CrossMomentOfIdentity) {
  const LgSetup s;
  FlowOptions opt;
  opt.recorded_steps = {500};
  const auto ens = backward_smoothing_flow(s.model, ScoreSource::exact_lg(s.model, s.track), s.track, s.grid, 20000, 21, opt);
  const auto x = Polynomial::coordinate(1, 0);
  const auto rep = duality_check(s.model, s.track, ens, x, x, 500);
  EXPECT_TRUE(rep.pass) << "z " << rep.z;
}

TEST(OperatorConsistency, Examples) {
  const auto std_normal = gaussian_density(-8.0, 8.0, 1600, 0.0, 1.0);
  const auto bm = benchmark("bm");
  const auto [e0, d0] = operator_consistency(bm, 0.5, std_normal, Polynomial::constant(1, 3.0), 0.5);
  EXPECT_EQ(e0, 0.0);
  EXPECT_EQ(d0, 0.0);
  const auto [e1, d1] = operator_consistency(bm, 0.5, std_normal, Polynomial::coordinate(1, 0), 0.5);
  EXPECT_NEAR(e1, -0.5, 1e-3);
  EXPECT_NEAR(d1, -0.5, 1e-3);
  const auto sine = benchmark("sine1d");
  const auto p = gaussian_density(-6.0, 6.0, 1200, 0.3, 0.5);
  for (double x : {-1.0, 0.2, 0.9}) {
    const auto [e2, d2] = operator_consistency(sine, 0.5, p, Polynomial::univariate({0.0, 0.0, 1.0}), x);
    EXPECT_NEAR(e2, d2, 1e-3) << x;
  }
}

TEST(SampleFromDensity, InverseCdfMatchesMoments) {
  const auto d = gaussian_density(-6.0, 8.0, 1400, 1.0, 2.0);
  const auto x = sample_from_density(d, 20000, NoiseStream(3, Stream::Terminal), 0);
  for (const auto& row : compare_moments(x, 1, scalar_vector(d.mean()), scalar_matrix(d.variance())))
    EXPECT_TRUE(row.pass) << row.statistic;
}
