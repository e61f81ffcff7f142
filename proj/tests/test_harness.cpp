#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "smoothlab/harness.hpp"

using namespace smoothlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "smoothlab_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json small_smooth() {
  return json::parse(R"({
    "name": "small",
    "model": "lg1d",
    "grid": {"t_start": 0.0, "t_end": 1.0, "n_steps": 200},
    "seed": 4,
    "ensemble": {"size": 3000},
    "snapshots": [0.5],
    "reference": "rts"
  })");
}

ErrorCode config_error_code(const json& doc, Command cmd = Command::Smooth) {
  try {
    const auto c = parse_config(doc);
    validate_for(c, cmd, build_model(c));
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::PreconditionFailed;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SMOOTHLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, BundledConfigsParse) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(SMOOTHLAB_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 3u);
}

TEST(Config, UnknownKeyIsRejectedWithItsName) {
  auto doc = small_smooth();
  doc["tolerances"] = {{"z_treshold", 4.0}};
  try {
    parse_config(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("tolerances.z_treshold"), std::string::npos);
  }
}

TEST(Config, BadValuesAreRejected) {
  auto doc = small_smooth();
  doc["grid"]["n_steps"] = 0;
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
  doc = small_smooth();
  doc["filter"] = {{"mode", "ensemble_kalman"}};
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
  doc = small_smooth();
  doc["model"] = "nope";
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
}

TEST(Config, OffGridSnapshotIsRejected) {
  auto doc = small_smooth();
  doc["snapshots"] = {0.5, 0.5021};
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
}

TEST(Config, RtsOracleNeedsLinearGaussianModel) {
  auto doc = small_smooth();
  doc["model"] = "sine1d";
  doc["filter"] = {{"mode", "zakai_grid"}};
  doc["score"] = {{"kind", "grid"}};
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
}

TEST(Config, ScoreKindMustMatchFilter) {
  auto doc = small_smooth();
  doc["score"] = {{"kind", "kde"}};
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
}

TEST(Config, InlineLinearGaussianModel) {
  const auto c = load_config(fs::path(SMOOTHLAB_CONFIG_DIR) / "inline_lg.json");
  const auto m = build_model(c);
  EXPECT_EQ(m.name(), "damped");
  EXPECT_DOUBLE_EQ(m.linear().A(0.0)(0, 0), -0.5);
  auto doc = c.source;
  doc["model"]["obs_noise"] = 0.0;
  EXPECT_EQ(config_error_code(doc), ErrorCode::ConfigError);
}

TEST(Config, HashIsCanonical) {
  const auto a = parse_config(small_smooth());
  const auto b = parse_config(json::parse(small_smooth().dump()));
  EXPECT_EQ(config_hash(a.source), config_hash(b.source));
  auto doc = small_smooth();
  doc["seed"] = 5;
  EXPECT_NE(config_hash(parse_config(doc).source), config_hash(a.source));
  EXPECT_EQ(config_hash(a.source).size(), 16u);
}

TEST(Pipeline, SmoothAgainstRtsWritesReportAndIsReproducible) {
  const auto c = parse_config(small_smooth());
  const auto dir1 = scratch("smooth1"), dir2 = scratch("smooth2");
  const auto rep = run_experiment(c, Command::Smooth, dir1);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.rows.size(), 2u);
  for (const char* f : {"report.json", "summary.txt", "observations.csv", "filter_track.csv", "ensemble.csv", "rts_track.csv"})
    EXPECT_TRUE(fs::exists(dir1 / f)) << f;
  const auto j = json::parse(slurp(dir1 / "report.json"));
  for (const auto& row : j["rows"]) EXPECT_EQ(row["config_hash"], rep.config_hash);
  run_experiment(c, Command::Smooth, dir2);
  EXPECT_EQ(slurp(dir1 / "report.json"), slurp(dir2 / "report.json"));
  EXPECT_EQ(slurp(dir1 / "ensemble.csv"), slurp(dir2 / "ensemble.csv"));
  const auto check = check_report(c, dir1);
  EXPECT_TRUE(check.pass);
  EXPECT_TRUE(check.hash_matches);
  auto other = small_smooth();
  other["seed"] = 99;
  EXPECT_FALSE(check_report(parse_config(other), dir1).hash_matches);
}

TEST(Pipeline, ReverseStationaryOu) {
  const auto c = parse_config(json::parse(R"({
    "model": "ou", "grid": {"t_end": 2.0, "n_steps": 400}, "seed": 3,
    "ensemble": {"size": 5000}, "snapshots": [0.5, 1.0], "reference": "analytic"})"));
  const auto rep = run_experiment(c, Command::Reverse, scratch("reverse"));
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.rows.size(), 4u);
}

TEST(Pipeline, ReverseNeedsNullSensor) {
  const auto c = parse_config(json::parse(R"({"model": "lg1d", "reference": "analytic"})"));
  try {
    run_experiment(c, Command::Reverse, scratch("reverse_bad"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Pipeline, ParticleFilterAgainstKalman) {
  const auto c = parse_config(json::parse(R"({
    "model": "lg1d", "grid": {"t_end": 1.0, "n_steps": 200}, "seed": 6,
    "filter": {"mode": "particle", "particles": 5000}, "snapshots": [0.5, 1.0], "reference": "analytic"})"));
  const auto dir = scratch("filter");
  const auto rep = run_experiment(c, Command::Filter, dir);
  EXPECT_TRUE(rep.pass);
  EXPECT_TRUE(fs::exists(dir / "particles_step100.csv"));
}

TEST(Pipeline, GridOracleOnLinearGaussian) {
  const auto c = parse_config(json::parse(R"({
    "model": "lg1d", "grid": {"t_end": 1.0, "n_steps": 200}, "seed": 6,
    "snapshots": [0.5], "reference": "pde", "pde": {"dx": 0.02}})"));
  const auto rep = run_experiment(c, Command::Oracle, scratch("oracle"));
  EXPECT_TRUE(rep.pass);
  EXPECT_GE(rep.rows.size(), 4u);
}

TEST(Pipeline, SmoothSine1dAgainstGridOracle) {
  const auto c = parse_config(json::parse(R"({
    "model": "sine1d", "grid": {"t_end": 1.0, "n_steps": 250}, "seed": 2,
    "filter": {"mode": "zakai_grid"}, "score": {"kind": "grid"}, "ensemble": {"size": 5000},
    "snapshots": [0.5], "reference": "pde", "pde": {"dx": 0.02}})"));
  const auto rep = run_experiment(c, Command::Smooth, scratch("sine"));
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.diagnostics["terminal_source"], "grid_inverse_cdf");
}

TEST(Pipeline, SimulateWritesPaths) {
  const auto c = parse_config(json::parse(R"({
    "model": "ou", "grid": {"t_end": 1.0, "n_steps": 100}, "simulate": {"paths": 2000},
    "snapshots": [1.0], "reference": "analytic"})"));
  const auto dir = scratch("simulate");
  const auto rep = run_experiment(c, Command::Simulate, dir);
  EXPECT_TRUE(rep.pass);
  EXPECT_TRUE(fs::exists(dir / "paths.csv"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const auto cfg = dir / "bad.json";
  std::ofstream(cfg) << R"({"model": "lg1d", "bogus": 1})";
  EXPECT_EQ(run_cli("smooth --config " + cfg.string() + " --out " + (dir / "bad").string()), 2);
  EXPECT_EQ(run_cli("smooth --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("--version"), 0);
}

TEST(Cli, BundledRtsConfigPassesAndReportChecks) {
  const auto out = scratch("cli_rts");
  EXPECT_EQ(run_cli("smooth --config lg1d_rts --out " + out.string()), 0);
  EXPECT_EQ(run_cli("report --config lg1d_rts --out " + out.string()), 0);
  // checked against another config, the hash no longer matches
  EXPECT_EQ(run_cli("report --config lg2d_rts --out " + out.string()), 1);
}
