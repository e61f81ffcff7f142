#ifndef SMOOTHLAB_HARNESS_HPP
#define SMOOTHLAB_HARNESS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "smoothlab/acceptance.hpp"
#include "smoothlab/density_grid.hpp"
#include "smoothlab/errors.hpp"
#include "smoothlab/filtering.hpp"
#include "smoothlab/io.hpp"
#include "smoothlab/model.hpp"
#include "smoothlab/pde_oracle.hpp"
#include "smoothlab/report.hpp"
#include "smoothlab/score.hpp"
#include "smoothlab/sde.hpp"
#include "smoothlab/smoothing.hpp"
#include "smoothlab/stats.hpp"

#ifndef SMOOTHLAB_VERSION
#define SMOOTHLAB_VERSION "0.0.0"
#endif

namespace smoothlab {

using json = nlohmann::json;

enum class Command { Simulate, Filter, Smooth, Reverse, Oracle, Verify, Report };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::Simulate: return "simulate";
    case Command::Filter: return "filter";
    case Command::Smooth: return "smooth";
    case Command::Reverse: return "reverse";
    case Command::Oracle: return "oracle";
    case Command::Verify: return "verify";
    case Command::Report: return "report";
  }
  return "unknown";
}

inline Command parse_command(const std::string& s) {
  for (auto c : {Command::Simulate, Command::Filter, Command::Smooth, Command::Reverse, Command::Oracle,
                 Command::Verify, Command::Report})
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::ConfigError, "unknown subcommand '" + s + "'");
}

struct InlineModel {
  std::string name = "inline";
  Matrix A, B, Sigma, obs_noise;
  Vector initial_mean;
  Matrix initial_cov;
};

/// Parsed experiment description; every field has a default except where
/// a subcommand needs it.
struct ExperimentConfig {
  std::string name = "experiment";
  std::string model_name = "lg1d";
  std::optional<InlineModel> inline_model;
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t n_steps = 1000;
  std::uint64_t seed = 1;
  std::size_t paths = 1;
  std::string filter_mode = "kalman";
  std::size_t particles = 10000;
  double resample_threshold = 0.5;
  std::string score_kind = "exact_lg";
  double bandwidth = 0.0;
  double score_clip = kDefaultScoreClip;
  double floor_fraction = kDefaultFloorFraction;
  std::size_t ensemble_size = 10000;
  std::vector<double> snapshots;
  std::string reference = "none";
  double pde_dx = 0.01;
  double pde_width = 8.0;
  std::size_t pilot_particles = 2000;
  double z_threshold = 3.0;
  double l1_threshold = 0.05;
  double abs_dx_multiple = 2.0;
  double zakai_rel_tol = 0.02;
  double zakai_dx_multiple = 5.0;
  double verify_scale = 1.0;
  std::vector<std::string> verify_criteria;
  std::string output = "out";
  /// Canonical form of the source document, used for the hash.
  json source;

  TimeGrid grid() const { return TimeGrid(t_start, t_end, n_steps); }
};

namespace config_detail {

[[noreturn]] inline void fail(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::ConfigError, "field '" + field + "': " + msg);
}

inline void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(where, "expected an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) fail(where.empty() ? k : where + "." + k, "unknown key");
}

inline double number(const json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(field, "must be finite");
  return d;
}

inline double positive(const json& v, const std::string& field) {
  const double d = number(v, field);
  if (!(d > 0.0)) fail(field, "must be > 0");
  return d;
}

inline std::size_t count(const json& v, const std::string& field, std::size_t min = 1) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) fail(field, "expected an integer");
  const auto i = v.get<long long>();
  if (i < static_cast<long long>(min)) fail(field, "must be >= " + std::to_string(min));
  return static_cast<std::size_t>(i);
}

inline std::string text(const json& v, const std::string& field, const std::set<std::string>& choices = {}) {
  if (!v.is_string()) fail(field, "expected a string");
  auto s = v.get<std::string>();
  if (!choices.empty() && !choices.count(s)) {
    std::string list;
    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
    fail(field, "'" + s + "' is not one of: " + list);
  }
  return s;
}

inline Matrix matrix(const json& v, const std::string& field) {
  if (v.is_number()) return scalar_matrix(number(v, field));
  if (!v.is_array() || v.empty()) fail(field, "expected a number or a non-empty array of rows");
  const auto rows = static_cast<int>(v.size());
  if (!v[0].is_array() || v[0].empty()) fail(field, "expected an array of rows");
  const auto cols = static_cast<int>(v[0].size());
  if (rows > kMaxDim || cols > kMaxDim) fail(field, "dimension exceeds " + std::to_string(kMaxDim));
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!v[r].is_array() || static_cast<int>(v[r].size()) != cols) fail(field, "rows have different lengths");
    for (int c = 0; c < cols; ++c)
      m(r, c) = number(v[r][c], field + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
  }
  return m;
}

inline Vector vector(const json& v, const std::string& field) {
  if (v.is_number()) return scalar_vector(number(v, field));
  if (!v.is_array() || v.empty() || static_cast<int>(v.size()) > kMaxDim) fail(field, "expected a short array");
  Vector x(static_cast<int>(v.size()));
  for (int k = 0; k < x.size(); ++k) x[k] = number(v[k], field + "[" + std::to_string(k) + "]");
  return x;
}

}  // namespace config_detail

/// Parses and validates the document structure (unknown keys are errors).
inline ExperimentConfig parse_config(const json& doc) {
  using namespace config_detail;
  check_keys(doc, "", {"name", "model", "grid", "seed", "simulate", "filter", "score", "ensemble", "snapshots",
                       "reference", "pde", "tolerances", "verify", "output"});
  ExperimentConfig c;
  c.source = doc;
  if (doc.contains("name")) c.name = text(doc["name"], "name");
  if (doc.contains("model")) {
    const auto& m = doc["model"];
    if (m.is_string()) {
      c.model_name = m.get<std::string>();
      const auto names = benchmark_names();
      if (std::find(names.begin(), names.end(), c.model_name) == names.end())
        fail("model", "unknown benchmark '" + c.model_name + "'");
    } else {
      check_keys(m, "model", {"name", "A", "B", "Sigma", "obs_noise", "initial_mean", "initial_cov"});
      InlineModel im;
      for (const char* k : {"A", "B", "Sigma", "obs_noise", "initial_mean", "initial_cov"})
        if (!m.contains(k)) fail(std::string("model.") + k, "missing");
      if (m.contains("name")) im.name = text(m["name"], "model.name");
      im.A = matrix(m["A"], "model.A");
      im.B = matrix(m["B"], "model.B");
      im.Sigma = matrix(m["Sigma"], "model.Sigma");
      im.obs_noise = matrix(m["obs_noise"], "model.obs_noise");
      im.initial_mean = vector(m["initial_mean"], "model.initial_mean");
      im.initial_cov = matrix(m["initial_cov"], "model.initial_cov");
      c.model_name = im.name;
      c.inline_model = im;
    }
  }
  if (doc.contains("grid")) {
    const auto& g = doc["grid"];
    check_keys(g, "grid", {"t_start", "t_end", "n_steps"});
    if (g.contains("t_start")) c.t_start = number(g["t_start"], "grid.t_start");
    if (g.contains("t_end")) c.t_end = number(g["t_end"], "grid.t_end");
    if (g.contains("n_steps")) c.n_steps = count(g["n_steps"], "grid.n_steps");
    if (!(c.t_end > c.t_start)) fail("grid.t_end", "must exceed grid.t_start");
  }
  if (doc.contains("seed")) c.seed = static_cast<std::uint64_t>(count(doc["seed"], "seed", 0));
  if (doc.contains("simulate")) {
    check_keys(doc["simulate"], "simulate", {"paths"});
    if (doc["simulate"].contains("paths")) c.paths = count(doc["simulate"]["paths"], "simulate.paths");
  }
  if (doc.contains("filter")) {
    const auto& f = doc["filter"];
    check_keys(f, "filter", {"mode", "particles", "resample_threshold"});
    if (f.contains("mode")) c.filter_mode = text(f["mode"], "filter.mode", {"kalman", "particle", "zakai_grid"});
    if (f.contains("particles")) c.particles = count(f["particles"], "filter.particles", 2);
    if (f.contains("resample_threshold")) {
      c.resample_threshold = number(f["resample_threshold"], "filter.resample_threshold");
      if (c.resample_threshold < 0.0 || c.resample_threshold > 1.0)
        fail("filter.resample_threshold", "must lie in [0, 1]");
    }
  }
  if (doc.contains("score")) {
    const auto& s = doc["score"];
    check_keys(s, "score", {"kind", "bandwidth", "clip", "floor_fraction"});
    if (s.contains("kind")) c.score_kind = text(s["kind"], "score.kind", {"exact_lg", "gaussian_fit", "kde", "grid"});
    if (s.contains("bandwidth")) c.bandwidth = number(s["bandwidth"], "score.bandwidth");
    if (s.contains("clip")) c.score_clip = positive(s["clip"], "score.clip");
    if (s.contains("floor_fraction")) c.floor_fraction = positive(s["floor_fraction"], "score.floor_fraction");
  }
  if (doc.contains("ensemble")) {
    check_keys(doc["ensemble"], "ensemble", {"size"});
    if (doc["ensemble"].contains("size")) c.ensemble_size = count(doc["ensemble"]["size"], "ensemble.size");
  }
  if (doc.contains("snapshots")) {
    if (!doc["snapshots"].is_array()) fail("snapshots", "expected an array of times");
    for (std::size_t i = 0; i < doc["snapshots"].size(); ++i)
      c.snapshots.push_back(number(doc["snapshots"][i], "snapshots[" + std::to_string(i) + "]"));
  }
  if (doc.contains("reference")) c.reference = text(doc["reference"], "reference", {"rts", "pde", "analytic", "none"});
  if (doc.contains("pde")) {
    const auto& p = doc["pde"];
    check_keys(p, "pde", {"dx", "width", "pilot_particles"});
    if (p.contains("dx")) c.pde_dx = positive(p["dx"], "pde.dx");
    if (p.contains("width")) c.pde_width = positive(p["width"], "pde.width");
    if (p.contains("pilot_particles")) c.pilot_particles = count(p["pilot_particles"], "pde.pilot_particles", 2);
  }
  if (doc.contains("tolerances")) {
    const auto& t = doc["tolerances"];
    check_keys(t, "tolerances", {"z_threshold", "l1_threshold", "abs_dx_multiple", "zakai_rel_tol", "zakai_dx_multiple"});
    if (t.contains("z_threshold")) c.z_threshold = positive(t["z_threshold"], "tolerances.z_threshold");
    if (t.contains("l1_threshold")) c.l1_threshold = positive(t["l1_threshold"], "tolerances.l1_threshold");
    if (t.contains("abs_dx_multiple")) c.abs_dx_multiple = positive(t["abs_dx_multiple"], "tolerances.abs_dx_multiple");
    if (t.contains("zakai_rel_tol")) c.zakai_rel_tol = positive(t["zakai_rel_tol"], "tolerances.zakai_rel_tol");
    if (t.contains("zakai_dx_multiple"))
      c.zakai_dx_multiple = positive(t["zakai_dx_multiple"], "tolerances.zakai_dx_multiple");
  }
  if (doc.contains("verify")) {
    const auto& v = doc["verify"];
    check_keys(v, "verify", {"scale", "criteria"});
    if (v.contains("scale")) c.verify_scale = positive(v["scale"], "verify.scale");
    if (v.contains("criteria")) {
      if (!v["criteria"].is_array()) fail("verify.criteria", "expected an array");
      std::set<std::string> known;
      for (const auto& cr : acceptance::criteria()) known.insert(cr.id);
      for (std::size_t i = 0; i < v["criteria"].size(); ++i)
        c.verify_criteria.push_back(text(v["criteria"][i], "verify.criteria[" + std::to_string(i) + "]", known));
    }
  }
  if (doc.contains("output")) c.output = text(doc["output"], "output");
  return c;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_json_file(path)); }

/// FNV-1a over the canonical (sorted-key, compact) serialization.
inline std::string config_hash(const json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : doc.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ModelSpec build_model(const ExperimentConfig& c) {
  if (!c.inline_model) return benchmark(c.model_name);
  const auto& m = *c.inline_model;
  try {
    return make_linear_gaussian(m.name, m.A, m.B, m.Sigma, m.obs_noise, m.initial_mean, m.initial_cov);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("field 'model': ") + e.what());
  }
}

/// Cross-field checks that depend on the subcommand.
inline void validate_for(const ExperimentConfig& c, Command cmd, const ModelSpec& model) {
  using config_detail::fail;
  if (cmd == Command::Verify || cmd == Command::Report) return;
  const TimeGrid grid = c.grid();
  for (std::size_t i = 0; i < c.snapshots.size(); ++i)
    if (!grid.node_index(c.snapshots[i]))
      fail("snapshots[" + std::to_string(i) + "]", "time " + io::format_double(c.snapshots[i]) + " is not a grid node");
  const bool lg = model.is_linear_gaussian();
  const bool one_d = model.dim_state() == 1 && model.dim_obs() == 1;
  if (c.reference == "rts" && !lg) fail("reference", "rts oracle unavailable for non-linear-Gaussian model '" + model.name() + "'");
  if (c.reference == "rts" && cmd != Command::Smooth && cmd != Command::Oracle)
    fail("reference", "rts applies to smooth and oracle");
  if (c.reference == "analytic" && !lg) fail("reference", "analytic reference needs a linear-Gaussian model");
  if (c.reference == "pde" && !one_d) fail("reference", "pde oracle is one-dimensional");
  if (cmd == Command::Oracle && c.reference == "none") fail("reference", "oracle needs rts, pde or analytic");
  if (c.filter_mode == "kalman" && !lg && cmd != Command::Simulate)
    fail("filter.mode", "kalman needs a linear-Gaussian model");
  if (c.filter_mode == "zakai_grid" && !one_d) fail("filter.mode", "zakai_grid is one-dimensional");
  if (cmd == Command::Smooth) {
    if (c.score_kind == "exact_lg" && c.filter_mode != "kalman") fail("score.kind", "exact_lg needs filter.mode kalman");
    if (c.score_kind == "kde" && c.filter_mode != "particle") fail("score.kind", "kde needs filter.mode particle");
    if (c.score_kind == "grid" && c.filter_mode != "zakai_grid") fail("score.kind", "grid needs filter.mode zakai_grid");
  }
  if (cmd == Command::Reverse) {
    if (!model.null_sensor()) fail("model", "reverse needs a model with b = 0");
    if (!lg && !one_d) fail("model", "reverse for a nonlinear model needs the 1D density solver");
    if (c.reference == "rts") fail("reference", "reverse compares against analytic or pde marginals");
  }
}

/// Output of one pipeline run.
struct ComparisonReport {
  std::string command;
  std::string config_name;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<ReportRow> rows;
  json diagnostics = json::object();
  bool pass = false;
};

inline json to_json(const ReportRow& r, const std::string& hash) {
  json j;
  j["criterion"] = r.criterion.empty() ? json(nullptr) : json(r.criterion);
  j["time"] = r.time ? json(*r.time) : json(nullptr);
  j["statistic"] = r.statistic;
  j["estimate"] = r.estimate;
  j["reference"] = r.reference;
  j["standard_error"] = r.standard_error ? json(*r.standard_error) : json(nullptr);
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["threshold"] = r.threshold;
  j["lower"] = r.lower ? json(*r.lower) : json(nullptr);
  j["pass"] = r.pass;
  j["config_hash"] = hash;
  return j;
}

inline json to_json(const ComparisonReport& rep) {
  json j;
  j["tool"] = "smoothlab";
  j["version"] = SMOOTHLAB_VERSION;
  j["command"] = rep.command;
  j["config_name"] = rep.config_name;
  j["config_hash"] = rep.config_hash;
  j["seed"] = rep.seed;
  j["rows"] = json::array();
  for (const auto& r : rep.rows) j["rows"].push_back(to_json(r, rep.config_hash));
  j["diagnostics"] = rep.diagnostics;
  j["expected_false_fail_rate"] = expected_false_fail_rate(rep.rows);
  j["pass"] = rep.pass;
  return j;
}

inline std::string summary_text(const ComparisonReport& rep) {
  std::ostringstream s;
  std::size_t failed = 0;
  for (const auto& r : rep.rows) failed += !r.pass;
  s << "pass=" << (rep.pass ? "true" : "false") << "\n";
  s << "command=" << rep.command << "\n";
  s << "config=" << rep.config_name << "\n";
  s << "config_hash=" << rep.config_hash << "\n";
  s << "seed=" << rep.seed << "\n";
  s << "rows=" << rep.rows.size() << "\n";
  s << "failed=" << failed << "\n";
  for (const auto& r : rep.rows) {
    s << (r.pass ? "PASS " : "FAIL ") << (r.criterion.empty() ? "" : r.criterion + " ");
    if (r.time) s << "t=" << io::format_double(*r.time) << " ";
    s << r.statistic << " " << r.metric << "=" << io::format_double(r.value) << " threshold="
      << io::format_double(r.threshold) << "\n";
  }
  return s.str();
}

inline void write_report(const ComparisonReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "report.json").string());
    out << to_json(rep).dump(2) << "\n";
  }
  std::ofstream out(dir / "summary.txt");
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "summary.txt").string());
  out << summary_text(rep);
}

namespace pipeline {

/// Runs `fn`, re-raising module errors with the stage name.
template <class Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_with_context(e, name);
  }
}

inline std::vector<std::size_t> snapshot_steps(const ExperimentConfig& c, const TimeGrid& grid) {
  std::vector<std::size_t> s;
  for (double t : c.snapshots) s.push_back(grid.require_node(t));
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

struct FilterOutput {
  FilterTrack track;
  std::optional<ZakaiResult> zakai;
};

inline DensityGrid initial_density(const ModelSpec& model, const SpatialDomain& dom) {
  return gaussian_density(dom.x_min, dom.x_max, dom.n_cells, model.initial_mean()[0], model.initial_cov()(0, 0));
}

/// Spatial domain from a pilot run: Kalman moments for LG models, a small
/// particle filter otherwise.
inline SpatialDomain pilot_domain(const ExperimentConfig& c, const ModelSpec& model, const TimeGrid& grid,
                                  std::span<const Vector> incs) {
  if (model.is_linear_gaussian()) return auto_domain(kalman_bucy_solve(model, incs, grid).beliefs, c.pde_dx, c.pde_width);
  const auto pilot = particle_filter(model, incs, grid, c.pilot_particles, derive_seed(c.seed, "pilot"));
  return auto_domain(pilot.beliefs, c.pde_dx, c.pde_width);
}

inline FilterOutput run_filter(const ExperimentConfig& c, const ModelSpec& model, const TimeGrid& grid,
                               std::span<const Vector> incs, const std::vector<std::size_t>& keep) {
  FilterOutput out{FilterTrack{grid}, std::nullopt};
  if (c.filter_mode == "kalman") {
    out.track = stage("filter", [&] { return kalman_bucy_solve(model, incs, grid); });
  } else if (c.filter_mode == "particle") {
    ParticleFilterOptions opt;
    opt.resample_threshold = c.resample_threshold;
    opt.keep_clouds = keep;
    opt.keep_all_clouds = c.score_kind == "kde";
    out.track = stage("filter", [&] { return particle_filter(model, incs, grid, c.particles, derive_seed(c.seed, "filter"), opt); });
  } else {
    const auto dom = stage("pilot", [&] { return pilot_domain(c, model, grid, incs); });
    out.zakai = stage("filter", [&] { return solve_zakai_1d(model, incs, initial_density(model, dom), grid); });
    out.track = zakai_track(model, grid, *out.zakai);
  }
  return out;
}

inline ScoreSource build_score(const ExperimentConfig& c, const ModelSpec& model, const FilterOutput& f) {
  return stage("score", [&] {
    if (c.score_kind == "exact_lg") return ScoreSource::exact_lg(model, f.track, c.score_clip);
    if (c.score_kind == "gaussian_fit") return ScoreSource::gaussian_fit(model, f.track, c.score_clip);
    if (c.score_kind == "kde") return ScoreSource::kde(model, f.track, c.bandwidth, c.score_clip);
    return ScoreSource::grid(model, f.track.grid, f.zakai->densities, c.floor_fraction, c.score_clip);
  });
}

/// Ensemble moment rows against a Gaussian reference.
inline void gaussian_rows(ComparisonReport& rep, const ExperimentConfig& c, const SmoothingEnsemble& ens,
                          std::size_t step, const GaussianBelief& ref) {
  const auto cmp = compare_moments(ens.snapshot(step), ens.dim, ref.mean, ref.cov, c.z_threshold);
  for (auto& r : z_rows("", ens.grid.node(step), cmp, c.z_threshold)) rep.rows.push_back(r);
}

/// Ensemble rows against a tabulated density: mean and variance within
/// max(z SE, k dx), and the L1 distance of a kernel estimate.
inline void density_rows(ComparisonReport& rep, const ExperimentConfig& c, const SmoothingEnsemble& ens,
                         std::size_t step, const DensityGrid& ref) {
  const double t = ens.grid.node(step);
  const auto mom = sample_moments(ens.snapshot(step), 1);
  const double dx = ref.dx();
  rep.rows.push_back(abs_row("", t, "mean[0]", mom.mean[0], ref.mean(),
                             std::max(c.z_threshold * mom.mean_se[0], c.abs_dx_multiple * dx)));
  rep.rows.back().standard_error = mom.mean_se[0];
  rep.rows.push_back(abs_row("", t, "cov[0,0]", mom.cov(0, 0), ref.variance(),
                             std::max(c.z_threshold * mom.cov_se(0, 0), c.abs_dx_multiple * dx)));
  rep.rows.back().standard_error = mom.cov_se(0, 0);
  const auto kde = kde_on_grid(ens.component(step, 0), ref);
  rep.rows.push_back(bound_row("", t, "kde_l1", "l1", compare_densities(kde, ref), c.l1_threshold));
}

/// Zakai moments vs Kalman within max(rel |ref|, k dx).
inline void zakai_vs_kalman_rows(ComparisonReport& rep, const ExperimentConfig& c, const TimeGrid& grid,
                                 const ZakaiResult& z, const FilterTrack& kalman,
                                 const std::vector<std::size_t>& steps) {
  const double dx = z.densities.front().dx();
  for (auto k : steps) {
    const double m = z.densities[k].mean();
    const double v = z.densities[k].variance();
    const double mk = kalman.beliefs[k].mean[0];
    const double vk = kalman.beliefs[k].cov(0, 0);
    rep.rows.push_back(abs_row("", grid.node(k), "filter_mean[0]", m, mk,
                               std::max(c.zakai_rel_tol * std::abs(mk), c.zakai_dx_multiple * dx)));
    rep.rows.push_back(abs_row("", grid.node(k), "filter_cov[0,0]", v, vk,
                               std::max(c.zakai_rel_tol * std::abs(vk), c.zakai_dx_multiple * dx)));
  }
}

inline double max_mass_error(const std::vector<DensityGrid>& seq) {
  double e = 0.0;
  for (const auto& d : seq) e = std::max(e, std::abs(d.mass() - 1.0));
  return e;
}

inline std::vector<Vector> observe(const ExperimentConfig& c, const ModelSpec& model, const TimeGrid& grid,
                                   const std::filesystem::path& dir) {
  const auto paths = stage("simulate", [&] {
    return simulate_forward(model, grid, derive_seed(c.seed, "observations"), 1, std::vector<std::size_t>{0});
  });
  io::write_observations(dir / "observations.csv", paths);
  return increments_of(paths);
}

inline void run_simulate(ComparisonReport& rep, const ExperimentConfig& c, const ModelSpec& model,
                         const std::filesystem::path& dir) {
  const TimeGrid grid = c.grid();
  auto steps = snapshot_steps(c, grid);
  steps.push_back(0);
  steps.push_back(grid.n_steps());
  const auto paths = stage("simulate", [&] { return simulate_forward(model, grid, derive_seed(c.seed, "observations"), c.paths, steps); });
  io::write_paths(dir / "paths.csv", paths);
  io::write_observations(dir / "observations.csv", paths);
  if (c.reference == "analytic" && c.paths >= kMinSamples) {
    const auto prior = prior_moments(model, grid);
    for (auto k : snapshot_steps(c, grid)) {
      const auto cmp = compare_moments(paths.snapshot(*paths.record_of_step(k)), model.dim_state(), prior[k].mean,
                                       prior[k].cov, c.z_threshold);
      for (auto& r : z_rows("", grid.node(k), cmp, c.z_threshold)) rep.rows.push_back(r);
    }
  }
}

inline void run_filter_command(ComparisonReport& rep, const ExperimentConfig& c, const ModelSpec& model,
                               const std::filesystem::path& dir) {
  const TimeGrid grid = c.grid();
  const auto steps = snapshot_steps(c, grid);
  const auto incs = observe(c, model, grid, dir);
  const auto f = run_filter(c, model, grid, incs, steps);
  io::write_filter_track(dir / "filter_track.csv", f.track);
  rep.diagnostics["final_log_normalizer"] = f.track.log_normalizer.back();
  if (f.track.mode == FilterMode::Particle) {
    for (auto k : steps) io::write_cloud(dir / ("particles_step" + std::to_string(k) + ".csv"), f.track.cloud(k));
    rep.diagnostics["resample_count"] = f.track.resample_steps.size();
    double werr = 0.0;
    for (double e : f.track.weight_sum_error) werr = std::max(werr, e);
    rep.diagnostics["max_weight_sum_error"] = werr;
  }
  if (f.zakai) {
    io::write_density_sequence(dir / "filter_densities.csv", grid, f.zakai->densities, steps);
    rep.diagnostics["max_mass_error"] = max_mass_error(f.zakai->densities);
  }
  if (c.reference == "analytic" && f.track.mode != FilterMode::Gaussian) {
    const auto kalman = kalman_bucy_solve(model, incs, grid);
    if (f.zakai) {
      zakai_vs_kalman_rows(rep, c, grid, *f.zakai, kalman, steps);
    } else {
      for (auto k : steps) {
        const auto& cloud = f.track.cloud(k);
        const auto mom = cloud.moments();
        for (int d = 0; d < model.dim_state(); ++d) {
          const double se = std::sqrt(mom.cov(d, d) / cloud.ess());
          const auto m = make_row("filter_mean[" + std::to_string(d) + "]", mom.mean[d], kalman.beliefs[k].mean[d], se,
                                  c.z_threshold);
          rep.rows.push_back(z_row("", grid.node(k), m, c.z_threshold));
        }
      }
    }
  }
  if (c.reference == "pde" && !f.zakai) {
    const auto dom = stage("pilot", [&] { return pilot_domain(c, model, grid, incs); });
    const auto z = stage("oracle", [&] { return solve_zakai_1d(model, incs, initial_density(model, dom), grid); });
    for (auto k : steps) {
      const auto mom = f.track.beliefs[k];
      const double se = f.track.mode == FilterMode::Particle ? std::sqrt(mom.cov(0, 0) / f.track.cloud(k).ess()) : 0.0;
      const auto m = make_row("filter_mean[0]", mom.mean[0], z.densities[k].mean(), se, c.z_threshold);
      rep.rows.push_back(z_row("", grid.node(k), m, c.z_threshold));
    }
  }
}

inline void run_smooth(ComparisonReport& rep, const ExperimentConfig& c, const ModelSpec& model,
                       const std::filesystem::path& dir) {
  const TimeGrid grid = c.grid();
  const auto steps = snapshot_steps(c, grid);
  const auto incs = observe(c, model, grid, dir);
  std::vector<std::size_t> keep = steps;
  const auto f = run_filter(c, model, grid, incs, keep);
  io::write_filter_track(dir / "filter_track.csv", f.track);
  const auto score = build_score(c, model, f);
  FlowOptions opt;
  opt.recorded_steps = steps;
  if (f.zakai) opt.terminal_density = f.zakai->densities.back();
  const auto ens = stage("smooth", [&] {
    return backward_smoothing_flow(model, score, f.track, grid, c.ensemble_size, derive_seed(c.seed, "flow"), opt);
  });
  auto written = steps;
  written.push_back(grid.n_steps());
  std::sort(written.begin(), written.end());
  written.erase(std::unique(written.begin(), written.end()), written.end());
  io::write_ensemble(dir / "ensemble.csv", ens, written);
  rep.diagnostics["terminal_source"] = ens.terminal_source;
  rep.diagnostics["score_kind"] = to_string(score.kind());

  if (c.reference == "rts") {
    const auto kalman = f.track.mode == FilterMode::Gaussian ? f.track : kalman_bucy_solve(model, incs, grid);
    const auto rts = stage("oracle", [&] { return rts_smoother(kalman, model, grid); });
    io::write_rts_track(dir / "rts_track.csv", rts);
    for (auto k : steps) gaussian_rows(rep, c, ens, k, rts.beliefs[k]);
  } else if (c.reference == "pde") {
    std::optional<ZakaiResult> z = f.zakai;
    if (!z) {
      const auto dom = stage("pilot", [&] { return pilot_domain(c, model, grid, incs); });
      z = stage("oracle", [&] { return solve_zakai_1d(model, incs, initial_density(model, dom), grid); });
    }
    const auto back = stage("oracle", [&] {
      return solve_backward_smoothing_density_1d(model, z->densities, grid, z->densities.back());
    });
    io::write_density_sequence(dir / "oracle_densities.csv", grid, back.densities, steps);
    double masked = 0.0;
    for (double m : back.masked_mass) masked = std::max(masked, m);
    rep.diagnostics["max_masked_mass"] = masked;
    for (auto k : steps) density_rows(rep, c, ens, k, back.densities[k]);
  }
}

inline void run_reverse(ComparisonReport& rep, const ExperimentConfig& c, const ModelSpec& model,
                        const std::filesystem::path& dir) {
  const TimeGrid grid = c.grid();
  const auto steps = snapshot_steps(c, grid);
  const std::vector<Vector> zeros(grid.n_steps(), Vector::Zero(model.dim_obs()));
  FlowOptions opt;
  opt.recorded_steps = steps;
  std::optional<ScoreSource> score;
  FilterTrack prior{grid};
  std::vector<DensityGrid> forward;
  if (model.is_linear_gaussian() && c.reference != "pde") {
    prior = stage("prior", [&] { return kalman_bucy_solve(model, zeros, grid); });
    score = ScoreSource::exact_lg(model, prior, c.score_clip);
  } else {
    const auto dom = stage("pilot", [&] {
      if (model.is_linear_gaussian()) return auto_domain(prior_moments(model, grid), c.pde_dx, c.pde_width);
      return pipeline::pilot_domain(c, model, grid, zeros);
    });
    forward = stage("prior", [&] { return solve_fokker_planck_1d(model, initial_density(model, dom), grid); });
    ZakaiResult z{forward, std::vector<double>(forward.size(), 0.0)};
    prior = zakai_track(model, grid, z);
    score = stage("score", [&] { return ScoreSource::grid(model, grid, forward, c.floor_fraction, c.score_clip); });
    opt.terminal_density = forward.back();
  }
  io::write_filter_track(dir / "prior_track.csv", prior);
  const auto ens = stage("reverse", [&] {
    return backward_smoothing_flow(model, *score, prior, grid, c.ensemble_size, derive_seed(c.seed, "flow"), opt);
  });
  auto written = steps;
  written.push_back(grid.n_steps());
  std::sort(written.begin(), written.end());
  written.erase(std::unique(written.begin(), written.end()), written.end());
  io::write_ensemble(dir / "ensemble.csv", ens, written);
  if (c.reference == "analytic") {
    for (auto k : steps) gaussian_rows(rep, c, ens, k, prior.beliefs[k]);
  } else if (c.reference == "pde") {
    io::write_density_sequence(dir / "forward_densities.csv", grid, forward, steps);
    for (auto k : steps) density_rows(rep, c, ens, k, forward[k]);
  }
}

inline void run_oracle(ComparisonReport& rep, const ExperimentConfig& c, const ModelSpec& model,
                       const std::filesystem::path& dir) {
  const TimeGrid grid = c.grid();
  const auto steps = snapshot_steps(c, grid);
  const auto incs = observe(c, model, grid, dir);
  if (c.reference == "rts" || c.reference == "analytic") {
    const auto kalman = stage("filter", [&] { return kalman_bucy_solve(model, incs, grid); });
    io::write_filter_track(dir / "filter_track.csv", kalman);
    if (c.reference == "rts") io::write_rts_track(dir / "rts_track.csv", stage("oracle", [&] { return rts_smoother(kalman, model, grid); }));
    rep.diagnostics["max_psd_clamp"] = kalman.max_psd_clamp;
    return;
  }
  const auto dom = stage("pilot", [&] { return pilot_domain(c, model, grid, incs); });
  const auto z = stage("oracle", [&] { return solve_zakai_1d(model, incs, initial_density(model, dom), grid); });
  const auto back = stage("oracle", [&] {
    return solve_backward_smoothing_density_1d(model, z.densities, grid, z.densities.back());
  });
  io::write_density_sequence(dir / "filter_densities.csv", grid, z.densities, steps);
  io::write_density_sequence(dir / "oracle_densities.csv", grid, back.densities, steps);
  const double mass = std::max(max_mass_error(z.densities), max_mass_error(back.densities));
  rep.rows.push_back(bound_row("", std::nullopt, "max_mass_error", "max_error", mass, acceptance::kMassTol));
  if (model.is_linear_gaussian()) {
    const auto kalman = kalman_bucy_solve(model, incs, grid);
    zakai_vs_kalman_rows(rep, c, grid, z, kalman, steps);
    const auto rts = rts_smoother(kalman, model, grid);
    for (auto k : steps) {
      const auto ref = gaussian_density(back.densities[k].x_min, back.densities[k].x_max, back.densities[k].n_cells,
                                        rts.beliefs[k].mean[0], rts.beliefs[k].cov(0, 0));
      rep.rows.push_back(bound_row("", grid.node(k), "backward_density_vs_rts", "l1",
                                   compare_densities(back.densities[k], ref), std::max(1e-2, 10.0 * c.pde_dx)));
    }
  }
}

inline void run_verify(ComparisonReport& rep, const ExperimentConfig& c) {
  acceptance::Profile p;
  p.seed = c.seed;
  p.scale = c.verify_scale;
  rep.diagnostics["scale"] = c.verify_scale;
  json per = json::object();
  for (const auto& cr : acceptance::criteria()) {
    if (!c.verify_criteria.empty() &&
        std::find(c.verify_criteria.begin(), c.verify_criteria.end(), cr.id) == c.verify_criteria.end())
      continue;
    const auto res = stage(cr.id, [&] { return cr.run(p); });
    per[res.id] = res.pass;
    for (const auto& r : res.rows) rep.rows.push_back(r);
  }
  rep.diagnostics["criteria"] = per;
}

}  // namespace pipeline

/// Runs one subcommand end to end and writes report.json and summary.txt
/// (plus the stage CSVs) into `out_dir`.
inline ComparisonReport run_experiment(const ExperimentConfig& c, Command cmd, const std::filesystem::path& out_dir) {
  require(cmd != Command::Report, ErrorCode::ConfigError, "report does not run a pipeline");
  ComparisonReport rep;
  rep.command = to_string(cmd);
  rep.config_name = c.name;
  rep.config_hash = config_hash(c.source);
  rep.seed = c.seed;
  std::filesystem::create_directories(out_dir);
  if (cmd == Command::Verify) {
    pipeline::run_verify(rep, c);
  } else {
    const ModelSpec model = build_model(c);
    validate_for(c, cmd, model);
    rep.diagnostics["model"] = model.name();
    switch (cmd) {
      case Command::Simulate: pipeline::run_simulate(rep, c, model, out_dir); break;
      case Command::Filter: pipeline::run_filter_command(rep, c, model, out_dir); break;
      case Command::Smooth: pipeline::run_smooth(rep, c, model, out_dir); break;
      case Command::Reverse: pipeline::run_reverse(rep, c, model, out_dir); break;
      case Command::Oracle: pipeline::run_oracle(rep, c, model, out_dir); break;
      default: break;
    }
  }
  rep.pass = all_pass(rep.rows);
  write_report(rep, out_dir);
  return rep;
}

/// Loads `dir/report.json` and checks it against the config's hash.
struct ReportCheck {
  bool pass = false;
  bool hash_matches = false;
  std::string summary;
};

inline ReportCheck check_report(const ExperimentConfig& c, const std::filesystem::path& dir) {
  const json rep = read_json_file(dir / "report.json");
  ReportCheck out;
  const std::string expected = config_hash(c.source);
  out.hash_matches = rep.value("config_hash", "") == expected;
  for (const auto& row : rep.value("rows", json::array()))
    out.hash_matches = out.hash_matches && row.value("config_hash", "") == expected;
  out.pass = rep.value("pass", false);
  std::ostringstream s;
  s << "report " << (dir / "report.json").string() << "\n";
  s << "command=" << rep.value("command", "") << " config=" << rep.value("config_name", "") << "\n";
  s << "config_hash=" << rep.value("config_hash", "") << (out.hash_matches ? " (matches)" : " (MISMATCH, expected " + expected + ")")
    << "\n";
  std::size_t failed = 0;
  for (const auto& row : rep.value("rows", json::array())) failed += !row.value("pass", false);
  s << "rows=" << rep.value("rows", json::array()).size() << " failed=" << failed << "\n";
  s << "pass=" << (out.pass ? "true" : "false") << "\n";
  out.summary = s.str();
  return out;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_HARNESS_HPP
