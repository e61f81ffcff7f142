// smoothlab command line: simulate, filter, smooth, reverse, oracle, verify, report.
//
// Exit status: 0 all rows pass, 1 some row failed, 2 bad config or usage,
// 3 a numerical or I/O error stopped the run.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "smoothlab/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

/// Accepts a path, or the bare name of a bundled config ("verify_quick").
fs::path resolve_config(const std::string& arg) {
  fs::path p(arg);
  if (fs::exists(p)) return p;
  for (fs::path candidate : {fs::path(SMOOTHLAB_CONFIG_DIR) / p, fs::path(SMOOTHLAB_CONFIG_DIR) / (arg + ".json")})
    if (fs::exists(candidate)) return candidate;
  throw smoothlab::Error(smoothlab::ErrorCode::ConfigError, "config not found: " + arg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smoothlab: backward smoothing flows and their oracles"};
  app.set_version_flag("--version", std::string("smoothlab ") + SMOOTHLAB_VERSION);
  app.require_subcommand(1);

  std::string config_arg;
  std::optional<std::uint64_t> seed;
  std::string out_dir;

  const char* help[][2] = {
      {"simulate", "simulate signal paths and observation increments"},
      {"filter", "run the configured filter on simulated observations"},
      {"smooth", "filter, then draw a smoothing ensemble with the backward flow"},
      {"reverse", "time-reverse the prior diffusion of a model with no sensor"},
      {"oracle", "compute the reference (RTS or grid PDE) only"},
      {"verify", "run the acceptance criteria"},
      {"report", "check and summarize an existing report.json"},
  };
  for (auto& [name, desc] : help) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config,-c", config_arg, "config file or bundled config name");
    sub->add_option("--seed,-s", seed, "override the config seed");
    sub->add_option("--out,-o", out_dir, "output directory (default: the config's output)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitPass : kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const auto cmd = smoothlab::parse_command(name);
    if (config_arg.empty()) {
      if (cmd != smoothlab::Command::Verify) throw smoothlab::Error(smoothlab::ErrorCode::ConfigError, "--config is required");
      config_arg = "verify";
    }
    auto config = smoothlab::load_config(resolve_config(config_arg));
    if (seed) config.seed = *seed;
    const fs::path dir = out_dir.empty() ? fs::path(config.output) : fs::path(out_dir);

    if (cmd == smoothlab::Command::Report) {
      const auto check = smoothlab::check_report(config, dir);
      std::cout << check.summary;
      return check.pass && check.hash_matches ? kExitPass : kExitFail;
    }
    const auto rep = smoothlab::run_experiment(config, cmd, dir);
    std::cout << smoothlab::summary_text(rep);
    std::cout << "wrote " << (dir / "report.json").string() << "\n";
    return rep.pass ? kExitPass : kExitFail;
  } catch (const smoothlab::Error& e) {
    std::cerr << "smoothlab " << name << ": " << e.what() << "\n";
    return e.code() == smoothlab::ErrorCode::ConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "smoothlab " << name << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}
