#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "mcn/cli.hpp"

namespace {

using Command = mcn::cli::CommandResult (*)(const mcn::cli::RunManifest&, const mcn::cli::CommandOptions&);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean burst delay model, trace analysis and calibration"};
  app.set_version_flag("--version", std::string(mcn::cli::tool_version()));
  app.require_subcommand(1);

  std::string manifest_path;
  std::string out;
  std::uint64_t seed = 0;
  unsigned jobs = 1;

  const std::vector<std::pair<std::string, Command>> verbs{
      {"model", mcn::cli::cmd_model},         {"analyze", mcn::cli::cmd_analyze}, {"synth", mcn::cli::cmd_synth},
      {"calibrate", mcn::cli::cmd_calibrate}, {"map", mcn::cli::cmd_map},
  };
  const std::map<std::string, std::string> help{
      {"model", "Evaluate the model for every drive and atom number"},
      {"analyze", "Extract burst features from a directory of shot traces"},
      {"synth", "Generate synthetic shot traces and a delay dataset"},
      {"calibrate", "Fit beta per detuning and the linear beta law"},
      {"map", "Evaluate the N_mc / N_mu map and its boundaries"},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, fn] : verbs) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--manifest", manifest_path, "Run manifest (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (overrides the manifest)");
    sub->add_option("--seed", seed, "Random seed (overrides the manifest)");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    subs.emplace_back(sub, fn);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const auto manifest = mcn::cli::RunManifest::load(manifest_path);
    mcn::cli::CommandOptions options;
    if (!out.empty()) options.out_dir = out;
    for (const auto& [sub, fn] : subs) {
      if (!sub->parsed()) continue;
      if (sub->count("--seed")) options.seed = seed;
      options.jobs = jobs;
      const auto result = fn(manifest, options);
      for (const auto& p : result.written) std::cout << "wrote " << p.string() << "\n";
      for (const auto& msg : result.messages) std::cerr << "warning: " << msg << "\n";
      return result.exit_code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
