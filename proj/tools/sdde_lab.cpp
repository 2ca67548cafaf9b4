#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sdde/errors.hpp"
#include "sdde/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo experiments for stochastic delay equations with irregular drift", "sdde-lab"};
  app.set_version_flag("--version", std::string(sdde::kToolVersion));

  std::string kind;
  std::string config_file;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  bool assert_results = false;

  std::vector<std::string> kinds(std::begin(sdde::kExperimentKinds), std::end(sdde::kExperimentKinds));
  app.add_option("kind", kind, "Experiment kind")->required()->check(CLI::IsMember(kinds));
  app.add_option("--config", config_file, "JSON experiment configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory (overrides the config's \"output\")");
  app.add_option("--seed", seed, "Override mc.seed");
  app.add_option("--workers", workers, "Worker threads; 0 uses every available core")->capture_default_str();
  app.add_flag("--assert", assert_results, "Exit with status 4 on inconclusive verdicts or failed checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sdde::kExitConfig;
  }

  sdde::ExperimentConfig cfg;
  try {
    cfg = sdde::ExperimentConfig::load(config_file, kind);
  } catch (const sdde::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sdde::kExitConfig;
  }
  if (seed) cfg.override_seed(*seed);

  const auto diagnostics = sdde::validate_config(cfg);
  for (const auto& d : diagnostics) std::cerr << "config: " << d << "\n";

  sdde::RunOptions options;
  if (!out_dir.empty()) options.output_dir = out_dir;
  options.workers = workers;
  options.assert_results = assert_results;
  const auto result = sdde::run_experiment(cfg, options);

  for (const auto& f : result.findings) std::cout << f << "\n";
  if (!result.manifest.error.empty() && diagnostics.empty()) std::cerr << "error: " << result.manifest.error << "\n";
  std::cout << "config digest " << result.manifest.config_digest << ", " << result.manifest.files.size()
            << " file(s), " << (result.manifest.complete ? "complete" : "incomplete") << "\n";
  return result.exit_code;
}
