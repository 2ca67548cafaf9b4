#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sdde {

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Experiment kinds accepted on the command line and in the "kind" key.
inline constexpr std::string_view kExperimentKinds[] = {"simulate",  "strong-feller", "stability", "girsanov-check",
                                                       "zvonkin",   "bounds",        "validate"};

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitAssertion = 4 };

/// A parsed configuration document together with the experiment kind it is run as.
/// The schema is described in the README; unknown keys are reported by validate_config.
struct ExperimentConfig {
  std::string kind;
  nlohmann::json document;

  /// Throws ConfigError when the file cannot be read or is not a JSON object.
  static ExperimentConfig load(const std::filesystem::path& file, std::string kind);
  static ExperimentConfig from_json(nlohmann::json document, std::string kind);

  /// Replaces mc.seed.
  void override_seed(std::uint64_t seed);
};

/// Empty iff the config is runnable; each entry starts with the offending field.
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

/// Hex SHA-256 of the compact, key-sorted config with the output directory removed.
std::string config_digest(const ExperimentConfig& cfg);

std::string sha256_hex(std::string_view bytes);
/// Throws ConfigError if the file cannot be read.
std::string sha256_file(const std::filesystem::path& file);

struct ManifestEntry {
  std::string path;
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string config_digest;
  std::string tool_version{kToolVersion};
  std::string kind;
  double wall_clock_seconds = 0.0;
  bool complete = false;
  std::string error;
  std::vector<ManifestEntry> files;
};

void to_json(nlohmann::json& j, const RunManifest& m);

struct RunOptions {
  /// Overrides the config's "output" key when set.
  std::optional<std::filesystem::path> output_dir;
  /// 0 means one worker per available core.
  std::size_t workers = 0;
  /// Inconclusive verdicts and failed checks turn into exit code 4.
  bool assert_results = false;
};

struct RunResult {
  RunManifest manifest;
  int exit_code = kExitOk;
  /// Verdict names and failed checks gathered from the reports.
  std::vector<std::string> findings;
};

/// Validates, runs the experiment, writes its reports and CSVs, then manifest.json.
/// Errors never escape: they become exit codes and a manifest marked incomplete.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options);

}  // namespace sdde
