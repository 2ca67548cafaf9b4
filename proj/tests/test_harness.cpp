#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sdde/errors.hpp"
#include "sdde/harness.hpp"

using namespace sdde;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sdde_harness_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

json read_json(const fs::path& file) { return json::parse(slurp(file)); }

json brownian_config() {
  return json::parse(R"({
    "model": {"family": "linear", "dim": 1, "a": 0.0, "c": [0.0], "sigma": 1.0},
    "grid": {"r": 1.0, "T": 1.0, "h": 0.0625},
    "mc": {"N": 200, "seed": 4},
    "initial": {"type": "constant", "value": [0.0]}
  })");
}

json sgn_probe_config() {
  return json::parse(R"({
    "model": {"family": "sgn_delay"},
    "grid": {"r": 1.0, "T": 1.0, "h": 0.03125},
    "mc": {"N": 300, "seed": 12},
    "initial": {"type": "constant", "value": [0.0]},
    "strong-feller": {"t": 1.0, "functional": {"type": "tanh_endpoint"},
                      "direction": {"type": "constant", "value": [-1.0]}, "divisors": [1, 2, 4]}
  })");
}

bool mentions(const std::vector<std::string>& diags, const std::string& needle) {
  return std::any_of(diags.begin(), diags.end(), [&](const std::string& d) { return d.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("well-formed configs validate cleanly") {
  CHECK(validate_config(ExperimentConfig::from_json(brownian_config(), "simulate")).empty());
  CHECK(validate_config(ExperimentConfig::from_json(sgn_probe_config(), "strong-feller")).empty());
  auto bounds = brownian_config();
  bounds["bounds"] = json::parse(R"({"alpha": 0.1, "krylov": {"p": 2.0}, "gronwall": {"p": 0.3, "mu": 3.0, "nu": 1.5}})");
  CHECK(validate_config(ExperimentConfig::from_json(bounds, "bounds")).empty());
}

TEST_CASE("config diagnostics name the offending field") {
  auto off_grid = brownian_config();
  off_grid["grid"]["r"] = 0.3;
  const auto d1 = validate_config(ExperimentConfig::from_json(off_grid, "simulate"));
  CHECK(mentions(d1, "grid.r: r not an integer multiple of h"));

  auto big_alpha = brownian_config();
  big_alpha["bounds"] = {{"alpha", 0.6}};
  const auto d2 = validate_config(ExperimentConfig::from_json(big_alpha, "bounds"));
  CHECK(mentions(d2, "bounds.alpha: alpha ≥ 1/(2dC_σT)"));

  auto typo = brownian_config();
  typo["mc"]["NN"] = 5;
  const auto d3 = validate_config(ExperimentConfig::from_json(typo, "simulate"));
  CHECK(mentions(d3, "mc.NN: unknown key"));

  auto wrong_kind = brownian_config();
  wrong_kind["kind"] = "bounds";
  CHECK(mentions(validate_config(ExperimentConfig::from_json(wrong_kind, "simulate")), "kind:"));

  CHECK(mentions(validate_config(ExperimentConfig::from_json(brownian_config(), "teleport")), "unknown experiment kind"));

  auto missing_block = brownian_config();
  CHECK(mentions(validate_config(ExperimentConfig::from_json(missing_block, "stability")), "stability"));

  auto sgn_r = sgn_probe_config();
  sgn_r["grid"]["r"] = 0.5;
  CHECK(mentions(validate_config(ExperimentConfig::from_json(sgn_r, "strong-feller")), "sgn_delay needs r = 1"));

  CHECK_THROWS_AS(ExperimentConfig::from_json(json::array(), "simulate"), ConfigError);
}

TEST_CASE("config digest ignores the output directory") {
  auto a = brownian_config();
  auto b = brownian_config();
  a["output"] = "one";
  b["output"] = "two";
  const auto da = config_digest(ExperimentConfig::from_json(a, "simulate"));
  CHECK(da.size() == 64);
  CHECK(da == config_digest(ExperimentConfig::from_json(b, "simulate")));
  CHECK(da != config_digest(ExperimentConfig::from_json(a, "validate")));
  auto c = ExperimentConfig::from_json(a, "simulate");
  c.override_seed(99);
  CHECK(config_digest(c) != da);
  c.override_seed(18446744073709551615ull);
  CHECK(validate_config(c).empty());
  c.document["mc"]["seed"] = -1;
  CHECK(mentions(validate_config(c), "mc.seed: must be a non-negative integer"));
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("simulate with one path writes one CSV and a manifest") {
  auto doc = brownian_config();
  doc["mc"]["N"] = 1;
  const auto dir = scratch_dir("simulate");
  const auto result = run_experiment(ExperimentConfig::from_json(doc, "simulate"), {dir, 1, false});
  CHECK(result.exit_code == kExitOk);
  REQUIRE(result.manifest.complete);
  REQUIRE(result.manifest.files.size() == 1);
  CHECK(result.manifest.files[0].path == "paths/path_00000.csv");
  CHECK(fs::exists(dir / "paths" / "path_00000.csv"));
  const auto manifest = read_json(dir / "manifest.json");
  CHECK(manifest.at("complete") == true);
  CHECK(manifest.at("tool_version") == std::string(kToolVersion));
  CHECK(manifest.at("config_digest") == result.manifest.config_digest);
  CHECK(manifest.at("files")[0].at("sha256") == sha256_file(dir / "paths" / "path_00000.csv"));
  CHECK(manifest.at("files")[0].at("bytes") == fs::file_size(dir / "paths" / "path_00000.csv"));
  fs::remove_all(dir);
}

TEST_CASE("girsanov-check without drift gives exactly one for f = 1") {
  auto doc = brownian_config();
  doc["girsanov-check"] = {{"t", 1.0}, {"functional", {{"type", "constant_one"}}}, {"direct", true}};
  const auto dir = scratch_dir("girsanov");
  const auto result = run_experiment(ExperimentConfig::from_json(doc, "girsanov-check"), {dir, 2, true});
  CHECK(result.exit_code == kExitOk);
  const auto report = read_json(dir / "girsanov_check.json");
  CHECK(report.at("weighted").at("estimate").get<double>() == 1.0);
  CHECK(report.at("direct").at("estimate").get<double>() == 1.0);
  CHECK(report.at("agreement").at("within") == true);
  CHECK(report.at("config_digest") == result.manifest.config_digest);
  fs::remove_all(dir);
}

TEST_CASE("reports are byte-identical across worker counts") {
  const auto doc = sgn_probe_config();
  const auto one = scratch_dir("workers1");
  const auto eight = scratch_dir("workers8");
  const auto cfg = ExperimentConfig::from_json(doc, "strong-feller");
  const auto r1 = run_experiment(cfg, {one, 1, false});
  const auto r8 = run_experiment(cfg, {eight, 8, false});
  REQUIRE(r1.manifest.complete);
  REQUIRE(r8.manifest.complete);
  REQUIRE(r1.manifest.files.size() == 2);
  for (const auto& f : r1.manifest.files) CHECK(slurp(one / f.path) == slurp(eight / f.path));
  CHECK(r1.findings == r8.findings);
  fs::remove_all(one);
  fs::remove_all(eight);
}

TEST_CASE("every experiment kind runs end to end") {
  const auto dir = scratch_dir("kinds");
  {
    auto doc = brownian_config();
    doc["stability"] = {{"t", 1.0}, {"gamma", 1.0}, {"direction", {{"type", "constant"}, {"value", {0.5}}}},
                        {"divisors", {1, 2}}};
    const auto r = run_experiment(ExperimentConfig::from_json(doc, "stability"), {dir / "stability", 1, false});
    CHECK(r.exit_code == kExitOk);
    CHECK(fs::exists(dir / "stability" / "stability.csv"));
  }
  {
    auto doc = brownian_config();
    doc["bounds"] = json::parse(R"({"alpha": 0.1, "krylov": {"p": 2.0, "half_width": 5.0, "dx": 0.05},
                                    "gronwall": {"p": 0.3, "mu": 3.0, "nu": 1.5}})");
    const auto r = run_experiment(ExperimentConfig::from_json(doc, "bounds"), {dir / "bounds", 1, true});
    CHECK(r.exit_code == kExitOk);
    const auto j = read_json(dir / "bounds" / "bounds.json");
    CHECK(j.contains("exp_sup"));
    CHECK(j.contains("krylov"));
    CHECK(j.contains("gronwall"));
  }
  {
    auto doc = json::parse(R"({
      "model": {"family": "sign_drift", "beta": 1.0, "sigma": 1.0},
      "grid": {"r": 0.5, "T": 0.5, "h": 0.015625},
      "mc": {"N": 500, "seed": 3},
      "initial": {"type": "constant", "value": [0.3]},
      "zvonkin": {"horizon": 0.5, "half_width": 6.0, "dx": 0.04, "dt": 0.002, "delta_horizon": 0.5}
    })");
    const auto r = run_experiment(ExperimentConfig::from_json(doc, "zvonkin"), {dir / "zvonkin", 1, false});
    CHECK(r.exit_code == kExitOk);
    const auto j = read_json(dir / "zvonkin" / "zvonkin.json");
    CHECK(j.at("residual").contains("allowance"));
    CHECK(j.at("delta").at("delta").get<double>() > 0.0);
    CHECK(fs::exists(dir / "zvonkin" / "pde.csv"));
  }
  {
    auto doc = brownian_config();
    doc["validate"] = {{"probe_paths", 4}};
    const auto r = run_experiment(ExperimentConfig::from_json(doc, "validate"), {dir / "validate", 1, true});
    CHECK(r.exit_code == kExitOk);
    CHECK(read_json(dir / "validate" / "validate.json").at("passed") == true);
  }
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  const auto dir = scratch_dir("exit");

  auto bad = brownian_config();
  bad["grid"]["h"] = 0.3;
  const auto config_error = run_experiment(ExperimentConfig::from_json(bad, "simulate"), {dir / "config", 1, false});
  CHECK(config_error.exit_code == kExitConfig);
  const auto manifest = read_json(dir / "config" / "manifest.json");
  CHECK(manifest.at("complete") == false);
  CHECK(manifest.at("error").get<std::string>().find("grid.r") != std::string::npos);

  // Delta search that runs into its step floor.
  auto steep = json::parse(R"({
    "model": {"family": "sign_drift", "beta": 100.0, "sigma": 1.0},
    "grid": {"r": 0.5, "T": 0.5, "h": 0.0625},
    "mc": {"N": 10, "seed": 1},
    "zvonkin": {"horizon": 0.5, "half_width": 4.0, "dx": 0.05, "dt": 0.01, "delta_horizon": 1.0, "residual": false}
  })");
  const auto numerical = run_experiment(ExperimentConfig::from_json(steep, "zvonkin"), {dir / "numerical", 1, false});
  CHECK(numerical.exit_code == kExitNumerical);
  CHECK_FALSE(numerical.manifest.complete);
  CHECK(fs::exists(dir / "numerical" / "manifest.json"));

  // Starting on the drift's jump at a coarse grid fails the residual check.
  auto rough = json::parse(R"({
    "model": {"family": "sign_drift", "beta": 1.0, "sigma": 1.0},
    "grid": {"r": 0.5, "T": 0.5, "h": 0.015625},
    "mc": {"N": 20000, "seed": 5},
    "initial": {"type": "constant", "value": [0.0]},
    "zvonkin": {"horizon": 0.5, "half_width": 6.0, "dx": 0.04, "dt": 0.002}
  })");
  const auto cfg = ExperimentConfig::from_json(rough, "zvonkin");
  const auto relaxed = run_experiment(cfg, {dir / "relaxed", 1, false});
  const auto strict = run_experiment(cfg, {dir / "strict", 1, true});
  CHECK(relaxed.exit_code == kExitOk);
  CHECK(relaxed.findings == std::vector<std::string>{"zvonkin residual: fail"});
  CHECK(strict.exit_code == kExitAssertion);
  CHECK(strict.manifest.complete);
  CHECK(slurp(dir / "relaxed" / "zvonkin.json") == slurp(dir / "strict" / "zvonkin.json"));

  fs::remove_all(dir);
}
