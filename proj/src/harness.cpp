#include "sdde/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "sdde/analysis.hpp"
#include "sdde/errors.hpp"
#include "sdde/girsanov.hpp"
#include "sdde/models.hpp"
#include "sdde/parallel.hpp"
#include "sdde/rng.hpp"
#include "sdde/paths.hpp"
#include "sdde/solver.hpp"
#include "sdde/zvonkin.hpp"

namespace sdde {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Walks one JSON object, records which keys were read and collects diagnostics
// for missing, mistyped and unknown keys.
class Reader {
 public:
  Reader(const json* node, std::string path, std::vector<std::string>* diags)
      : node_(node), path_(std::move(path)), diags_(diags) {
    if (node_ && !node_->is_object()) {
      error("", "must be an object");
      node_ = nullptr;
    }
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;
  ~Reader() { finish(); }

  bool present() const { return node_ != nullptr; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return node_ && node_->contains(key);
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const json* v = find(key, !fallback.has_value());
    if (!v) return fallback.value_or(0.0);
    if (!v->is_number()) {
      error(key, "must be a number");
      return fallback.value_or(0.0);
    }
    const double out = v->get<double>();
    if (!std::isfinite(out)) error(key, "must be finite");
    return out;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) {
    const json* v = find(key, !fallback.has_value());
    if (!v) return fallback.value_or(0);
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      error(key, "must be a non-negative integer");
      return fallback.value_or(0);
    }
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key, false);
    if (!v) return fallback;
    if (!v->is_boolean()) {
      error(key, "must be true or false");
      return fallback;
    }
    return v->get<bool>();
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const json* v = find(key, !fallback.has_value());
    if (!v) return fallback.value_or("");
    if (!v->is_string()) {
      error(key, "must be a string");
      return fallback.value_or("");
    }
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
    const json* v = find(key, !fallback.has_value());
    if (!v) return fallback.value_or(std::vector<double>{});
    std::vector<double> out;
    if (!v->is_array()) {
      error(key, "must be an array of numbers");
      return fallback.value_or(out);
    }
    for (const auto& e : *v) {
      if (!e.is_number()) {
        error(key, "must be an array of numbers");
        return fallback.value_or(std::vector<double>{});
      }
      out.push_back(e.get<double>());
    }
    return out;
  }

  /// Child object; absent children read as empty and report missing keys only when required.
  const json* child(const std::string& key, bool required) { return find(key, required); }

  std::vector<std::string>* diags() const { return diags_; }
  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void error(const std::string& key, const std::string& message) {
    const std::string where = key.empty() ? path_ : path_of(key);
    diags_->push_back((where.empty() ? std::string("config") : where) + ": " + message);
  }

 private:
  const json* find(const std::string& key, bool required) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) {
      if (required) error(key, "is required");
      return nullptr;
    }
    return &(*node_)[key];
  }

  void finish() {
    if (!node_) return;
    for (const auto& [key, value] : node_->items())
      if (!seen_.count(key)) error(key, "unknown key");
  }

  const json* node_;
  std::string path_;
  std::vector<std::string>* diags_;
  std::set<std::string> seen_;
};

struct SegmentSpec {
  std::string type = "constant";
  std::vector<double> from;
  std::vector<double> to;
};

struct FunctionalSpec {
  std::string type = "tanh_endpoint";
  std::size_t coord = 0;
  double threshold = 0.0;
  double scale = 0.1;
};

struct KrylovSpec {
  double p = 2.0;
  double radius = 1.0;
  double half_width = 5.0;
  double dx = 0.05;
};

struct GronwallSpec {
  double p = 0.5;
  double mu = 2.0;
  double nu = 2.0;
  double scale = 1.0;
};

struct Plan {
  std::string kind;
  std::string family;
  std::size_t dim = 1;
  double sigma = 1.0;
  double beta = 1.0;
  double center = 0.0;
  double alpha_singular = 0.5;
  double scale = 1.0;
  double slope = 0.0;
  std::vector<double> offset;
  std::string kernel = "tanh";
  KernelMeasure measure;

  double r = 1.0;
  double horizon = 1.0;
  double h = 0.01;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  double drift_clip = kDefaultDriftClip;
  SegmentSpec initial;

  bool driftless = false;

  double t = 1.0;
  FunctionalSpec functional;
  std::string estimator = "girsanov";
  SegmentSpec direction;
  std::vector<double> divisors{1, 2, 4, 8, 16};
  double gamma = 1.0;

  bool direct = true;
  std::optional<double> novikov_target;

  double pde_horizon = 0.5;
  PdeGridTemplate pde;
  std::optional<double> delta_horizon;
  std::size_t max_cover = 5;
  bool residual = true;
  std::size_t blocks = 10;

  double exp_alpha = 0.1;
  std::optional<KrylovSpec> krylov;
  std::optional<GronwallSpec> gronwall;

  std::size_t probe_paths = 16;
};

const std::set<std::string> kFamilies = {"sgn_delay", "kernel", "pointwise_singular", "linear", "sign_drift"};

// {"type": "constant", "value": [..]} or {"type": "linear", "from": [..], "to": [..]} over [-r, 0].
SegmentSpec read_segment(Reader& parent, const std::string& key, bool required, std::size_t dim) {
  SegmentSpec out;
  out.from.assign(dim, 0.0);
  out.to = out.from;
  const json* node = parent.child(key, required);
  if (!node) return out;
  Reader reader(node, parent.path_of(key), parent.diags());
  if (!reader.present()) return out;
  out.type = reader.text("type", "constant");
  if (out.type == "constant") {
    out.from = reader.numbers("value");
    out.to = out.from;
  } else if (out.type == "linear") {
    out.from = reader.numbers("from");
    out.to = reader.numbers("to");
  } else {
    reader.error("type", "must be \"constant\" or \"linear\"");
    return out;
  }
  if (out.from.size() != dim || out.to.size() != dim)
    reader.error("", "needs " + std::to_string(dim) + " coordinate(s) to match the model dimension");
  return out;
}

FunctionalSpec read_functional(Reader& parent, const std::string& key) {
  FunctionalSpec out;
  const json* node = parent.child(key, false);
  if (!node) return out;
  Reader reader(node, parent.path_of(key), parent.diags());
  if (!reader.present()) return out;
  out.type = reader.text("type", "tanh_endpoint");
  if (out.type == "tanh_endpoint") {
    out.coord = reader.unsigned_integer("coord", 0);
  } else if (out.type == "smoothed_half_line") {
    out.coord = reader.unsigned_integer("coord", 0);
    out.threshold = reader.number("threshold", 0.0);
    out.scale = reader.number("scale", 0.1);
    if (!(out.scale > 0.0)) reader.error("scale", "must be positive");
  } else if (out.type != "constant_one" && out.type != "tanh_sup_norm") {
    reader.error("type", "must be one of constant_one, tanh_endpoint, smoothed_half_line, tanh_sup_norm");
  }
  return out;
}

bool on_grid(double t, double h) { return whole_steps(t, h).has_value(); }

void read_model(Reader& root, Plan& plan, std::vector<std::string>& diags) {
  Reader model(root.child("model", true), "model", &diags);
  if (!model.present()) return;
  plan.family = model.text("family");
  if (!kFamilies.count(plan.family)) {
    model.error("family", "unknown model family \"" + plan.family + "\"");
    plan.family.clear();
    return;
  }
  if (plan.family == "sgn_delay") return;
  plan.sigma = model.number("sigma", 1.0);
  if (!(plan.sigma > 0.0)) model.error("sigma", "must be positive");
  if (plan.family == "kernel") {
    plan.dim = model.unsigned_integer("dim", 1);
    plan.kernel = model.text("kernel", "tanh");
    if (plan.kernel != "tanh" && plan.kernel != "sgn") model.error("kernel", "must be \"tanh\" or \"sgn\"");
    if (const json* atoms = model.child("atoms", false)) {
      if (!atoms->is_array()) model.error("atoms", "must be an array");
      else
        for (std::size_t i = 0; i < atoms->size(); ++i) {
          Reader atom(&(*atoms)[i], "model.atoms[" + std::to_string(i) + "]", &diags);
          plan.measure.atoms.push_back({atom.number("lag"), atom.number("weight")});
        }
    }
    if (const json* density = model.child("density", false)) {
      Reader d(density, "model.density", &diags);
      const double from = d.number("from");
      const double to = d.number("to");
      const double value = d.number("value", to > from ? 1.0 / (to - from) : 0.0);
      if (!(from < to)) d.error("", "needs from < to");
      plan.measure.density = KernelMeasure::Density{from, to, value};
    }
    if (plan.measure.atoms.empty() && !plan.measure.density) model.error("", "kernel needs atoms or a density");
  } else if (plan.family == "pointwise_singular") {
    plan.center = model.number("center", 0.0);
    plan.alpha_singular = model.number("alpha", 0.5);
    plan.scale = model.number("scale", 1.0);
    if (!(plan.alpha_singular >= 0.0 && plan.alpha_singular < 0.5))
      model.error("alpha", "singularity exponent must lie in [0, 1/2)");
  } else if (plan.family == "linear") {
    plan.dim = model.unsigned_integer("dim", 1);
    plan.slope = model.number("a", 0.0);
    plan.offset = model.numbers("c", std::vector<double>(plan.dim, 0.0));
    if (plan.offset.size() != plan.dim) model.error("c", "needs one entry per dimension");
  } else if (plan.family == "sign_drift") {
    plan.beta = model.number("beta", 1.0);
  }
  if (plan.dim < 1) model.error("dim", "must be >= 1");
}

void read_grid(Reader& root, Plan& plan, std::vector<std::string>& diags) {
  Reader grid(root.child("grid", true), "grid", &diags);
  if (!grid.present()) return;
  plan.r = grid.number("r");
  plan.horizon = grid.number("T");
  plan.h = grid.number("h");
  bool sane = true;
  if (!(plan.h > 0.0)) grid.error("h", "must be positive"), sane = false;
  if (!(plan.r > 0.0)) grid.error("r", "must be positive"), sane = false;
  if (!(plan.horizon >= 0.0)) grid.error("T", "must be non-negative"), sane = false;
  if (!sane) return;
  if (!on_grid(plan.r, plan.h)) grid.error("r", "r not an integer multiple of h");
  if (!on_grid(plan.horizon, plan.h)) grid.error("T", "T not an integer multiple of h");
}

void read_mc(Reader& root, Plan& plan, std::vector<std::string>& diags) {
  Reader mc(root.child("mc", true), "mc", &diags);
  if (!mc.present()) return;
  plan.n = mc.unsigned_integer("N");
  plan.seed = mc.unsigned_integer("seed", 0);
  if (plan.n < 1) mc.error("N", "must be >= 1");
}

void check_time(Reader& block, const std::string& key, double t, const Plan& plan, bool allow_zero = false) {
  if (!(t > 0.0 || (allow_zero && t == 0.0)) || t > plan.horizon * (1 + 1e-12))
    block.error(key, "must lie in (0, T]");
  else if (!on_grid(t, plan.h))
    block.error(key, "not an integer multiple of h");
}

void read_probe_sequence(Reader& block, Plan& plan) {
  plan.direction = read_segment(block, "direction", true, plan.dim);
  plan.divisors = block.numbers("divisors", plan.divisors);
  if (plan.divisors.empty()) block.error("divisors", "must not be empty");
  for (double d : plan.divisors)
    if (!(d > 0.0)) {
      block.error("divisors", "entries must be positive");
      break;
    }
}

void read_kind_block(Reader& root, Plan& plan, std::vector<std::string>& diags) {
  const std::string& kind = plan.kind;
  // Every other kind's block is an unknown key for this run.
  for (auto other : kExperimentKinds)
    if (other != kind && root.has(std::string(other))) root.error(std::string(other), "block does not match kind " + kind);
  const bool required = kind == "strong-feller" || kind == "stability";
  Reader block(root.child(kind, required), kind, &diags);

  if (kind == "simulate") {
    plan.driftless = block.boolean("driftless", false);
  } else if (kind == "strong-feller") {
    plan.t = block.number("t", plan.horizon);
    check_time(block, "t", plan.t, plan);
    plan.functional = read_functional(block, "functional");
    plan.estimator = block.text("estimator", "girsanov");
    if (plan.estimator != "girsanov" && plan.estimator != "direct")
      block.error("estimator", "must be \"girsanov\" or \"direct\"");
    read_probe_sequence(block, plan);
  } else if (kind == "stability") {
    plan.t = block.number("t", plan.horizon);
    check_time(block, "t", plan.t, plan);
    plan.gamma = block.number("gamma", 1.0);
    if (!(plan.gamma > 0.0 && plan.gamma < 2.0)) block.error("gamma", "must lie in (0, 2)");
    read_probe_sequence(block, plan);
  } else if (kind == "girsanov-check") {
    plan.t = block.number("t", plan.horizon);
    check_time(block, "t", plan.t, plan);
    plan.functional = read_functional(block, "functional");
    plan.direct = block.boolean("direct", true);
    if (block.has("novikov_target")) {
      plan.novikov_target = block.number("novikov_target");
      if (!(*plan.novikov_target > 1.0)) block.error("novikov_target", "must exceed 1");
    }
  } else if (kind == "zvonkin") {
    plan.pde_horizon = block.number("horizon", 0.5);
    plan.pde.half_width = block.number("half_width", plan.pde.half_width);
    plan.pde.dx = block.number("dx", plan.pde.dx);
    plan.pde.dt = block.number("dt", plan.pde.dt);
    plan.residual = block.boolean("residual", true);
    plan.blocks = block.unsigned_integer("blocks", 10);
    plan.max_cover = block.unsigned_integer("max_cover", 5);
    if (block.has("delta_horizon")) {
      plan.delta_horizon = block.number("delta_horizon");
      if (!(*plan.delta_horizon > 0.0)) block.error("delta_horizon", "must be positive");
    }
    if (!(plan.pde.half_width > 0.0)) block.error("half_width", "must be positive");
    if (!(plan.pde.dx > 0.0)) block.error("dx", "must be positive");
    if (!(plan.pde.dt > 0.0)) block.error("dt", "must be positive");
    if (!(plan.pde_horizon > 0.0)) block.error("horizon", "must be positive");
    if (plan.blocks < 1) block.error("blocks", "must be >= 1");
    if (plan.max_cover < 1) block.error("max_cover", "must be >= 1");
    if (plan.residual && plan.pde_horizon > plan.horizon * (1 + 1e-12))
      block.error("horizon", "must not exceed grid.T when the residual is requested");
  } else if (kind == "bounds") {
    plan.exp_alpha = block.number("alpha", 0.1);
    if (const json* node = block.child("krylov", false)) {
      Reader k(node, "bounds.krylov", &diags);
      KrylovSpec spec;
      spec.p = k.number("p", spec.p);
      spec.radius = k.number("radius", spec.radius);
      spec.half_width = k.number("half_width", spec.half_width);
      spec.dx = k.number("dx", spec.dx);
      if (!(spec.p > (static_cast<double>(plan.dim) + 2.0) / 2.0)) k.error("p", "must exceed (d+2)/2");
      if (!(spec.dx > 0.0) || !(spec.half_width > 0.0) || !on_grid(2.0 * spec.half_width, spec.dx))
        k.error("dx", "2 half_width must be a positive multiple of dx");
      plan.krylov = spec;
    }
    if (const json* node = block.child("gronwall", false)) {
      Reader g(node, "bounds.gronwall", &diags);
      GronwallSpec spec;
      spec.p = g.number("p", spec.p);
      spec.mu = g.number("mu", spec.mu);
      spec.nu = g.number("nu", spec.nu);
      spec.scale = g.number("scale", spec.scale);
      if (!(spec.p > 0.0 && spec.p < 1.0)) g.error("p", "must lie in (0, 1)");
      if (!(spec.mu > 1.0) || !(spec.nu > 1.0) || std::abs(1.0 / spec.mu + 1.0 / spec.nu - 1.0) > 1e-12)
        g.error("mu", "mu and nu must be conjugate exponents above 1");
      else if (!(spec.p * spec.nu < 1.0))
        g.error("nu", "p nu must be below 1");
      plan.gronwall = spec;
    }
  } else if (kind == "validate") {
    plan.probe_paths = block.unsigned_integer("probe_paths", 16);
    if (plan.probe_paths < 1) block.error("probe_paths", "must be >= 1");
  }
}

std::optional<ModelSpec> build_model(const Plan& plan) {
  if (plan.family == "sgn_delay") return sgn_delay_model(std::max(plan.horizon, 1.0));
  if (plan.family == "kernel") {
    const bool smooth = plan.kernel == "tanh";
    auto k = smooth ? coordinatewise_kernel([](double x) { return std::tanh(x); })
                    : coordinatewise_kernel([](double x) { return sgn(x); });
    return kernel_model(plan.dim, plan.r, std::move(k), plan.measure, plan.sigma, smooth);
  }
  if (plan.family == "pointwise_singular")
    return pointwise_singular_model(plan.r, plan.center, plan.alpha_singular, plan.scale, plan.sigma);
  if (plan.family == "linear") return linear_model(plan.dim, plan.r, plan.slope, plan.offset, plan.sigma);
  if (plan.family == "sign_drift") return sign_drift_model(plan.r, plan.beta, plan.sigma);
  return std::nullopt;
}

struct Resolved {
  Plan plan;
  std::vector<std::string> diagnostics;
};

Resolved resolve(const ExperimentConfig& cfg) {
  Resolved out;
  auto& diags = out.diagnostics;
  Plan& plan = out.plan;
  plan.kind = cfg.kind;
  if (std::find(std::begin(kExperimentKinds), std::end(kExperimentKinds), cfg.kind) == std::end(kExperimentKinds)) {
    diags.push_back("kind: unknown experiment kind \"" + cfg.kind + "\"");
    return out;
  }
  Reader root(&cfg.document, "", &diags);
  if (!root.present()) return out;
  if (root.has("kind")) {
    const std::string declared = root.text("kind");
    if (declared != cfg.kind) root.error("kind", "config declares \"" + declared + "\" but runs as \"" + cfg.kind + "\"");
  }
  if (root.has("output")) root.text("output");
  plan.drift_clip = root.number("drift_clip", kDefaultDriftClip);
  if (!(plan.drift_clip > 0.0)) root.error("drift_clip", "must be positive");

  read_model(root, plan, diags);
  read_grid(root, plan, diags);
  read_mc(root, plan, diags);
  plan.initial = read_segment(root, "initial", false, plan.dim);
  read_kind_block(root, plan, diags);

  if (plan.family == "sgn_delay" && std::abs(plan.r - 1.0) > 1e-12) diags.push_back("grid.r: sgn_delay needs r = 1");
  if (plan.family == "kernel" && plan.r > 0.0) {
    const auto inside = [&](double lag) { return lag >= -plan.r * (1 + 1e-12) && lag <= 0.0; };
    for (const auto& a : plan.measure.atoms)
      if (!inside(a.lag) || !on_grid(-a.lag, plan.h)) diags.push_back("model.atoms: lags must be grid points of [-r, 0]");
    if (const auto& d = plan.measure.density)
      if (!inside(d->from) || !inside(d->to) || !on_grid(-d->from, plan.h) || !on_grid(-d->to, plan.h))
        diags.push_back("model.density: from and to must be grid points of [-r, 0]");
  }

  if (diags.empty()) {
    try {
      const auto model = build_model(plan);
      if (model) {
        model->validate();
        if (plan.kind == "bounds") {
          const double threshold = 1.0 / (2.0 * static_cast<double>(model->dim) * model->c_sigma * plan.horizon);
          if (!(plan.exp_alpha >= 0.0)) diags.push_back("bounds.alpha: alpha must be non-negative");
          else if (plan.exp_alpha >= threshold) diags.push_back("bounds.alpha: alpha ≥ 1/(2dC_σT)");
        }
        if (plan.kind == "zvonkin" && (model->dim != 1 || !model->drift.has_split() || model->drift.strict_past() ||
                                       !model->drift.pointwise() || !model->diffusion.is_constant()))
          diags.push_back("model.family: zvonkin needs a one-dimensional pointwise drift with constant sigma");
      }
    } catch (const Error& e) {
      diags.push_back(std::string("model: ") + e.what());
    }
  }
  return out;
}

PathSegment make_segment(const SegmentSpec& spec, const TimeGrid& grid) {
  if (spec.type == "constant") return PathSegment::constant(grid, spec.from);
  const double r = grid.delay();
  return PathSegment::from_function(grid, spec.from.size(), [&](double s) {
    const double w = (s + r) / r;
    std::vector<double> out(spec.from.size());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = (1.0 - w) * spec.from[c] + w * spec.to[c];
    return out;
  });
}

SegmentFunctional make_functional(const FunctionalSpec& spec) {
  if (spec.type == "constant_one") return constant_one();
  if (spec.type == "smoothed_half_line") return smoothed_half_line(spec.coord, spec.threshold, spec.scale);
  if (spec.type == "tanh_sup_norm") return tanh_sup_norm();
  return tanh_endpoint(spec.coord);
}

PathSegment shifted(const PathSegment& x, const PathSegment& direction, double divisor) {
  std::vector<double> values = x.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += direction.values()[i] / divisor;
  return PathSegment(std::move(values), x.dim(), x.step());
}

// Writes output files and records them for the manifest.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  void write(const std::string& name, const std::string& contents) {
    const fs::path file = root_ / name;
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream os(file, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + file.string());
    os << contents;
    os.close();
    if (!os) throw ConfigError("failed writing " + file.string());
    files_.push_back({name, sha256_hex(contents), static_cast<std::uintmax_t>(contents.size())});
  }

  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  const fs::path& root() const { return root_; }
  const std::vector<ManifestEntry>& files() const { return files_; }

 private:
  fs::path root_;
  std::vector<ManifestEntry> files_;
};

SolverConfig solver_config(const Plan& plan, std::size_t workers) {
  SolverConfig cfg{TimeGrid::make(plan.r, plan.horizon, plan.h), plan.seed, plan.n, plan.drift_clip, workers};
  cfg.validate();
  return cfg;
}

ScalarField pointwise_field(const ModelSpec& model) {
  return [drift = model.drift.pointwise()](double t, double x) {
    double in[1] = {x};
    double out[1] = {0.0};
    drift(t, in, out);
    return out[0];
  };
}

ScalarField constant_sigma(const ModelSpec& model) {
  const double s = model.diffusion.constant_value()(0, 0);
  return [s](double, double) { return s; };
}

struct Context {
  const Plan& plan;
  const ModelSpec& model;
  const std::string& digest;
  std::size_t workers;
  OutputDir& out;
  std::vector<std::string>& findings;
  bool& failed_check;
};

void run_simulate(Context& c) {
  const auto cfg = solver_config(c.plan, c.workers);
  const auto x0 = make_segment(c.plan.initial, cfg.grid);
  std::vector<std::string> texts(cfg.replicates);
  parallel_for(cfg.replicates, c.workers, [&](std::size_t i) {
    const BrownianDriver driver(cfg.seed, i, cfg.grid, c.model.dim);
    const auto path = c.plan.driftless ? driftless_path(c.model, x0, cfg, driver) : euler_maruyama(c.model, x0, cfg, driver);
    std::ostringstream os;
    write_path_csv(os, path);
    texts[i] = os.str();
  });
  const int width = std::max<int>(5, static_cast<int>(std::to_string(cfg.replicates - 1).size()));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::ostringstream name;
    name << "paths/path_" << std::setw(width) << std::setfill('0') << i << ".csv";
    c.out.write(name.str(), texts[i]);
  }
}

std::vector<PathSegment> probe_sequence(const Plan& plan, const PathSegment& x, const TimeGrid& grid) {
  const auto direction = make_segment(plan.direction, grid);
  std::vector<PathSegment> ys;
  for (double d : plan.divisors) ys.push_back(shifted(x, direction, d));
  return ys;
}

void record_verdict(Context& c, const ProbeReport& report) {
  c.findings.push_back(report.kind + ": " + to_string(report.verdict));
  if (report.verdict == Verdict::kInconclusive) c.failed_check = true;
}

void run_probe(Context& c) {
  const auto cfg = solver_config(c.plan, c.workers);
  const auto x = make_segment(c.plan.initial, cfg.grid);
  const auto ys = probe_sequence(c.plan, x, cfg.grid);
  ProbeReport report;
  std::string stem;
  if (c.plan.kind == "strong-feller") {
    const auto estimator = c.plan.estimator == "direct" ? EstimatorKind::kDirect : EstimatorKind::kGirsanov;
    report = strong_feller_probe(c.model, make_functional(c.plan.functional), x, ys, c.plan.t, cfg, estimator);
    stem = "strong_feller";
  } else {
    report = stability_probe(c.model, x, ys, c.plan.t, c.plan.gamma, cfg);
    stem = "stability";
  }
  report.config_digest = c.digest;
  std::ostringstream csv;
  write_probe_csv(csv, report);
  c.out.write(stem + ".csv", csv.str());
  c.out.write_json(stem + ".json", report);
  record_verdict(c, report);
}

void run_girsanov_check(Context& c) {
  const auto cfg = solver_config(c.plan, c.workers);
  const auto x = make_segment(c.plan.initial, cfg.grid);
  const auto f = make_functional(c.plan.functional);
  auto weighted = weighted_expectation(c.model, x, f, c.plan.t, cfg);
  weighted.config_digest = c.digest;
  json j{{"functional", f.name}, {"t", c.plan.t}, {"weighted", weighted}, {"config_digest", c.digest}};
  if (c.plan.direct) {
    auto direct = direct_expectation(c.model, x, f, c.plan.t, cfg);
    direct.config_digest = c.digest;
    const double diff = weighted.estimate - direct.estimate;
    const double se = std::hypot(weighted.std_error, direct.std_error);
    const bool agree = std::abs(diff) <= kPassSigmas * se;
    j["direct"] = direct;
    j["agreement"] = {{"difference", diff}, {"combined_stderr", se}, {"within", agree}, {"sigmas", kPassSigmas}};
    c.findings.push_back(std::string("girsanov-check: ") + (agree ? "agree" : "disagree"));
    if (!agree) c.failed_check = true;
  }
  if (c.plan.novikov_target) {
    const auto partition = novikov_partition(c.model, x, *c.plan.novikov_target, cfg);
    j["novikov_partition"] = partition;
  }
  c.out.write_json("girsanov_check.json", j);
}

void run_zvonkin(Context& c) {
  const auto sigma = constant_sigma(c.model);
  const auto b = pointwise_field(c.model);
  const auto grid = PdeGrid::make(c.plan.pde.half_width, c.plan.pde.dx, 0.0, c.plan.pde_horizon, c.plan.pde.dt);
  const auto sol = solve_backward_pde(sigma, b, grid);
  std::ostringstream csv;
  write_pde_csv(csv, sol);
  c.out.write("pde.csv", csv.str());
  json j{{"horizon", c.plan.pde_horizon},
         {"half_width", c.plan.pde.half_width},
         {"dx", c.plan.pde.dx},
         {"dt", c.plan.pde.dt},
         {"gradient_bound", gradient_bound(sol)},
         {"config_digest", c.digest}};
  if (c.plan.delta_horizon) {
    const auto delta = select_delta(sigma, b, *c.plan.delta_horizon, c.plan.pde, c.plan.max_cover);
    j["delta"] = delta;
  }
  if (c.plan.residual) {
    const auto cfg = solver_config(c.plan, c.workers);
    const auto x = make_segment(c.plan.initial, cfg.grid);
    const auto res = drift_removal_residual(c.model, sol, x, cfg, c.plan.blocks);
    const double allowance = residual_allowance(grid, cfg.grid.step());
    const bool passed =
        !res.inconclusive && res.summary.estimate <= kPassSigmas * res.summary.std_error + allowance;
    json rj{{"max_abs_block_drift", res.summary.estimate},
            {"stderr", res.summary.std_error},
            {"n", res.summary.n},
            {"exited", res.exited},
            {"inconclusive", res.inconclusive},
            {"block_drift", res.block_drift},
            {"block_stderr", res.block_stderr},
            {"allowance", allowance},
            {"passed", passed}};
    j["residual"] = rj;
    c.findings.push_back(std::string("zvonkin residual: ") + (res.inconclusive ? "inconclusive" : passed ? "pass" : "fail"));
    if (!passed) c.failed_check = true;
  }
  c.out.write_json("zvonkin.json", j);
}

void run_bounds(Context& c) {
  const auto cfg = solver_config(c.plan, c.workers);
  const auto x = make_segment(c.plan.initial, cfg.grid);
  json j{{"config_digest", c.digest}};
  auto exp_sup = exp_sup_bound_check(c.model, x, c.plan.exp_alpha, cfg);
  exp_sup.config_digest = c.digest;
  j["exp_sup"] = exp_sup;
  c.findings.push_back(std::string("exp-sup bound: ") + (exp_sup.passed ? "pass" : "fail"));
  if (!exp_sup.passed) c.failed_check = true;
  if (const auto& k = c.plan.krylov) {
    const double radius = k->radius;
    const SpaceTimeFunction f = [radius](double, std::span<const double> y) {
      return euclidean_norm(y) <= radius ? 1.0 : 0.0;
    };
    auto report = krylov_check(c.model, x, f, k->p, cfg, QuadratureBox{k->half_width, k->dx});
    report.config_digest = c.digest;
    j["krylov"] = report;
  }
  if (const auto& g = c.plan.gronwall) {
    const auto scenario = brownian_gronwall_scenario(g->scale, cfg.grid.n_main(), cfg.grid.step(), cfg.replicates,
                                                     mix_seed(cfg.seed, 7));
    const auto report = gronwall_bound_check(scenario, g->p, g->mu, g->nu);
    j["gronwall"] = {{"lhs", report.lhs}, {"lhs_stderr", report.lhs_stderr}, {"rhs", report.rhs},
                     {"passed", report.passed}, {"c_p", gronwall_constant(g->p)}};
    if (report.deterministic_bound) j["gronwall"]["deterministic_bound"] = *report.deterministic_bound;
    c.findings.push_back(std::string("gronwall bound: ") + (report.passed ? "pass" : "fail"));
    if (!report.passed) c.failed_check = true;
  }
  c.out.write_json("bounds.json", j);
}

json validation_json(const ValidationReport& r) {
  return {{"passed", r.passed},
          {"min", r.min_value},
          {"max", r.max_value},
          {"points_checked", r.points_checked},
          {"evaluation_errors", r.evaluation_errors},
          {"messages", r.messages}};
}

void run_validate(Context& c) {
  const auto cfg = solver_config(c.plan, c.workers);
  const auto x = make_segment(c.plan.initial, cfg.grid);
  const std::size_t n = c.plan.probe_paths;
  std::vector<std::optional<SamplePath>> paths(n);
  parallel_for(n, c.workers, [&](std::size_t i) {
    const BrownianDriver driver(mix_seed(cfg.seed, 11), i, cfg.grid, c.model.dim);
    paths[i] = euler_maruyama(c.model, x, cfg, driver);
  });
  std::vector<SamplePath> probes;
  std::vector<DiffusionProbe> points;
  std::vector<DiffusionPairProbe> pairs;
  for (auto& p : paths) probes.push_back(std::move(*p));
  const auto& grid = cfg.grid;
  const std::size_t stride = std::max<std::size_t>(1, grid.n_main() / 16);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t k = 0; k <= grid.n_main(); k += stride) {
      const std::size_t node = grid.n_pre() + k;
      const auto state = probes[i].state(node);
      points.push_back({grid.time(node), {state.begin(), state.end()}});
      const auto other = probes[(i + 1) % probes.size()].state(node);
      if (!std::equal(state.begin(), state.end(), other.begin()))
        pairs.push_back({grid.time(node), {state.begin(), state.end()}, {other.begin(), other.end()}});
    }
  }
  const auto ellipticity = check_ellipticity(c.model.diffusion, points, c.model.c_sigma);
  const auto lipschitz = check_lipschitz(c.model.diffusion, pairs, c.model.c_sigma);
  json j{{"model", c.model.name},
         {"c_sigma", c.model.c_sigma},
         {"ellipticity", validation_json(ellipticity)},
         {"lipschitz", validation_json(lipschitz)},
         {"config_digest", c.digest}};
  bool passed = ellipticity.passed && lipschitz.passed;
  const auto& env = c.model.envelopes;
  if (env.F && env.C1 && env.C2) {
    const auto envelope = check_drift_envelope(c.model, probes);
    j["drift_envelope"] = validation_json(envelope);
    passed = passed && envelope.passed;
  } else {
    j["drift_envelope"] = nullptr;
  }
  j["passed"] = passed;
  c.findings.push_back(std::string("validate: ") + (passed ? "pass" : "fail"));
  if (!passed) c.failed_check = true;
  c.out.write_json("validate.json", j);
}

json strip_output(json document) {
  if (document.is_object()) document.erase("output");
  return document;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const fs::path& file, std::string kind) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot read config file " + file.string());
  json document;
  try {
    document = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(std::move(document), std::move(kind));
}

ExperimentConfig ExperimentConfig::from_json(json document, std::string kind) {
  if (!document.is_object()) throw ConfigError("config must be a JSON object");
  return ExperimentConfig{std::move(kind), std::move(document)};
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  if (!document.contains("mc") || !document["mc"].is_object()) document["mc"] = json::object();
  document["mc"]["seed"] = seed;
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) { return resolve(cfg).diagnostics; }

std::string config_digest(const ExperimentConfig& cfg) {
  json canonical{{"kind", cfg.kind}, {"config", strip_output(cfg.document)}};
  return sha256_hex(canonical.dump());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw NumericalError("SHA-256 computation failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < length; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + file.string());
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return sha256_hex(buffer.str());
}

void to_json(json& j, const RunManifest& m) {
  json files = json::array();
  for (const auto& f : m.files) files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  j = json{{"config_digest", m.config_digest},
           {"tool_version", m.tool_version},
           {"kind", m.kind},
           {"wall_clock_seconds", m.wall_clock_seconds},
           {"complete", m.complete},
           {"files", files}};
  if (!m.error.empty()) j["error"] = m.error;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.manifest.kind = cfg.kind;
  result.manifest.config_digest = config_digest(cfg);

  fs::path root = options.output_dir.value_or(fs::path{});
  if (!options.output_dir) {
    if (cfg.document.contains("output") && cfg.document["output"].is_string())
      root = cfg.document["output"].get<std::string>();
    else
      root = "sdde-out";
  }

  auto resolved = resolve(cfg);
  std::optional<OutputDir> out;
  try {
    out.emplace(root);
  } catch (const std::exception& e) {
    result.manifest.error = std::string("cannot create output directory: ") + e.what();
    result.exit_code = kExitConfig;
    return result;
  }

  const auto finish = [&] {
    result.manifest.files = out->files();
    result.manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream os(out->root() / "manifest.json", std::ios::binary);
    os << json(result.manifest).dump(2) << "\n";
  };

  if (!resolved.diagnostics.empty()) {
    std::string joined;
    for (const auto& d : resolved.diagnostics) joined += (joined.empty() ? "" : "; ") + d;
    result.manifest.error = joined;
    result.exit_code = kExitConfig;
    finish();
    return result;
  }

  const std::size_t workers = options.workers == 0 ? default_workers() : options.workers;
  bool failed_check = false;
  try {
    const auto model = build_model(resolved.plan);
    if (!model) throw ConfigError("model: no model family selected");
    Context context{resolved.plan, *model, result.manifest.config_digest, workers, *out, result.findings, failed_check};
    const auto& kind = cfg.kind;
    if (kind == "simulate") run_simulate(context);
    else if (kind == "strong-feller" || kind == "stability") run_probe(context);
    else if (kind == "girsanov-check") run_girsanov_check(context);
    else if (kind == "zvonkin") run_zvonkin(context);
    else if (kind == "bounds") run_bounds(context);
    else if (kind == "validate") run_validate(context);
    result.manifest.complete = true;
  } catch (const ConfigError& e) {
    result.manifest.error = e.what();
    result.exit_code = kExitConfig;
  } catch (const std::exception& e) {
    result.manifest.error = e.what();
    result.exit_code = kExitNumerical;
  }
  if (result.manifest.complete && options.assert_results && failed_check) result.exit_code = kExitAssertion;
  finish();
  return result;
}

}  // namespace sdde
