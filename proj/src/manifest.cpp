#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "mcn/cli.hpp"
#include "mcn/io.hpp"

namespace mcn::cli {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ManifestError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ManifestError(where + ": unknown key '" + key + "'");
  }
}

std::string path_of(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

double number(const json& j, const std::string& key, const std::string& where, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ManifestError(path_of(where, key) + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ManifestError(path_of(where, key) + ": must be finite");
  return x;
}

double positive(const json& j, const std::string& key, const std::string& where, double fallback) {
  const double x = number(j, key, where, fallback);
  if (!(x > 0.0)) throw ManifestError(path_of(where, key) + ": must be > 0");
  return x;
}

double non_negative(const json& j, const std::string& key, const std::string& where, double fallback) {
  const double x = number(j, key, where, fallback);
  if (!(x >= 0.0)) throw ManifestError(path_of(where, key) + ": must be >= 0");
  return x;
}

std::size_t count(const json& j, const std::string& key, const std::string& where, std::size_t fallback,
                  std::size_t min_value) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min_value))
    throw ManifestError(path_of(where, key) + ": expected an integer >= " + std::to_string(min_value));
  return v.get<std::size_t>();
}

std::string text(const json& j, const std::string& key, const std::string& where, std::string fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ManifestError(path_of(where, key) + ": expected a string");
  return j.at(key).get<std::string>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

model::AtomSpecies parse_species(const json& j) {
  const std::string w = "species";
  check_keys(j, {"gamma_mhz_2pi", "lambda_nm", "branching", "sigma13_cm2", "gamma0_gamma"}, w);
  const auto rb = model::AtomSpecies::rubidium87_d1();
  model::AtomSpecies s;
  s.gamma = 2.0 * std::numbers::pi * 1e6 * positive(j, "gamma_mhz_2pi", w, rb.gamma / (2.0 * std::numbers::pi * 1e6));
  s.lambda = 1e-9 * positive(j, "lambda_nm", w, rb.lambda * 1e9);
  s.branching = positive(j, "branching", w, rb.branching);
  if (s.branching > 1.0) throw ManifestError("species.branching: must lie in (0, 1]");
  s.sigma13 = 1e-4 * positive(j, "sigma13_cm2", w, rb.sigma13 * 1e4);
  s.gamma0 = s.gamma * non_negative(j, "gamma0_gamma", w, rb.gamma0 / rb.gamma);
  return s;
}

model::EnsembleGeometry parse_geometry(const json& j, double lambda) {
  const std::string w = "geometry";
  check_keys(j, {"sigma_a_um", "sigma_p_um", "length_cm", "core_radius_um"}, w);
  const double sa = 1e-6 * positive(j, "sigma_a_um", w, 1.7);
  const double sp = 1e-6 * positive(j, "sigma_p_um", w, 2.75);
  const double len = 1e-2 * positive(j, "length_cm", w, 3.0);
  const double rc = 1e-6 * positive(j, "core_radius_um", w, 10.0);
  if (!(rc > sa)) throw ManifestError("geometry.core_radius_um: must exceed sigma_a_um");
  return model::EnsembleGeometry::from_mode_field(sa, sp, len, rc, lambda);
}

model::DriveConfig parse_drive(const json& j, const std::string& w) {
  check_keys(j, {"omega_p0_gamma", "delta_p_gamma", "tau_p_ns"}, w);
  model::DriveConfig d;
  d.omega_p0 = positive(j, "omega_p0_gamma", w, 6.4);
  d.delta_p = number(j, "delta_p_gamma", w, 18.4);
  if (d.delta_p == 0.0) throw ManifestError(w + ".delta_p_gamma: must be non-zero");
  d.tau_p = 1e-9 * positive(j, "tau_p_ns", w, 130.0);
  return d;
}

}  // namespace

const char* tool_version() { return MCN_VERSION; }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return out.str();
}

double RunManifest::beta_at(double delta_p) const { return beta ? *beta : beta_law(delta_p); }

calibration::ModelContext RunManifest::context(std::size_t drive_index) const {
  calibration::ModelContext ctx;
  ctx.drive = drives.at(drive_index);
  ctx.geom = geom;
  ctx.species = species;
  ctx.quad.rel_tol = tolerances.quad_rel_tol;
  return ctx;
}

RunManifest RunManifest::parse(std::string_view json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  check_keys(root, {"description", "species", "geometry", "drives", "n_atoms", "beta", "beta_law", "data",
                    "output_dir", "seed", "tolerances", "synth", "map", "calibration"},
             "manifest");
  RunManifest m;
  m.base_dir = base_dir;
  m.sha256 = sha256_hex(json_text);
  try {
    m.species = parse_species(root.value("species", json::object()));
    m.geom = parse_geometry(root.value("geometry", json::object()), m.species.lambda);
  } catch (const model::ModelError& e) {
    throw ManifestError(e.what());
  }

  if (root.contains("drives")) {
    const auto& ds = root.at("drives");
    if (!ds.is_array() || ds.empty()) throw ManifestError("drives: expected a non-empty array");
    for (std::size_t i = 0; i < ds.size(); ++i) m.drives.push_back(parse_drive(ds[i], "drives[" + std::to_string(i) + "]"));
  } else {
    m.drives.push_back(parse_drive(json::object(), "drives[0]"));
  }

  if (root.contains("n_atoms")) {
    const auto& ns = root.at("n_atoms");
    if (!ns.is_array()) throw ManifestError("n_atoms: expected an array");
    for (const auto& v : ns) {
      if (!v.is_number() || !(v.get<double>() > 1.0)) throw ManifestError("n_atoms: entries must be numbers > 1");
      m.n_atoms.push_back(v.get<double>());
    }
  }

  if (root.contains("beta")) m.beta = non_negative(root, "beta", "", 0.0);
  if (root.contains("beta_law")) {
    const auto& j = root.at("beta_law");
    check_keys(j, {"intercept", "slope_per_gamma", "min_detuning_gamma"}, "beta_law");
    m.beta_law.intercept = number(j, "intercept", "beta_law", m.beta_law.intercept);
    m.beta_law.slope = number(j, "slope_per_gamma", "beta_law", m.beta_law.slope);
    m.beta_law.valid_min_detuning = non_negative(j, "min_detuning_gamma", "beta_law", m.beta_law.valid_min_detuning);
  }

  if (root.contains("data")) {
    const auto& j = root.at("data");
    check_keys(j, {"trace_dir", "run_id", "volts_per_watt", "delays", "exclude_fallback"}, "data");
    m.data.trace_dir = resolve(base_dir, text(j, "trace_dir", "data", ""));
    m.data.run_id = text(j, "run_id", "data", "");
    if (j.contains("volts_per_watt")) m.data.volts_per_watt = positive(j, "volts_per_watt", "data", 1.0);
    m.data.delays = resolve(base_dir, text(j, "delays", "data", ""));
    if (j.contains("exclude_fallback")) {
      if (!j.at("exclude_fallback").is_boolean()) throw ManifestError("data.exclude_fallback: expected a boolean");
      m.data.exclude_fallback = j.at("exclude_fallback").get<bool>();
    }
  }

  m.output_dir = resolve(base_dir, text(root, "output_dir", "", "out"));
  if (root.contains("seed")) {
    const auto& s = root.at("seed");
    if (!s.is_number_unsigned()) throw ManifestError("seed: expected a non-negative integer");
    m.seed = s.get<std::uint64_t>();
  }

  if (root.contains("tolerances")) {
    const auto& j = root.at("tolerances");
    const std::string w = "tolerances";
    check_keys(j, {"quad_rel_tol", "min_prominence_sigma", "noise_fraction", "merge_gap_windows", "beta_tol"}, w);
    auto& t = m.tolerances;
    t.quad_rel_tol = positive(j, "quad_rel_tol", w, t.quad_rel_tol);
    t.min_prominence_sigma = positive(j, "min_prominence_sigma", w, t.min_prominence_sigma);
    t.noise_fraction = positive(j, "noise_fraction", w, t.noise_fraction);
    if (t.noise_fraction >= 1.0) throw ManifestError("tolerances.noise_fraction: must be < 1");
    t.merge_gap_windows = non_negative(j, "merge_gap_windows", w, t.merge_gap_windows);
    t.beta_tol = positive(j, "beta_tol", w, t.beta_tol);
  }

  if (root.contains("synth")) {
    const auto& j = root.at("synth");
    const std::string w = "synth";
    check_keys(j, {"run_id", "n_atoms", "drive_index", "snr", "n_shots", "ringing_ratio", "ringing_gap", "jitter_rel",
                   "dt_ns", "power_scale_w", "delay_noise_rel"},
               w);
    auto& s = m.synth;
    s.run_id = text(j, "run_id", w, s.run_id);
    s.n_atoms = number(j, "n_atoms", w, s.n_atoms);
    if (!(s.n_atoms > 1.0)) throw ManifestError("synth.n_atoms: must exceed 1");
    s.drive_index = count(j, "drive_index", w, 0, 0);
    if (s.drive_index >= m.drives.size()) throw ManifestError("synth.drive_index: no such drive");
    if (j.contains("snr") && j.at("snr").is_string()) {
      if (j.at("snr").get<std::string>() != "inf") throw ManifestError("synth.snr: expected a number or \"inf\"");
      s.snr = std::numeric_limits<double>::infinity();
    } else {
      s.snr = positive(j, "snr", w, s.snr);
    }
    s.n_shots = count(j, "n_shots", w, s.n_shots, 1);
    s.ringing_ratio = non_negative(j, "ringing_ratio", w, s.ringing_ratio);
    if (s.ringing_ratio > 1.5) throw ManifestError("synth.ringing_ratio: must lie in [0, 1.5]");
    s.ringing_gap = positive(j, "ringing_gap", w, s.ringing_gap);
    if (j.contains("jitter_rel")) s.jitter_rel = non_negative(j, "jitter_rel", w, 0.0);
    s.dt = 1e-9 * non_negative(j, "dt_ns", w, 0.0);
    s.power_scale = positive(j, "power_scale_w", w, s.power_scale);
    s.delay_noise_rel = non_negative(j, "delay_noise_rel", w, s.delay_noise_rel);
  }

  if (root.contains("map")) {
    const auto& j = root.at("map");
    const std::string w = "map";
    check_keys(j, {"n_min", "n_max", "n_points", "delta_min_gamma", "delta_max_gamma", "delta_points"}, w);
    auto& g = m.map;
    g.n_min = positive(j, "n_min", w, g.n_min);
    g.n_max = positive(j, "n_max", w, g.n_max);
    g.n_points = count(j, "n_points", w, g.n_points, 1);
    g.delta_min = positive(j, "delta_min_gamma", w, g.delta_min);
    g.delta_max = positive(j, "delta_max_gamma", w, g.delta_max);
    g.delta_points = count(j, "delta_points", w, g.delta_points, 1);
    try {
      g.validate();
    } catch (const std::invalid_argument& e) {
      throw ManifestError(e.what());
    }
  }

  if (root.contains("calibration")) {
    const auto& j = root.at("calibration");
    const std::string w = "calibration";
    check_keys(j, {"min_detuning_gamma", "beta_max", "scan_points"}, w);
    auto& c = m.calibration;
    c.min_detuning = non_negative(j, "min_detuning_gamma", w, c.min_detuning);
    c.beta_max = positive(j, "beta_max", w, c.beta_max);
    c.scan_points = count(j, "scan_points", w, c.scan_points, 3);
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::exception& e) {
    throw ManifestError(e.what());
  }
  return parse(bytes, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

}  // namespace mcn::cli
