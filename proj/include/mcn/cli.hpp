#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mcn/calibration.hpp"
#include "mcn/model.hpp"
#include "mcn/synth.hpp"
#include "mcn/traces.hpp"

// Batch front end: manifest loading and the five commands. Every command
// writes its outputs atomically under the output directory and returns an
// exit code (0 ok, 2 partial row failures); hard failures throw.
namespace mcn::cli {

const char* tool_version();

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

struct Tolerances {
  double quad_rel_tol = 1e-10;
  double min_prominence_sigma = 5.0;
  double noise_fraction = 0.1;
  double merge_gap_windows = 1.0;
  double beta_tol = 1e-9;
};

struct DataLocations {
  std::filesystem::path trace_dir;
  std::string run_id;
  std::optional<double> volts_per_watt;
  std::filesystem::path delays;
  bool exclude_fallback = false;
};

struct SynthBlock {
  std::string run_id = "synth";
  double n_atoms = 8.3e4;
  std::size_t drive_index = 0;
  double snr = 10.0;
  std::size_t n_shots = 100;
  double ringing_ratio = 0.0;
  double ringing_gap = 4.0;
  std::optional<double> jitter_rel;
  double dt = 0.0;            // [s]; 0 = automatic
  double power_scale = 1e-10; // [W]
  double delay_noise_rel = 0.0;
};

struct CalibrationBlock {
  double min_detuning = 6.0;  // [gamma]
  double beta_max = 2.0;
  std::size_t scan_points = 21;
};

/// Parsed run manifest with every quantity converted to SI (rates in rad/s).
struct RunManifest {
  std::filesystem::path base_dir;
  std::string sha256;

  model::AtomSpecies species;
  model::EnsembleGeometry geom;
  std::vector<model::DriveConfig> drives;
  std::vector<double> n_atoms;
  std::optional<double> beta;
  calibration::BetaLaw beta_law{0.182, -6.1e-3, 6.0};
  DataLocations data;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  Tolerances tolerances;
  SynthBlock synth;
  calibration::MapGrid map;
  CalibrationBlock calibration;

  /// beta at a detuning: the fixed value when given, otherwise the law.
  double beta_at(double delta_p) const;
  calibration::ModelContext context(std::size_t drive_index = 0) const;

  static RunManifest parse(std::string_view json_text, const std::filesystem::path& base_dir = ".");
  static RunManifest load(const std::filesystem::path& path);
};

struct CommandOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
};

struct CommandResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> written;
  std::vector<std::string> messages;
};

CommandResult cmd_model(const RunManifest& manifest, const CommandOptions& options = {});
CommandResult cmd_analyze(const RunManifest& manifest, const CommandOptions& options = {});
CommandResult cmd_synth(const RunManifest& manifest, const CommandOptions& options = {});
CommandResult cmd_calibrate(const RunManifest& manifest, const CommandOptions& options = {});
CommandResult cmd_map(const RunManifest& manifest, const CommandOptions& options = {});

}  // namespace mcn::cli
