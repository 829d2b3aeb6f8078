#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mcn/model.hpp"
#include "mcn/traces.hpp"

// Synthetic pump and Stokes traces generated from the model, plus an
// independent delay oracle. Times share the model's time unit (seconds when
// the species is in SI units).
namespace mcn::synth {

struct SynthSpec {
  double n_atoms = 8.3e4;
  model::DriveConfig drive{6.4, 18.4, 130e-9};
  model::EnsembleGeometry geom = model::EnsembleGeometry::hollow_core_reference();
  model::AtomSpecies species = model::AtomSpecies::rubidium87_d1();
  double beta = 0.07;
  double snr = 10.0;             // first-burst peak over per-sample noise std; +inf for noiseless
  double ringing_ratio = 0.0;    // second / first burst amplitude, in [0, 1.5]
  double ringing_gap = 4.0;      // burst separation in units of tau_b
  std::size_t n_shots = 100;
  std::uint64_t seed = 1;
  std::string run_id = "synth";

  std::optional<double> jitter_rel;  // overrides 2.6 / ln N when set (0 disables jitter)
  double dt = 0.0;                   // sample spacing; 0 selects tau_p / 64
  double power_scale = 1e-10;        // peak power per N_mc^2
  double pump_power = 1e-3;          // pump plateau
  double pump_noise_rel = 0.01;      // pump noise std relative to the plateau
  double time_offset = 0.0;          // scope time of the pump 50 % crossing

  void validate() const;
};

struct ShotTruth {
  double t_d = 0.0;  // relative to the pump 50 % crossing
  double p_s = 0.0;
  double tau_b = 0.0;
};

struct ShotSet {
  traces::Trace pump;
  std::vector<traces::Trace> shots;
  std::vector<ShotTruth> truth;
  model::McnBreakdown breakdown;
  double mean_delay = 0.0;
  double jitter_rel = 0.0;
  double tau_b = 0.0;
  double p_s = 0.0;
  double noise_std = 0.0;
};

/// Shots are generated from seeds derived from (seed, shot index), so the
/// output does not depend on `jobs`.
ShotSet synth_shot_set(const SynthSpec& spec, unsigned jobs = 1);

/// Mean delay at the SynthSpec operating point through the oracle formula.
double oracle_delay(const SynthSpec& spec);

/// [ln sqrt(2 pi N)]^2 / (4 n_coop rate), accumulated in extended precision.
double oracle_delay(double n_coop, double rate, double n_atoms);

/// Writes `<run>_pump.csv`, `<run>_shot<k>.csv` and `<run>_truth.csv`.
void write_shot_set(const std::filesystem::path& dir, const std::string& run_id, const ShotSet& set,
                    const std::vector<std::string>& comments = {});

}  // namespace mcn::synth
