#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mcn/model.hpp"
#include "mcn/numerics.hpp"

// beta calibration against measured delays, scaling fits and the MCN map.
// Detunings are in units of gamma; times in the model's time unit.
namespace mcn::calibration {

struct DelayPoint {
  double n_atoms = 0.0;
  double delta_p = 0.0;
  double mean_t_d = 0.0;
  double std_t_d = 0.0;  // 0 when unknown
  std::size_t n_shots = 0;
};

struct DelayDataset {
  std::vector<DelayPoint> points;

  void validate() const;
  /// Distinct detunings in order of first appearance.
  std::vector<double> detunings() const;
  std::vector<DelayPoint> at_detuning(double delta_p) const;

  /// Columns n_atoms,delta_p_gamma,mean_t_d_s,std_t_d_s,n_shots; '#' lines are comments.
  static DelayDataset read_csv(const std::filesystem::path& path);
  std::string to_csv() const;
};

/// Model inputs shared by every point; drive.delta_p is replaced per detuning.
struct ModelContext {
  model::DriveConfig drive{6.4, 18.4, 130e-9};
  model::EnsembleGeometry geom = model::EnsembleGeometry::hollow_core_reference();
  model::AtomSpecies species = model::AtomSpecies::rubidium87_d1();
  model::QuadratureSpec quad{};

  model::DriveConfig drive_at(double delta_p) const;
};

/// Mean-delay predictor at one detuning with the radial stage cached.
class DelayModel {
 public:
  DelayModel(const ModelContext& ctx, double delta_p);

  model::McnBreakdown breakdown(double n_atoms, double beta) const;
  double delay(double n_atoms, double beta) const;
  const model::RadialMoments& radial() const { return radial_; }

 private:
  ModelContext ctx_;
  model::DriveConfig drive_;
  model::RadialMoments radial_;
};

/// Noise-free delays at every (N, detuning) pair from the pipeline itself.
DelayDataset model_dataset(std::span<const double> n_atoms, std::span<const double> detunings,
                           const ModelContext& ctx, const std::function<double(double)>& beta_of_delta,
                           std::size_t n_shots = 100);

struct BetaFitOptions {
  double beta_min = 0.0;
  double beta_max = 2.0;
  std::size_t scan_points = 21;
  double tol = 1e-9;
};

struct BetaFit {
  double delta_p = 0.0;
  double beta = 0.0;
  double objective = 0.0;
  std::size_t n_points = 0;
  bool weighted = false;
  bool non_unimodal = false;  // more than one local minimum on the coarse scan
};

/// Weighted least-squares beta at one detuning. Weights are n_shots / std^2
/// when every point carries a spread, uniform otherwise. A coarse scan picks
/// the basin; Brent refines it inside the neighbouring scan cells.
BetaFit fit_beta_single(double delta_p, std::span<const DelayPoint> points, const ModelContext& ctx,
                        const BetaFitOptions& options = {});

struct BetaLaw {
  double intercept = 0.0;
  double slope = 0.0;  // per unit of delta_p / gamma
  double valid_min_detuning = 0.0;

  /// Linear law clamped to >= 0.
  double operator()(double delta_p) const;
};

struct BetaSample {
  double delta_p = 0.0;
  double beta = 0.0;
};

struct BetaLawFit {
  BetaLaw law;
  numerics::LinFitResult fit;
  std::vector<std::size_t> excluded;  // indices with delta_p <= min_detuning
};

BetaLawFit fit_beta_law(std::span<const BetaSample> samples, double min_detuning = 6.0);

struct ScalingFit {
  numerics::LinFitResult fit;
  std::vector<std::size_t> excluded;
};

ScalingFit scaling_fit(std::span<const double> xs, std::span<const double> ys,
                       std::span<const std::size_t> exclusions = {});

struct CollapsePoint {
  double n_atoms = 0.0;
  double delta_p = 0.0;
  double beta = 0.0;
  double n_mu = 0.0;
  double n_mc = 0.0;
  double mean_rate_r = 0.0;
  double gamma_n = 0.0;  // from the measured mean delay
  double rate_ratio = 0.0;  // gamma_n / <Gamma_R>_r, to compare against n_mc
};

std::vector<CollapsePoint> scaling_collapse(const DelayDataset& data, const ModelContext& ctx,
                                            const std::function<double(double)>& beta_of_delta);

// -- map -----------------------------------------------------------------------

struct MapGrid {
  double n_min = 1e4;
  double n_max = 2.2e5;
  std::size_t n_points = 20;  // log-spaced; 1 uses n_min only
  double delta_min = 7.0;
  double delta_max = 26.4;
  std::size_t delta_points = 20;  // linear; 1 uses delta_min only

  void validate() const;
  std::vector<double> atom_numbers() const;
  std::vector<double> detunings() const;
};

struct McnCell {
  double n_atoms = 0.0;
  double n_mu = 0.0;
  double delta_p = 0.0;
  double beta = 0.0;
  double ratio = 0.0;  // N_mc / N_mu
  double alpha_tilde = 0.0;
  double eta_inh = 0.0;
  double eta_s = 0.0;
  bool valid = false;
  bool model_invalid = false;  // delta_p <= omega_p0: effective two-level picture breaks down
  std::string error;
};

struct BoundaryPoint {
  double delta_p = 0.0;
  double n_atoms = 0.0;
  double n_mu = 0.0;
  double residual = 0.0;
};

struct McnMap {
  std::vector<double> n_atoms;
  std::vector<double> delta_p;
  std::vector<McnCell> cells;  // delta-major
  std::vector<BoundaryPoint> boundary_attenuation;  // alpha_tilde = 1, one per detuning where bracketed
  std::vector<BoundaryPoint> boundary_equal;        // eta_inh = eta_s(alpha_tilde = 1), one per root and N

  const McnCell& cell(std::size_t i_delta, std::size_t i_n) const {
    return cells[i_delta * n_atoms.size() + i_n];
  }
  std::size_t invalid_cells() const;
};

/// alpha_tilde at (N, detuning) with beta from the law.
double attenuation_at(double n_atoms, double delta_p, const ModelContext& ctx, double beta);

/// eta_inh(delta_p) - eta_s(alpha_tilde = 1; delta_p); independent of N.
double equal_boundary_residual(double delta_p, const ModelContext& ctx);

McnMap mcn_map(const MapGrid& grid, const ModelContext& ctx, const BetaLaw& beta_law, unsigned jobs = 1);

}  // namespace mcn::calibration
