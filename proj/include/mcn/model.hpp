#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "mcn/numerics.hpp"

// Maximum-cooperation-number model of collective Raman decay in a radially
// inhomogeneous, longitudinally attenuated ensemble.
//
// Rates, shifts and bandwidths are angular frequencies expressed in the same
// unit as AtomSpecies::gamma (rad/s for SI runs, 1 for runs in units of the
// excited-state linewidth). Times are in the reciprocal of that unit.
// DriveConfig keeps the Rabi frequency and detuning in units of gamma.
namespace mcn::model {

using numerics::QuadratureSpec;

/// Failure inside the model pipeline, tagged with the stage that raised it.
class ModelError : public std::runtime_error {
 public:
  ModelError(std::string stage, const std::string& what);

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct AtomSpecies {
  double gamma = 0.0;      // excited-state decay rate
  double lambda = 0.0;     // transition wavelength [m]
  double branching = 0.0;  // R_B into the target ground state
  double sigma13 = 0.0;    // resonant absorption cross section [m^2]
  double gamma0 = 0.0;     // residual ground-state decoherence rate

  void validate() const;

  /// Same species with every rate divided by gamma (so gamma == 1).
  AtomSpecies in_gamma_units() const;

  /// 87Rb D1, F=1 -> F'=2, with the cross section that gives an OD per atom
  /// of 2.75e-3 for the reference geometry.
  static AtomSpecies rubidium87_d1();
};

struct EnsembleGeometry {
  double sigma_a = 0.0;      // radial 1/e density half-width [m]
  double sigma_p = 0.0;      // pump 1/e^2 intensity half-width [m]
  double length = 0.0;       // ensemble length [m]
  double core_radius = 0.0;  // upper limit of the optical-depth integral [m]
  double na = 0.0;           // numerical aperture of the collected mode
  double mu = 0.0;           // geometric factor, na^2 / 4

  void validate() const;

  /// Derives na = lambda / (pi sigma_p) and mu = na^2 / 4.
  static EnsembleGeometry from_mode_field(double sigma_a, double sigma_p, double length,
                                          double core_radius, double lambda);

  /// 1.7 um atoms, 2.75 um pump mode, 3 cm long, integrated out to 10 um.
  static EnsembleGeometry hollow_core_reference(double lambda = 795e-9);
};

struct DriveConfig {
  double omega_p0 = 0.0;  // peak Rabi frequency [gamma]
  double delta_p = 0.0;   // applied detuning [gamma]
  double tau_p = 0.0;     // pump rise time

  void validate() const;
};

struct FresnelNumbers {
  double free_space = 0.0;  // pi sigma_a^2 / (lambda L)
  double effective = 0.0;   // sigma_a / sigma_p
};

/// Every intermediate of the MCN assembly, in dependency order.
struct McnBreakdown {
  double n_atoms = 0.0;
  double mean_rate_r = 0.0;  // <Gamma_R>_r at the entrance face
  double delta_s = 0.0;      // radial std-dev of the Stark shift
  double delta_rate = 0.0;   // radial std-dev of Gamma_R
  double sigma_inh = 0.0;
  double eta_inh = 1.0;
  double alpha0 = 0.0;       // resonant peak optical depth
  double alpha_det = 0.0;    // detuned optical depth
  double gamma_dec = 0.0;
  double gain = 0.0;         // Stokes gain G_s
  double beta = 0.0;
  double alpha_tilde = 0.0;  // total attenuation
  double eff_rate = 0.0;     // <Gamma_N^eff>_{r,z}
  double eta_s = 1.0;
  double n_mu = 0.0;
  double n_mc = 0.0;

  double relative_mcn() const { return n_mc / n_mu; }
};

/// Radial quantities that depend only on drive, geometry and species.
struct RadialMoments {
  double mean_rate_r = 0.0;
  double delta_s = 0.0;
  double delta_rate = 0.0;
  double absorption_per_od = 0.0;  // alpha(Delta_p) / alpha0
};

enum class RadialQuantity { stark, rate };

// -- single-atom quantities ------------------------------------------------

/// Ground-state AC Stark shift S = omega_p^2 / (4 delta_p), any unit.
double stark_shift(double omega_p, double delta_p);

/// Raman scattering rate R_B Gamma omega_p^2 / (4 Delta^2) with the
/// Stark-shifted detuning Delta = delta_p + omega_p^2 / (2 delta_p).
/// omega_p and delta_p share the unit of species.gamma.
double scattering_rate(double omega_p, double delta_p, const AtomSpecies& species);

/// Pump Rabi frequency [gamma] at radius r and normalized depth z'.
double pump_rabi(double r, double z_prime, const DriveConfig& drive, const EnsembleGeometry& geom,
                 double alpha_tilde);

// -- radial averages ---------------------------------------------------------

/// Density-weighted radial mean (2 / sigma_a^2) \int r exp(-r^2/sigma_a^2) f(r) dr.
double radial_average(const std::function<double(double)>& f, const EnsembleGeometry& geom,
                      const QuadratureSpec& quad = {});

double radial_mean_rate(const DriveConfig& drive, const EnsembleGeometry& geom,
                        const AtomSpecies& species, const QuadratureSpec& quad = {});

double radial_std(RadialQuantity quantity, const DriveConfig& drive, const EnsembleGeometry& geom,
                  const AtomSpecies& species, const QuadratureSpec& quad = {});

RadialMoments radial_moments(const DriveConfig& drive, const EnsembleGeometry& geom,
                             const AtomSpecies& species, const QuadratureSpec& quad = {});

// -- inhomogeneous broadening -------------------------------------------------

/// Excitation bandwidth of a pump switched on within tau_p.
double homogeneous_bandwidth(double tau_p);

/// min(1, sigma_hom / sigma_inh); exactly 1 for sigma_inh == 0.
double inhomogeneous_factor(double tau_p, double sigma_inh);

// -- attenuation ------------------------------------------------------------

/// Resonant peak optical depth, integrated out to geom.core_radius.
double peak_od(double n_atoms, const EnsembleGeometry& geom, const AtomSpecies& species,
               const QuadratureSpec& quad = {});

/// Infinite-core limit 2 sigma13 N / (pi (sigma_p^2 + 2 sigma_a^2)).
double peak_od_closed_form(double n_atoms, const EnsembleGeometry& geom, const AtomSpecies& species);

double absorption(double alpha0, const DriveConfig& drive, const EnsembleGeometry& geom,
                  const AtomSpecies& species, const QuadratureSpec& quad = {});

double decoherence(const AtomSpecies& species, double delta_s, double mean_rate_r);

double stokes_gain(double alpha0, double mean_rate_r, double gamma_dec);

double attenuation(double alpha_det, double beta, double gain);

/// mu N <Gamma_R[Omega_p(r, z')]>_{r,z} for a pump attenuated as exp(-alpha_tilde z').
double effective_collective_rate(double n_atoms, const DriveConfig& drive,
                                 const EnsembleGeometry& geom, const AtomSpecies& species,
                                 double alpha_tilde, const QuadratureSpec& quad = {});

/// eff_rate / (mu N <Gamma_R>_r), capped at 1.
double shadow_factor(double eff_rate, double n_atoms, double mu, double mean_rate_r);

/// Shadow factor as a function of the attenuation alone (independent of N).
double shadow_for_attenuation(double alpha_tilde, const DriveConfig& drive,
                              const EnsembleGeometry& geom, const AtomSpecies& species,
                              const QuadratureSpec& quad = {});

// -- assembly ----------------------------------------------------------------

McnBreakdown mcn_breakdown(double n_atoms, const DriveConfig& drive, const EnsembleGeometry& geom,
                           const AtomSpecies& species, double beta, const QuadratureSpec& quad = {});

/// Same as above with the N-independent radial stage supplied by the caller.
McnBreakdown mcn_breakdown(double n_atoms, const RadialMoments& radial, const DriveConfig& drive,
                           const EnsembleGeometry& geom, const AtomSpecies& species, double beta,
                           const QuadratureSpec& quad = {});

// -- delay and rate estimators ----------------------------------------------

/// Mean burst delay [ln sqrt(2 pi N)]^2 / (4 n_coop rate). n_coop is mu N or
/// N_mc; the logarithm always takes the bare atom number.
double mean_delay(double n_coop, double rate, double n_atoms);

/// Collective rate n_coop * rate recovered from a mean delay.
double gamma_n_from_delay(double t_d, double n_atoms);

/// Small-sample burst-width relation Gamma_N = 3.5 / tau_b (tau_b is the FWHM).
double gamma_n_from_width(double tau_b);

/// Relative delay fluctuation 2.6 / ln N seeded by vacuum fluctuations.
double delay_jitter_rel(double n_atoms);

FresnelNumbers fresnel(const EnsembleGeometry& geom, const AtomSpecies& species);

}  // namespace mcn::model
