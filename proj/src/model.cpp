#include "mcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

namespace mcn::model {

namespace {

using std::numbers::pi;

[[noreturn]] void fail(const char* stage, const std::string& what) { throw ModelError(stage, what); }

void require(bool ok, const char* stage, const char* what) {
  if (!ok) fail(stage, what);
}

// Runs one pipeline stage and tags any failure with its name.
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ModelError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelError(name, e.what());
  }
}

// Integrands below work with Omega^2 / Gamma^2 ("x") and Delta_p / Gamma.
double stark_dimensionless(double x, double delta) { return x / (4.0 * delta); }

double rate_dimensionless(double x, double delta, double branching) {
  const double eff = delta + x / (2.0 * delta);
  return branching * x / (4.0 * eff * eff);
}

double absorption_profile(double x, double delta) {
  const double eff = delta + 2.0 * stark_dimensionless(x, delta);
  return 1.0 / (4.0 * eff * eff);
}

// Omega^2(r, z') / Gamma^2 at reduced radius rho = r / sigma_a.
struct PumpProfile {
  double peak_sq;    // (Omega_p0 / Gamma)^2
  double radial_k;   // 2 sigma_a^2 / sigma_p^2
  double attenuation;

  double operator()(double rho, double z_prime) const {
    return peak_sq * std::exp(-radial_k * rho * rho - attenuation * z_prime);
  }
};

PumpProfile pump_profile(const DriveConfig& drive, const EnsembleGeometry& geom, double alpha_tilde) {
  const double ratio = geom.sigma_a / geom.sigma_p;
  return {drive.omega_p0 * drive.omega_p0, 2.0 * ratio * ratio, alpha_tilde};
}

QuadratureSpec radial_quadrature(QuadratureSpec quad) {
  quad.tail_scale = 1.0;
  return quad;
}

// (2) \int_0^inf rho exp(-rho^2) g(rho) drho: radial mean in reduced units.
double reduced_radial_mean(const std::function<double(double)>& g, const QuadratureSpec& quad) {
  auto integrand = [&g](double rho) {
    const double w = rho * std::exp(-rho * rho);
    return w == 0.0 ? 0.0 : 2.0 * w * g(rho);
  };
  return numerics::integrate(integrand, 0.0, numerics::kInfinity, radial_quadrature(quad));
}

double reduced_radial_std(const std::function<double(double)>& g, const QuadratureSpec& quad) {
  const double mean = reduced_radial_mean(g, quad);
  const double var = reduced_radial_mean(
      [&](double rho) {
        const double d = g(rho) - mean;
        return d * d;
      },
      quad);
  return std::sqrt(std::max(var, 0.0));
}

void validate_inputs(const DriveConfig& drive, const EnsembleGeometry& geom, const AtomSpecies& species) {
  species.validate();
  geom.validate();
  drive.validate();
}

// z-averaged, radially averaged Gamma_R / Gamma for attenuation alpha_tilde.
double averaged_rate_dimensionless(const DriveConfig& drive, const EnsembleGeometry& geom,
                                   const AtomSpecies& species, double alpha_tilde,
                                   const QuadratureSpec& quad) {
  const PumpProfile pump = pump_profile(drive, geom, alpha_tilde);
  if (alpha_tilde == 0.0) {
    return reduced_radial_mean(
        [&](double rho) { return rate_dimensionless(pump(rho, 0.0), drive.delta_p, species.branching); }, quad);
  }
  // The pump exponent s = k rho^2 + alpha_tilde z' is the sum of an exponential
  // (mean k) and a uniform variable on [0, alpha_tilde]; its density is
  // [F(s) - F(s - alpha_tilde)] / alpha_tilde with F(t) = 1 - exp(-t / k).
  const double k = pump.radial_k, a = alpha_tilde;
  auto rate_at = [&](double s) { return rate_dimensionless(pump.peak_sq * std::exp(-s), drive.delta_p, species.branching); };
  auto rising = [&](double s) { return -std::expm1(-s / k) / a * rate_at(s); };
  const double tail_weight = std::expm1(a / k) / a;
  auto falling = [&](double s) {
    const double w = std::exp(-s / k) * tail_weight;
    return w == 0.0 ? 0.0 : w * rate_at(s);
  };
  QuadratureSpec tail = quad;
  tail.tail_scale = k;
  return numerics::integrate(rising, 0.0, a, quad) + numerics::integrate(falling, a, numerics::kInfinity, tail);
}

}  // namespace

ModelError::ModelError(std::string stage, const std::string& what)
    : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

// -- parameter blocks -------------------------------------------------------

void AtomSpecies::validate() const {
  require(gamma > 0.0 && std::isfinite(gamma), "species", "gamma must be finite and > 0");
  require(lambda > 0.0, "species", "lambda must be > 0");
  require(branching > 0.0 && branching <= 1.0, "species", "branching ratio must lie in (0, 1]");
  require(sigma13 > 0.0, "species", "sigma13 must be > 0");
  require(gamma0 > 0.0, "species", "gamma0 must be > 0");
}

AtomSpecies AtomSpecies::in_gamma_units() const {
  AtomSpecies out = *this;
  out.gamma = 1.0;
  out.gamma0 = gamma0 / gamma;
  return out;
}

AtomSpecies AtomSpecies::rubidium87_d1() {
  AtomSpecies s;
  s.gamma = 2.0 * pi * 5.75e6;
  s.lambda = 795e-9;
  s.branching = 0.5;
  s.sigma13 = 5.763e-14;
  s.gamma0 = 0.057 * s.gamma;
  return s;
}

void EnsembleGeometry::validate() const {
  require(sigma_a > 0.0 && sigma_p > 0.0, "geometry", "radial widths must be > 0");
  require(length > 0.0, "geometry", "length must be > 0");
  require(core_radius > sigma_a, "geometry", "core radius must exceed sigma_a");
  require(na > 0.0 && mu > 0.0, "geometry", "na and mu must be > 0");
  require(std::abs(mu - na * na / 4.0) <= 1e-12 * mu, "geometry", "mu must equal na^2/4");
}

EnsembleGeometry EnsembleGeometry::from_mode_field(double sigma_a, double sigma_p, double length,
                                                   double core_radius, double lambda) {
  require(sigma_p > 0.0 && lambda > 0.0, "geometry", "sigma_p and lambda must be > 0");
  EnsembleGeometry g;
  g.sigma_a = sigma_a;
  g.sigma_p = sigma_p;
  g.length = length;
  g.core_radius = core_radius;
  g.na = lambda / (pi * sigma_p);
  g.mu = g.na * g.na / 4.0;
  g.validate();
  return g;
}

EnsembleGeometry EnsembleGeometry::hollow_core_reference(double lambda) {
  return from_mode_field(1.7e-6, 2.75e-6, 0.03, 10e-6, lambda);
}

void DriveConfig::validate() const {
  require(omega_p0 > 0.0 && std::isfinite(omega_p0), "drive", "omega_p0 must be finite and > 0");
  require(delta_p != 0.0 && std::isfinite(delta_p), "drive", "delta_p must be finite and non-zero");
  require(tau_p > 0.0, "drive", "tau_p must be > 0");
}

// -- single-atom quantities ------------------------------------------------

double stark_shift(double omega_p, double delta_p) {
  require(delta_p != 0.0, "stark_shift", "zero detuning: model invalid on resonance");
  return omega_p * omega_p / (4.0 * delta_p);
}

double scattering_rate(double omega_p, double delta_p, const AtomSpecies& species) {
  require(delta_p != 0.0, "scattering_rate", "zero detuning: model invalid on resonance");
  const double eff = delta_p + 2.0 * stark_shift(omega_p, delta_p);
  require(eff != 0.0, "scattering_rate", "vanishing effective detuning");
  return species.branching * species.gamma * omega_p * omega_p / (4.0 * eff * eff);
}

double pump_rabi(double r, double z_prime, const DriveConfig& drive, const EnsembleGeometry& geom,
                 double alpha_tilde) {
  require(r >= 0.0, "pump_rabi", "radius must be >= 0");
  require(z_prime >= 0.0 && z_prime <= 1.0, "pump_rabi", "z' must lie in [0, 1]");
  const double rr = r / geom.sigma_p;
  return drive.omega_p0 * std::exp(-rr * rr) * std::exp(-0.5 * alpha_tilde * z_prime);
}

// -- radial averages ---------------------------------------------------------

double radial_average(const std::function<double(double)>& f, const EnsembleGeometry& geom,
                      const QuadratureSpec& quad) {
  return stage("radial_average", [&] {
    const double sigma_a = geom.sigma_a;
    return reduced_radial_mean([&](double rho) { return f(sigma_a * rho); }, quad);
  });
}

double radial_mean_rate(const DriveConfig& drive, const EnsembleGeometry& geom,
                        const AtomSpecies& species, const QuadratureSpec& quad) {
  return stage("radial_mean_rate", [&] {
    validate_inputs(drive, geom, species);
    const PumpProfile pump = pump_profile(drive, geom, 0.0);
    return species.gamma * reduced_radial_mean(
                               [&](double rho) {
                                 return rate_dimensionless(pump(rho, 0.0), drive.delta_p,
                                                           species.branching);
                               },
                               quad);
  });
}

double radial_std(RadialQuantity quantity, const DriveConfig& drive, const EnsembleGeometry& geom,
                  const AtomSpecies& species, const QuadratureSpec& quad) {
  const char* name = quantity == RadialQuantity::stark ? "stark_spread" : "rate_spread";
  return stage(name, [&] {
    validate_inputs(drive, geom, species);
    const PumpProfile pump = pump_profile(drive, geom, 0.0);
    std::function<double(double)> g;
    if (quantity == RadialQuantity::stark) {
      g = [&](double rho) { return stark_dimensionless(pump(rho, 0.0), drive.delta_p); };
    } else {
      g = [&](double rho) {
        return rate_dimensionless(pump(rho, 0.0), drive.delta_p, species.branching);
      };
    }
    return species.gamma * reduced_radial_std(g, quad);
  });
}

RadialMoments radial_moments(const DriveConfig& drive, const EnsembleGeometry& geom,
                             const AtomSpecies& species, const QuadratureSpec& quad) {
  RadialMoments m;
  m.mean_rate_r = radial_mean_rate(drive, geom, species, quad);
  m.delta_s = radial_std(RadialQuantity::stark, drive, geom, species, quad);
  m.delta_rate = radial_std(RadialQuantity::rate, drive, geom, species, quad);
  m.absorption_per_od = stage("absorption", [&] {
    const PumpProfile pump = pump_profile(drive, geom, 0.0);
    return reduced_radial_mean(
        [&](double rho) { return absorption_profile(pump(rho, 0.0), drive.delta_p); }, quad);
  });
  return m;
}

// -- inhomogeneous broadening -------------------------------------------------

double homogeneous_bandwidth(double tau_p) {
  require(tau_p > 0.0, "inhomogeneous_factor", "tau_p must be > 0");
  // Read as an angular frequency; this is the only place the convention lives.
  return 1.0 / tau_p;
}

double inhomogeneous_factor(double tau_p, double sigma_inh) {
  require(sigma_inh >= 0.0, "inhomogeneous_factor", "sigma_inh must be >= 0");
  const double sigma_hom = homogeneous_bandwidth(tau_p);
  if (sigma_inh <= sigma_hom) return 1.0;
  return sigma_hom / sigma_inh;
}

// -- attenuation ------------------------------------------------------------

double peak_od(double n_atoms, const EnsembleGeometry& geom, const AtomSpecies& species,
               const QuadratureSpec& quad) {
  return stage("peak_od", [&] {
    require(n_atoms >= 0.0, "peak_od", "atom number must be >= 0");
    geom.validate();
    const double ratio = geom.sigma_a / geom.sigma_p;
    const double decay = 1.0 + 2.0 * ratio * ratio;
    const double rho_c = geom.core_radius / geom.sigma_a;
    const double radial = numerics::integrate(
        [decay](double rho) { return rho * std::exp(-decay * rho * rho); }, 0.0, rho_c, quad);
    return 4.0 * species.sigma13 * n_atoms / (pi * geom.sigma_p * geom.sigma_p) * radial;
  });
}

double peak_od_closed_form(double n_atoms, const EnsembleGeometry& geom, const AtomSpecies& species) {
  const double area = geom.sigma_p * geom.sigma_p + 2.0 * geom.sigma_a * geom.sigma_a;
  return 2.0 * species.sigma13 * n_atoms / (pi * area);
}

double absorption(double alpha0, const DriveConfig& drive, const EnsembleGeometry& geom,
                  const AtomSpecies& species, const QuadratureSpec& quad) {
  return stage("absorption", [&] {
    require(alpha0 >= 0.0, "absorption", "alpha0 must be >= 0");
    validate_inputs(drive, geom, species);
    const PumpProfile pump = pump_profile(drive, geom, 0.0);
    return alpha0 * reduced_radial_mean(
                        [&](double rho) { return absorption_profile(pump(rho, 0.0), drive.delta_p); },
                        quad);
  });
}

double decoherence(const AtomSpecies& species, double delta_s, double mean_rate_r) {
  require(species.gamma0 >= 0.0 && delta_s >= 0.0 && mean_rate_r >= 0.0, "decoherence",
          "decoherence contributions must be >= 0");
  return species.gamma0 + delta_s + mean_rate_r;
}

double stokes_gain(double alpha0, double mean_rate_r, double gamma_dec) {
  require(gamma_dec > 0.0, "stokes_gain", "decoherence rate must be > 0");
  require(alpha0 >= 0.0 && mean_rate_r >= 0.0, "stokes_gain", "inputs must be >= 0");
  return alpha0 * 2.0 * mean_rate_r / gamma_dec;
}

double attenuation(double alpha_det, double beta, double gain) {
  require(alpha_det >= 0.0 && beta >= 0.0 && gain >= 0.0, "attenuation", "inputs must be >= 0");
  return alpha_det + beta * gain;
}

double effective_collective_rate(double n_atoms, const DriveConfig& drive,
                                 const EnsembleGeometry& geom, const AtomSpecies& species,
                                 double alpha_tilde, const QuadratureSpec& quad) {
  return stage("effective_collective_rate", [&] {
    require(n_atoms >= 0.0, "effective_collective_rate", "atom number must be >= 0");
    require(alpha_tilde >= 0.0, "effective_collective_rate", "attenuation must be >= 0");
    validate_inputs(drive, geom, species);
    if (n_atoms == 0.0) return 0.0;
    const double n_mu = geom.mu * n_atoms;
    if (alpha_tilde == 0.0) return n_mu * radial_mean_rate(drive, geom, species, quad);
    return n_mu * species.gamma *
           averaged_rate_dimensionless(drive, geom, species, alpha_tilde, quad);
  });
}

double shadow_factor(double eff_rate, double n_atoms, double mu, double mean_rate_r) {
  const double reference = mu * n_atoms * mean_rate_r;
  require(reference > 0.0, "shadow_factor", "mu N <Gamma_R>_r must be > 0");
  require(eff_rate >= 0.0, "shadow_factor", "effective rate must be >= 0");
  return std::min(1.0, eff_rate / reference);
}

double shadow_for_attenuation(double alpha_tilde, const DriveConfig& drive,
                              const EnsembleGeometry& geom, const AtomSpecies& species,
                              const QuadratureSpec& quad) {
  return stage("shadow_factor", [&] {
    require(alpha_tilde >= 0.0, "shadow_factor", "attenuation must be >= 0");
    validate_inputs(drive, geom, species);
    if (alpha_tilde == 0.0) return 1.0;
    const double attenuated = averaged_rate_dimensionless(drive, geom, species, alpha_tilde, quad);
    const double reference = averaged_rate_dimensionless(drive, geom, species, 0.0, quad);
    return std::min(1.0, attenuated / reference);
  });
}

// -- assembly ----------------------------------------------------------------

McnBreakdown mcn_breakdown(double n_atoms, const DriveConfig& drive, const EnsembleGeometry& geom,
                           const AtomSpecies& species, double beta, const QuadratureSpec& quad) {
  const RadialMoments radial = stage("radial_moments", [&] {
    validate_inputs(drive, geom, species);
    return radial_moments(drive, geom, species, quad);
  });
  return mcn_breakdown(n_atoms, radial, drive, geom, species, beta, quad);
}

McnBreakdown mcn_breakdown(double n_atoms, const RadialMoments& radial, const DriveConfig& drive,
                           const EnsembleGeometry& geom, const AtomSpecies& species, double beta,
                           const QuadratureSpec& quad) {
  require(n_atoms > 0.0 && std::isfinite(n_atoms), "mcn", "atom number must be finite and > 0");
  require(beta >= 0.0 && std::isfinite(beta), "mcn", "beta must be finite and >= 0");
  validate_inputs(drive, geom, species);

  McnBreakdown b;
  b.n_atoms = n_atoms;
  b.beta = beta;
  b.mean_rate_r = radial.mean_rate_r;
  b.delta_s = radial.delta_s;
  b.delta_rate = radial.delta_rate;
  b.sigma_inh = b.delta_s + b.delta_rate;
  b.eta_inh = stage("inhomogeneous_factor", [&] { return inhomogeneous_factor(drive.tau_p, b.sigma_inh); });
  b.alpha0 = peak_od(n_atoms, geom, species, quad);
  b.alpha_det = stage("absorption", [&] { return b.alpha0 * radial.absorption_per_od; });
  b.gamma_dec = decoherence(species, b.delta_s, b.mean_rate_r);
  b.gain = stokes_gain(b.alpha0, b.mean_rate_r, b.gamma_dec);
  b.alpha_tilde = attenuation(b.alpha_det, beta, b.gain);
  b.eff_rate = effective_collective_rate(n_atoms, drive, geom, species, b.alpha_tilde, quad);
  b.n_mu = geom.mu * n_atoms;
  b.eta_s = shadow_factor(b.eff_rate, n_atoms, geom.mu, b.mean_rate_r);
  b.n_mc = b.eta_inh * b.eta_s * b.n_mu;
  return b;
}

// -- delay and rate estimators ----------------------------------------------

namespace {

double delay_log_factor(double n_atoms, const char* stage_name) {
  require(n_atoms > 1.0 && std::isfinite(n_atoms), stage_name, "atom number must exceed 1");
  const double l = 0.5 * std::log(2.0 * pi * n_atoms);
  return l * l;
}

}  // namespace

double mean_delay(double n_coop, double rate, double n_atoms) {
  const double log_sq = delay_log_factor(n_atoms, "mean_delay");
  require(n_coop > 0.0 && rate > 0.0, "mean_delay", "cooperativity and rate must be > 0");
  return log_sq / (4.0 * n_coop * rate);
}

double gamma_n_from_delay(double t_d, double n_atoms) {
  const double log_sq = delay_log_factor(n_atoms, "gamma_n_from_delay");
  require(t_d > 0.0, "gamma_n_from_delay", "delay must be > 0");
  return log_sq / (4.0 * t_d);
}

double gamma_n_from_width(double tau_b) {
  require(tau_b > 0.0, "gamma_n_from_width", "burst width must be > 0");
  return 3.5 / tau_b;
}

double delay_jitter_rel(double n_atoms) {
  require(n_atoms > 1.0, "delay_jitter_rel", "atom number must exceed 1");
  return 2.6 / std::log(n_atoms);
}

FresnelNumbers fresnel(const EnsembleGeometry& geom, const AtomSpecies& species) {
  require(geom.sigma_a > 0.0 && geom.sigma_p > 0.0 && geom.length > 0.0 && species.lambda > 0.0,
          "fresnel", "geometry must be positive");
  return {pi * geom.sigma_a * geom.sigma_a / (species.lambda * geom.length),
          geom.sigma_a / geom.sigma_p};
}

}  // namespace mcn::model
