#include "mcn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <random>
#include <stdexcept>
#include <thread>

#include "mcn/io.hpp"

namespace mcn::synth {

namespace {

std::mt19937_64 shot_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kPumpStream = ~std::uint64_t{0};

double sech2(double z) {
  const double c = std::cosh(z);
  return 1.0 / (c * c);
}

}  // namespace

void SynthSpec::validate() const {
  if (!(n_atoms > 1.0)) throw std::invalid_argument("synth: n_atoms must exceed 1");
  if (!(snr > 0.0)) throw std::invalid_argument("synth: snr must be > 0");
  if (!(ringing_ratio >= 0.0 && ringing_ratio <= 1.5))
    throw std::invalid_argument("synth: ringing_ratio must lie in [0, 1.5]");
  if (ringing_ratio > 0.0 && !(ringing_gap > 0.0))
    throw std::invalid_argument("synth: ringing_gap must be > 0");
  if (n_shots < 1) throw std::invalid_argument("synth: n_shots must be >= 1");
  if (jitter_rel && !(*jitter_rel >= 0.0)) throw std::invalid_argument("synth: jitter_rel must be >= 0");
  if (!(dt >= 0.0)) throw std::invalid_argument("synth: dt must be >= 0");
  if (!(power_scale > 0.0) || !(pump_power > 0.0))
    throw std::invalid_argument("synth: power scales must be > 0");
  if (!(pump_noise_rel >= 0.0)) throw std::invalid_argument("synth: pump_noise_rel must be >= 0");
  if (!std::isfinite(time_offset)) throw std::invalid_argument("synth: time_offset must be finite");
}

double oracle_delay(double n_coop, double rate, double n_atoms) {
  const long double two_pi_n = 2.0L * std::numbers::pi_v<long double> * static_cast<long double>(n_atoms);
  const long double l = std::log(two_pi_n);
  return static_cast<double>(l * l / (16.0L * static_cast<long double>(n_coop) * static_cast<long double>(rate)));
}

double oracle_delay(const SynthSpec& spec) {
  const auto b = model::mcn_breakdown(spec.n_atoms, spec.drive, spec.geom, spec.species, spec.beta);
  return oracle_delay(b.n_mc, b.mean_rate_r, spec.n_atoms);
}

ShotSet synth_shot_set(const SynthSpec& spec, unsigned jobs) {
  spec.validate();
  ShotSet set;
  set.breakdown = model::mcn_breakdown(spec.n_atoms, spec.drive, spec.geom, spec.species, spec.beta);
  const auto& b = set.breakdown;
  set.mean_delay = model::mean_delay(b.n_mc, b.mean_rate_r, spec.n_atoms);
  set.jitter_rel = spec.jitter_rel ? *spec.jitter_rel : model::delay_jitter_rel(spec.n_atoms);
  set.tau_b = 3.5 / (b.n_mc * b.mean_rate_r);
  set.p_s = spec.power_scale * b.n_mc * b.n_mc;
  set.noise_std = std::isinf(spec.snr) ? 0.0 : set.p_s / spec.snr;

  const double tau_p = spec.drive.tau_p;
  const double dt = spec.dt > 0.0 ? spec.dt : tau_p / 64.0;
  const double tau = set.tau_b / traces::kSech2FwhmPerTau;
  const double gap = spec.ringing_ratio > 0.0 ? spec.ringing_gap * set.tau_b : 0.0;
  const double t_end = set.mean_delay * (1.0 + 6.0 * set.jitter_rel) + gap + 6.0 * set.tau_b;
  const double t_start = -std::max(0.3 * t_end, 4.0 * tau_p);
  const auto n = static_cast<std::size_t>(std::ceil((t_end - t_start) / dt)) + 1;
  const double t0 = spec.time_offset + t_start;

  {
    auto rng = shot_engine(spec.seed, kPumpStream);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double t_on = -tau_p * std::numbers::ln2;  // 50 % crossing at t = 0
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = t_start + static_cast<double>(i) * dt;
      const double clean = t > t_on ? spec.pump_power * -std::expm1(-(t - t_on) / tau_p) : 0.0;
      p[i] = clean + spec.pump_noise_rel * spec.pump_power * noise(rng);
    }
    set.pump = traces::Trace::uniform(t0, dt, std::move(p), {spec.run_id, spec.n_atoms, spec.drive.delta_p, -1});
  }

  set.shots.resize(spec.n_shots);
  set.truth.resize(spec.n_shots);
  auto make_shot = [&](std::size_t k) {
    auto rng = shot_engine(spec.seed, k);
    std::normal_distribution<double> unit(0.0, 1.0);
    double t_d = set.mean_delay;
    if (set.jitter_rel > 0.0) {
      do {
        t_d = set.mean_delay * (1.0 + set.jitter_rel * unit(rng));
      } while (!(t_d > 0.0));
    }
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = t_start + static_cast<double>(i) * dt;
      double v = set.p_s * sech2((t - t_d) / tau);
      if (gap > 0.0) v += spec.ringing_ratio * set.p_s * sech2((t - t_d - gap) / tau);
      p[i] = v + (set.noise_std > 0.0 ? set.noise_std * unit(rng) : 0.0);
    }
    set.shots[k] = traces::Trace::uniform(t0, dt, std::move(p),
                                          {spec.run_id, spec.n_atoms, spec.drive.delta_p, static_cast<int>(k)});
    set.truth[k] = {t_d, set.p_s, set.tau_b};
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(spec.n_shots)));
  if (workers == 1) {
    for (std::size_t k = 0; k < spec.n_shots; ++k) make_shot(k);
    return set;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < spec.n_shots; k += workers) make_shot(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return set;
}

void write_shot_set(const std::filesystem::path& dir, const std::string& run_id, const ShotSet& set,
                    const std::vector<std::string>& comments) {
  traces::write_trace_csv(dir / traces::pump_file_name(run_id), set.pump, comments);
  for (std::size_t k = 0; k < set.shots.size(); ++k)
    traces::write_trace_csv(dir / traces::shot_file_name(run_id, static_cast<int>(k)), set.shots[k], comments);
  std::string out;
  for (const auto& c : comments) out += "# " + c + "\n";
  out += "shot,t_d_s,p_s_w,tau_b_s\n";
  for (std::size_t k = 0; k < set.truth.size(); ++k) {
    const auto& t = set.truth[k];
    out += std::to_string(k) + "," + io::format_double(t.t_d) + "," + io::format_double(t.p_s) + "," +
           io::format_double(t.tau_b) + "\n";
  }
  io::atomic_write(dir / (run_id + "_truth.csv"), out);
}

}  // namespace mcn::synth
