#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <regex>
#include <thread>

#include <json.hpp>

#include "mcn/cli.hpp"
#include "mcn/io.hpp"

namespace mcn::cli {

namespace {

using json = nlohmann::json;
using io::format_double;

std::string provenance_line(const RunManifest& m) {
  return std::string("# mcn ") + tool_version() + " manifest-sha256 " + m.sha256 + "\n";
}

json provenance(const RunManifest& m) {
  return {{"tool", "mcn"}, {"version", tool_version()}, {"manifest_sha256", m.sha256}};
}

std::filesystem::path out_dir(const RunManifest& m, const CommandOptions& o) {
  return o.out_dir ? *o.out_dir : m.output_dir;
}

std::uint64_t seed_of(const RunManifest& m, const CommandOptions& o) { return o.seed ? *o.seed : m.seed; }

// JSON has no infinity; non-finite values become null.
json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

class Writer {
 public:
  Writer(const RunManifest& m, const CommandOptions& o, CommandResult& r) : m_(m), dir_(out_dir(m, o)), r_(r) {}

  void csv(const std::string& name, const std::string& body) {
    write(name, provenance_line(m_) + body);
  }
  void json_file(const std::string& name, json j) {
    j["provenance"] = provenance(m_);
    write(name, j.dump(2) + "\n");
  }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    io::atomic_write(path, content);
    r_.written.push_back(path);
  }

  const RunManifest& m_;
  std::filesystem::path dir_;
  CommandResult& r_;
};

std::string join(std::initializer_list<std::string> fields) {
  std::string out;
  for (const auto& f : fields) {
    if (!out.empty()) out += ',';
    out += f;
  }
  return out + "\n";
}

std::string fmt(double x) { return format_double(x); }

}  // namespace

// -- model ----------------------------------------------------------------------

CommandResult cmd_model(const RunManifest& m, const CommandOptions& o) {
  CommandResult r;
  Writer w(m, o, r);
  std::string csv =
      "drive,n_atoms,omega_p0_gamma,delta_p_gamma,tau_p_s,beta,mean_rate_r_rad_s,delta_s_rad_s,delta_rate_rad_s,"
      "sigma_inh_rad_s,eta_inh,alpha0,alpha_det,gamma_dec_rad_s,gain,alpha_tilde,eff_rate_rad_s,eta_s,n_mu,n_mc,"
      "mean_delay_s,tau_b_s,error\n";
  json rows = json::array();
  std::size_t failures = 0;
  for (std::size_t d = 0; d < m.drives.size(); ++d) {
    const auto& drive = m.drives[d];
    const double beta = m.beta_at(drive.delta_p);
    for (double n : m.n_atoms) {
      json row{{"drive", d}, {"n_atoms", n}, {"omega_p0_gamma", drive.omega_p0}, {"delta_p_gamma", drive.delta_p},
               {"tau_p_s", drive.tau_p}, {"beta", beta}};
      try {
        const auto ctx = m.context(d);
        const auto b = model::mcn_breakdown(n, drive, ctx.geom, ctx.species, beta, ctx.quad);
        const double t_d = model::mean_delay(b.n_mc, b.mean_rate_r, n);
        const double tau_b = 3.5 / (b.n_mc * b.mean_rate_r);
        csv += join({std::to_string(d), fmt(n), fmt(drive.omega_p0), fmt(drive.delta_p), fmt(drive.tau_p), fmt(beta),
                     fmt(b.mean_rate_r), fmt(b.delta_s), fmt(b.delta_rate), fmt(b.sigma_inh), fmt(b.eta_inh),
                     fmt(b.alpha0), fmt(b.alpha_det), fmt(b.gamma_dec), fmt(b.gain), fmt(b.alpha_tilde),
                     fmt(b.eff_rate), fmt(b.eta_s), fmt(b.n_mu), fmt(b.n_mc), fmt(t_d), fmt(tau_b), ""});
        row.update({{"mean_rate_r_rad_s", b.mean_rate_r}, {"delta_s_rad_s", b.delta_s},
                    {"delta_rate_rad_s", b.delta_rate}, {"sigma_inh_rad_s", b.sigma_inh}, {"eta_inh", b.eta_inh},
                    {"alpha0", b.alpha0}, {"alpha_det", b.alpha_det}, {"gamma_dec_rad_s", b.gamma_dec},
                    {"gain", b.gain}, {"alpha_tilde", b.alpha_tilde}, {"eff_rate_rad_s", b.eff_rate},
                    {"eta_s", b.eta_s}, {"n_mu", b.n_mu}, {"n_mc", b.n_mc}, {"mean_delay_s", t_d},
                    {"tau_b_s", tau_b}});
      } catch (const model::ModelError& e) {
        ++failures;
        const std::string msg = e.stage() + ": " + e.what();
        std::string line = std::to_string(d) + "," + fmt(n) + "," + fmt(drive.omega_p0) + "," + fmt(drive.delta_p) +
                           "," + fmt(drive.tau_p) + "," + fmt(beta);
        for (int i = 0; i < 16; ++i) line += ",";
        std::string quoted = msg;
        std::replace(quoted.begin(), quoted.end(), ',', ';');
        csv += line + "," + quoted + "\n";
        row["error"] = msg;
        r.messages.push_back("drive " + std::to_string(d) + " N=" + fmt(n) + ": " + msg);
      }
      rows.push_back(row);
    }
  }
  w.csv("model.csv", csv);
  w.json_file("model.json", {{"rows", rows}});
  r.exit_code = failures ? 2 : 0;
  return r;
}

// -- analyze --------------------------------------------------------------------

CommandResult cmd_analyze(const RunManifest& m, const CommandOptions& o) {
  CommandResult r;
  const auto& data = m.data;
  if (data.trace_dir.empty() || data.run_id.empty())
    throw ManifestError("analyze needs data.trace_dir and data.run_id");
  const auto pump_path = data.trace_dir / traces::pump_file_name(data.run_id);
  if (!std::filesystem::exists(pump_path)) throw std::runtime_error("missing pump trace " + pump_path.string());

  traces::TraceMeta meta{data.run_id, 0.0, m.drives.front().delta_p, -1};
  const auto pump = traces::read_trace_csv(pump_path, data.volts_per_watt, meta);
  const double t_zero = traces::align_time_zero(pump);

  const std::regex shot_re(std::regex_replace(data.run_id, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") +
                           R"(_shot(\d+)\.csv)");
  std::vector<std::pair<int, std::filesystem::path>> files;
  if (std::filesystem::is_directory(data.trace_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(data.trace_dir)) {
      std::smatch match;
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && std::regex_match(name, match, shot_re))
        files.emplace_back(std::stoi(match[1].str()), entry.path());
    }
  }
  if (files.empty()) throw std::runtime_error("no shot traces for run '" + data.run_id + "' in " + data.trace_dir.string());
  std::sort(files.begin(), files.end());

  traces::DetectOptions detect;
  detect.noise_fraction = m.tolerances.noise_fraction;
  detect.merge_gap_windows = m.tolerances.merge_gap_windows;
  detect.rise_time = m.drives.front().tau_p;

  std::vector<traces::BurstFeatures> features(files.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(o.jobs, static_cast<unsigned>(files.size())));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < files.size(); i += workers) {
        auto shot_meta = meta;
        shot_meta.shot_index = files[i].first;
        const auto trace = traces::read_trace_csv(files[i].second, data.volts_per_watt, shot_meta);
        features[i] = traces::analyze_shot(trace, t_zero, m.tolerances.min_prominence_sigma, detect);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string csv = "shot,t_d_s,p_s_w,tau_b_s,t_d_raw_s,n_bursts,second_peak_ratio,fit_rms,baseline_w,quality\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto& f = features[i];
    csv += join({std::to_string(files[i].first), fmt(f.t_d), fmt(f.p_s), fmt(f.tau_b), fmt(f.t_d_raw),
                 std::to_string(f.n_bursts), fmt(f.second_peak_ratio), fmt(f.fit_rms), fmt(f.baseline),
                 traces::to_string(f.quality)});
  }
  const auto stats = traces::shot_statistics(features, data.exclude_fallback);
  std::string stats_csv =
      "run_id,n_shots,n_fallback,t_zero_s,mean_t_d_s,std_t_d_s,stderr_t_d_s,mean_p_s_w,std_p_s_w,mean_tau_b_s,"
      "std_tau_b_s,dominant_shape\n";
  stats_csv += join({data.run_id, std::to_string(stats.n_shots), std::to_string(stats.n_fallback), fmt(t_zero),
                     fmt(stats.mean_t_d), fmt(stats.std_t_d), fmt(stats.stderr_t_d), fmt(stats.mean_p_s),
                     fmt(stats.std_p_s), fmt(stats.mean_tau_b), fmt(stats.std_tau_b),
                     traces::to_string(stats.dominant_shape)});
  Writer w(m, o, r);
  w.csv("analyze_features.csv", csv);
  w.csv("analyze_stats.csv", stats_csv);
  if (stats.n_fallback)
    r.messages.push_back(std::to_string(stats.n_fallback) + " of " + std::to_string(files.size()) +
                         " shots used the raw fallback");
  return r;
}

// -- synth ----------------------------------------------------------------------

CommandResult cmd_synth(const RunManifest& m, const CommandOptions& o) {
  CommandResult r;
  Writer w(m, o, r);
  const auto& s = m.synth;
  const auto& drive = m.drives.at(s.drive_index);
  const std::uint64_t seed = seed_of(m, o);

  synth::SynthSpec spec;
  spec.n_atoms = s.n_atoms;
  spec.drive = drive;
  spec.geom = m.geom;
  spec.species = m.species;
  spec.beta = m.beta_at(drive.delta_p);
  spec.snr = s.snr;
  spec.ringing_ratio = s.ringing_ratio;
  spec.ringing_gap = s.ringing_gap;
  spec.n_shots = s.n_shots;
  spec.seed = seed;
  spec.run_id = s.run_id;
  spec.jitter_rel = s.jitter_rel;
  spec.dt = s.dt;
  spec.power_scale = s.power_scale;

  const auto set = synth::synth_shot_set(spec, o.jobs);
  std::vector<std::string> comments{"mcn " + std::string(tool_version()) + " manifest-sha256 " + m.sha256};
  synth::write_shot_set(w.dir(), s.run_id, set, comments);
  r.written.push_back(w.dir() / traces::pump_file_name(s.run_id));
  for (std::size_t k = 0; k < set.shots.size(); ++k)
    r.written.push_back(w.dir() / traces::shot_file_name(s.run_id, static_cast<int>(k)));
  r.written.push_back(w.dir() / (s.run_id + "_truth.csv"));

  if (!m.n_atoms.empty()) {
    calibration::DelayDataset all;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t d = 0; d < m.drives.size(); ++d) {
      const double delta = m.drives[d].delta_p;
      const std::vector<double> deltas{delta};
      auto part = calibration::model_dataset(m.n_atoms, deltas, m.context(d),
                                             [&](double x) { return m.beta_at(x); }, s.n_shots);
      for (auto& p : part.points) {
        if (s.delay_noise_rel > 0.0) p.mean_t_d *= 1.0 + s.delay_noise_rel * unit(rng);
        all.points.push_back(p);
      }
    }
    w.csv(s.run_id + "_delays.csv", all.to_csv());
  }

  w.json_file(s.run_id + "_summary.json",
              {{"run_id", s.run_id}, {"seed", seed}, {"n_shots", set.shots.size()}, {"n_atoms", s.n_atoms},
               {"delta_p_gamma", drive.delta_p}, {"beta", spec.beta}, {"n_mc", set.breakdown.n_mc},
               {"n_mu", set.breakdown.n_mu}, {"mean_delay_s", set.mean_delay}, {"jitter_rel", set.jitter_rel},
               {"tau_b_s", set.tau_b}, {"p_s_w", set.p_s}, {"noise_std_w", number_or_null(set.noise_std)}});
  return r;
}

// -- calibrate --------------------------------------------------------------------

CommandResult cmd_calibrate(const RunManifest& m, const CommandOptions& o) {
  CommandResult r;
  Writer w(m, o, r);
  if (m.data.delays.empty()) throw ManifestError("calibrate needs data.delays");
  const auto data = calibration::DelayDataset::read_csv(m.data.delays);
  data.validate();
  const auto ctx = m.context(0);

  calibration::BetaFitOptions opts;
  opts.beta_max = m.calibration.beta_max;
  opts.scan_points = m.calibration.scan_points;
  opts.tol = m.tolerances.beta_tol;

  std::string csv = "delta_p_gamma,beta,objective,n_points,weighted,non_unimodal\n";
  std::vector<calibration::BetaSample> samples;
  std::map<double, double> fitted;
  for (double delta : data.detunings()) {
    const auto pts = data.at_detuning(delta);
    const auto fit = calibration::fit_beta_single(delta, pts, ctx, opts);
    csv += join({fmt(delta), fmt(fit.beta), fmt(fit.objective), std::to_string(fit.n_points),
                 fit.weighted ? "1" : "0", fit.non_unimodal ? "1" : "0"});
    samples.push_back({delta, fit.beta});
    fitted[delta] = fit.beta;
    if (fit.non_unimodal) r.messages.push_back("objective has several minima at delta_p=" + fmt(delta));
  }
  w.csv("calibrate_beta.csv", csv);

  const auto beta_of = [&](double delta) { return fitted.at(delta); };
  std::string collapse = "n_atoms,delta_p_gamma,beta,n_mu,n_mc,mean_rate_r_rad_s,gamma_n_rad_s,rate_ratio\n";
  for (const auto& c : calibration::scaling_collapse(data, ctx, beta_of))
    collapse += join({fmt(c.n_atoms), fmt(c.delta_p), fmt(c.beta), fmt(c.n_mu), fmt(c.n_mc), fmt(c.mean_rate_r),
                      fmt(c.gamma_n), fmt(c.rate_ratio)});
  w.csv("calibrate_collapse.csv", collapse);

  const auto usable = std::count_if(samples.begin(), samples.end(), [&](const calibration::BetaSample& s) {
    return s.delta_p > m.calibration.min_detuning;
  });
  if (usable < 2) {
    r.messages.push_back("beta law not fitted: need at least 2 detunings above " + fmt(m.calibration.min_detuning) +
                         " gamma, found " + std::to_string(usable));
    r.exit_code = 2;
    return r;
  }
  const auto law = calibration::fit_beta_law(samples, m.calibration.min_detuning);
  json excluded = json::array();
  for (auto i : law.excluded) excluded.push_back(samples[i].delta_p);
  w.json_file("calibrate_law.json",
              {{"intercept", law.law.intercept},
               {"slope_per_gamma", law.law.slope},
               {"min_detuning_gamma", law.law.valid_min_detuning},
               {"intercept_err", law.fit.intercept_err},
               {"slope_err", law.fit.slope_err},
               {"residual_sum_sq", law.fit.residual_sum_sq},
               {"n_detunings", law.fit.n},
               {"excluded_detunings_gamma", excluded}});
  return r;
}

// -- map --------------------------------------------------------------------------

CommandResult cmd_map(const RunManifest& m, const CommandOptions& o) {
  CommandResult r;
  Writer w(m, o, r);
  const calibration::BetaLaw law = m.beta ? calibration::BetaLaw{*m.beta, 0.0, 0.0} : m.beta_law;
  const auto map = calibration::mcn_map(m.map, m.context(0), law, o.jobs);

  std::string cells = "delta_p_gamma,n_atoms,n_mu,beta,ratio,alpha_tilde,eta_inh,eta_s,valid,model_invalid,error\n";
  for (const auto& c : map.cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    cells += join({fmt(c.delta_p), fmt(c.n_atoms), fmt(c.n_mu), fmt(c.beta), fmt(c.ratio), fmt(c.alpha_tilde),
                   fmt(c.eta_inh), fmt(c.eta_s), c.valid ? "1" : "0", c.model_invalid ? "1" : "0", err});
  }
  auto boundary = [](const std::vector<calibration::BoundaryPoint>& pts) {
    std::string out = "delta_p_gamma,n_atoms,n_mu,residual\n";
    for (const auto& p : pts) out += join({fmt(p.delta_p), fmt(p.n_atoms), fmt(p.n_mu), fmt(p.residual)});
    return out;
  };
  w.csv("map_cells.csv", cells);
  w.csv("map_boundary_attenuation.csv", boundary(map.boundary_attenuation));
  w.csv("map_boundary_equal.csv", boundary(map.boundary_equal));
  if (const auto bad = map.invalid_cells()) {
    r.messages.push_back(std::to_string(bad) + " map cells failed");
    r.exit_code = 2;
  }
  return r;
}

}  // namespace mcn::cli
