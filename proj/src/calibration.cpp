#include "mcn/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <thread>

#include "mcn/io.hpp"

namespace mcn::calibration {

namespace {

bool same_detuning(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = line.find(',');
    auto field = line.substr(0, comma);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return out;
}

double to_double(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::runtime_error("delay dataset line " + std::to_string(line_no) + ": bad number '" +
                             std::string(s) + "'");
  return v;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double attenuation_with(double n_atoms, const model::RadialMoments& radial, const ModelContext& ctx,
                        double beta) {
  const double alpha0 = model::peak_od(n_atoms, ctx.geom, ctx.species, ctx.quad);
  const double gamma_dec = model::decoherence(ctx.species, radial.delta_s, radial.mean_rate_r);
  const double gain = model::stokes_gain(alpha0, radial.mean_rate_r, gamma_dec);
  return model::attenuation(alpha0 * radial.absorption_per_od, beta, gain);
}

double equal_residual_with(const model::RadialMoments& radial, const model::DriveConfig& drive,
                           const ModelContext& ctx) {
  const double eta_inh = model::inhomogeneous_factor(drive.tau_p, radial.delta_s + radial.delta_rate);
  return eta_inh - model::shadow_for_attenuation(1.0, drive, ctx.geom, ctx.species, ctx.quad);
}

}  // namespace

// -- dataset -------------------------------------------------------------------

void DelayDataset::validate() const {
  if (points.empty()) throw std::invalid_argument("delay dataset is empty");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const std::string at = "delay point " + std::to_string(i) + ": ";
    if (!(p.n_atoms > 1.0) || !std::isfinite(p.n_atoms)) throw std::invalid_argument(at + "n_atoms must exceed 1");
    if (p.delta_p == 0.0 || !std::isfinite(p.delta_p)) throw std::invalid_argument(at + "delta_p must be non-zero");
    if (!(p.mean_t_d > 0.0) || !std::isfinite(p.mean_t_d)) throw std::invalid_argument(at + "mean_t_d must be > 0");
    if (!(p.std_t_d >= 0.0) || !std::isfinite(p.std_t_d)) throw std::invalid_argument(at + "std_t_d must be >= 0");
  }
}

std::vector<double> DelayDataset::detunings() const {
  std::vector<double> out;
  for (const auto& p : points)
    if (std::none_of(out.begin(), out.end(), [&](double d) { return same_detuning(d, p.delta_p); }))
      out.push_back(p.delta_p);
  return out;
}

std::vector<DelayPoint> DelayDataset::at_detuning(double delta_p) const {
  std::vector<DelayPoint> out;
  for (const auto& p : points)
    if (same_detuning(p.delta_p, delta_p)) out.push_back(p);
  return out;
}

DelayDataset DelayDataset::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  static const std::vector<std::string_view> header{"n_atoms", "delta_p_gamma", "mean_t_d_s", "std_t_d_s",
                                                    "n_shots"};
  DelayDataset data;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto fields = split_csv(line);
    if (!header_seen) {
      if (fields != header)
        throw std::runtime_error(path.string() + ": header must be n_atoms,delta_p_gamma,mean_t_d_s,std_t_d_s,n_shots");
      header_seen = true;
      continue;
    }
    if (fields.size() != header.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
    DelayPoint p;
    p.n_atoms = to_double(fields[0], line_no);
    p.delta_p = to_double(fields[1], line_no);
    p.mean_t_d = to_double(fields[2], line_no);
    p.std_t_d = to_double(fields[3], line_no);
    const double shots = to_double(fields[4], line_no);
    if (!(shots >= 0.0) || shots != std::floor(shots))
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": n_shots must be a count");
    p.n_shots = static_cast<std::size_t>(shots);
    data.points.push_back(p);
  }
  if (!header_seen) throw std::runtime_error(path.string() + ": missing header");
  data.validate();
  return data;
}

std::string DelayDataset::to_csv() const {
  std::string out = "n_atoms,delta_p_gamma,mean_t_d_s,std_t_d_s,n_shots\n";
  for (const auto& p : points)
    out += io::format_double(p.n_atoms) + "," + io::format_double(p.delta_p) + "," + io::format_double(p.mean_t_d) +
           "," + io::format_double(p.std_t_d) + "," + std::to_string(p.n_shots) + "\n";
  return out;
}

// -- delay model ------------------------------------------------------------------

model::DriveConfig ModelContext::drive_at(double delta_p) const {
  model::DriveConfig d = drive;
  d.delta_p = delta_p;
  return d;
}

DelayModel::DelayModel(const ModelContext& ctx, double delta_p)
    : ctx_(ctx), drive_(ctx.drive_at(delta_p)) {
  drive_.validate();
  radial_ = model::radial_moments(drive_, ctx_.geom, ctx_.species, ctx_.quad);
}

model::McnBreakdown DelayModel::breakdown(double n_atoms, double beta) const {
  return model::mcn_breakdown(n_atoms, radial_, drive_, ctx_.geom, ctx_.species, beta, ctx_.quad);
}

double DelayModel::delay(double n_atoms, double beta) const {
  const auto b = breakdown(n_atoms, beta);
  return model::mean_delay(b.n_mc, b.mean_rate_r, n_atoms);
}

DelayDataset model_dataset(std::span<const double> n_atoms, std::span<const double> detunings,
                           const ModelContext& ctx, const std::function<double(double)>& beta_of_delta,
                           std::size_t n_shots) {
  DelayDataset data;
  for (double delta : detunings) {
    const DelayModel m(ctx, delta);
    const double beta = beta_of_delta(delta);
    for (double n : n_atoms) {
      const double t = m.delay(n, beta);
      data.points.push_back({n, delta, t, t * model::delay_jitter_rel(n), n_shots});
    }
  }
  return data;
}

// -- beta fits ---------------------------------------------------------------------

BetaFit fit_beta_single(double delta_p, std::span<const DelayPoint> points, const ModelContext& ctx,
                        const BetaFitOptions& options) {
  if (!(options.beta_min >= 0.0 && options.beta_max > options.beta_min))
    throw std::invalid_argument("beta bracket must satisfy 0 <= beta_min < beta_max");
  if (options.scan_points < 3) throw std::invalid_argument("beta scan needs at least 3 points");
  std::vector<DelayPoint> pts;
  for (const auto& p : points)
    if (same_detuning(p.delta_p, delta_p)) pts.push_back(p);
  if (pts.size() < 2) throw std::invalid_argument("fit_beta_single needs at least 2 points at this detuning");

  const bool weighted =
      std::all_of(pts.begin(), pts.end(), [](const DelayPoint& p) { return p.std_t_d > 0.0 && p.n_shots > 0; });
  std::vector<double> w(pts.size(), 1.0);
  if (weighted) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      w[i] = static_cast<double>(pts[i].n_shots) / (pts[i].std_t_d * pts[i].std_t_d);
  }
  const double w_mean = [&] {
    double s = 0.0;
    for (double x : w) s += x;
    return s / static_cast<double>(w.size());
  }();
  const DelayModel model(ctx, delta_p);
  auto objective = [&](double beta) {
    double s = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double r = model.delay(pts[i].n_atoms, beta) - pts[i].mean_t_d;
      s += (w[i] / w_mean) * r * r;
    }
    return s;
  };

  const std::size_t m = options.scan_points;
  std::vector<double> grid(m), values(m);
  for (std::size_t k = 0; k < m; ++k) {
    grid[k] = options.beta_min + (options.beta_max - options.beta_min) * static_cast<double>(k) /
                                     static_cast<double>(m - 1);
    values[k] = objective(grid[k]);
  }
  std::size_t best = 0;
  std::size_t minima = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (values[k] < values[best]) best = k;
    const bool left_ok = k == 0 || values[k] < values[k - 1];
    const bool right_ok = k + 1 == m || values[k] < values[k + 1];
    if (left_ok && right_ok) ++minima;
  }
  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, m - 1)];

  BetaFit fit;
  fit.delta_p = delta_p;
  fit.beta = numerics::minimize_scalar(objective, lo, hi, options.tol);
  fit.objective = objective(fit.beta);
  fit.n_points = pts.size();
  fit.weighted = weighted;
  fit.non_unimodal = minima > 1;
  return fit;
}

double BetaLaw::operator()(double delta_p) const { return std::max(0.0, intercept + slope * delta_p); }

BetaLawFit fit_beta_law(std::span<const BetaSample> samples, double min_detuning) {
  BetaLawFit out;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].delta_p > min_detuning) {
      xs.push_back(samples[i].delta_p);
      ys.push_back(samples[i].beta);
    } else {
      out.excluded.push_back(i);
    }
  }
  if (xs.size() < 2) throw std::invalid_argument("fit_beta_law needs at least 2 samples above min_detuning");
  out.fit = numerics::linfit(xs, ys);
  out.law = {out.fit.intercept, out.fit.slope, min_detuning};
  return out;
}

ScalingFit scaling_fit(std::span<const double> xs, std::span<const double> ys,
                       std::span<const std::size_t> exclusions) {
  if (xs.size() != ys.size()) throw std::invalid_argument("scaling_fit: xs and ys differ in length");
  ScalingFit out;
  for (std::size_t e : exclusions) {
    if (e >= xs.size()) throw std::invalid_argument("scaling_fit: exclusion index out of range");
    if (std::find(out.excluded.begin(), out.excluded.end(), e) == out.excluded.end()) out.excluded.push_back(e);
  }
  std::sort(out.excluded.begin(), out.excluded.end());
  std::vector<double> kx, ky;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (std::binary_search(out.excluded.begin(), out.excluded.end(), i)) continue;
    kx.push_back(xs[i]);
    ky.push_back(ys[i]);
  }
  if (kx.size() < 2) throw std::invalid_argument("scaling_fit needs at least 2 retained points");
  out.fit = numerics::linfit(kx, ky);
  return out;
}

std::vector<CollapsePoint> scaling_collapse(const DelayDataset& data, const ModelContext& ctx,
                                            const std::function<double(double)>& beta_of_delta) {
  data.validate();
  std::vector<CollapsePoint> out(data.points.size());
  for (double delta : data.detunings()) {
    const DelayModel m(ctx, delta);
    const double beta = beta_of_delta(delta);
    for (std::size_t i = 0; i < data.points.size(); ++i) {
      const auto& p = data.points[i];
      if (!same_detuning(p.delta_p, delta)) continue;
      const auto b = m.breakdown(p.n_atoms, beta);
      auto& c = out[i];
      c.n_atoms = p.n_atoms;
      c.delta_p = p.delta_p;
      c.beta = beta;
      c.n_mu = b.n_mu;
      c.n_mc = b.n_mc;
      c.mean_rate_r = b.mean_rate_r;
      c.gamma_n = model::gamma_n_from_delay(p.mean_t_d, p.n_atoms);
      c.rate_ratio = c.gamma_n / b.mean_rate_r;
    }
  }
  return out;
}

// -- map ------------------------------------------------------------------------------

void MapGrid::validate() const {
  if (n_points < 1 || delta_points < 1) throw std::invalid_argument("map: need at least 1 point per axis");
  if (!(n_min > 1.0) || !(n_max >= n_min) || (n_points > 1 && !(n_max > n_min)))
    throw std::invalid_argument("map: need 1 < n_min < n_max");
  if (!(delta_min > 0.0) || !(delta_max >= delta_min) || (delta_points > 1 && !(delta_max > delta_min)))
    throw std::invalid_argument("map: need 0 < delta_min < delta_max");
}

std::vector<double> MapGrid::atom_numbers() const {
  if (n_points == 1) return {n_min};
  std::vector<double> out(n_points);
  const double a = std::log(n_min), b = std::log(n_max);
  for (std::size_t i = 0; i < n_points; ++i)
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n_points - 1));
  out.front() = n_min;
  out.back() = n_max;
  return out;
}

std::vector<double> MapGrid::detunings() const {
  if (delta_points == 1) return {delta_min};
  std::vector<double> out(delta_points);
  for (std::size_t i = 0; i < delta_points; ++i)
    out[i] = delta_min + (delta_max - delta_min) * static_cast<double>(i) / static_cast<double>(delta_points - 1);
  out.back() = delta_max;
  return out;
}

std::size_t McnMap::invalid_cells() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const McnCell& c) { return !c.valid; }));
}

double attenuation_at(double n_atoms, double delta_p, const ModelContext& ctx, double beta) {
  const DelayModel m(ctx, delta_p);
  return attenuation_with(n_atoms, m.radial(), ctx, beta);
}

double equal_boundary_residual(double delta_p, const ModelContext& ctx) {
  const DelayModel m(ctx, delta_p);
  return equal_residual_with(m.radial(), ctx.drive_at(delta_p), ctx);
}

McnMap mcn_map(const MapGrid& grid, const ModelContext& ctx, const BetaLaw& beta_law, unsigned jobs) {
  grid.validate();
  McnMap map;
  map.n_atoms = grid.atom_numbers();
  map.delta_p = grid.detunings();
  const std::size_t nn = map.n_atoms.size(), nd = map.delta_p.size();
  map.cells.resize(nn * nd);
  std::vector<double> equal_residual(nd, std::numeric_limits<double>::quiet_NaN());
  std::vector<BoundaryPoint> attenuation_row(nd);
  std::vector<char> attenuation_found(nd, 0);

  parallel_for(nd, jobs, [&](std::size_t j) {
    const double delta = map.delta_p[j];
    const double beta = beta_law(delta);
    std::unique_ptr<DelayModel> m;
    std::string row_error;
    try {
      m = std::make_unique<DelayModel>(ctx, delta);
    } catch (const std::exception& e) {
      row_error = e.what();
    }
    for (std::size_t i = 0; i < nn; ++i) {
      McnCell& c = map.cells[j * nn + i];
      c.n_atoms = map.n_atoms[i];
      c.n_mu = ctx.geom.mu * c.n_atoms;
      c.delta_p = delta;
      c.beta = beta;
      c.model_invalid = delta <= ctx.drive.omega_p0;
      if (!m) {
        c.error = row_error;
        continue;
      }
      try {
        const auto b = m->breakdown(c.n_atoms, beta);
        c.ratio = b.relative_mcn();
        c.alpha_tilde = b.alpha_tilde;
        c.eta_inh = b.eta_inh;
        c.eta_s = b.eta_s;
        c.valid = true;
      } catch (const std::exception& e) {
        c.error = e.what();
      }
    }
    if (!m) return;
    try {
      const model::DriveConfig drive = ctx.drive_at(delta);
      equal_residual[j] = equal_residual_with(m->radial(), drive, ctx);
      auto h = [&](double log_n) { return attenuation_with(std::exp(log_n), m->radial(), ctx, beta) - 1.0; };
      const double lo = std::log(grid.n_min), hi = std::log(grid.n_max);
      const double h_lo = h(lo), h_hi = h(hi);
      if (hi > lo && (h_lo == 0.0 || h_hi == 0.0 || (h_lo < 0.0) != (h_hi < 0.0))) {
        const double root = h_lo == 0.0 ? lo : (h_hi == 0.0 ? hi : numerics::find_root(h, lo, hi, 1e-14));
        const double n = std::exp(root);
        attenuation_row[j] = {delta, n, ctx.geom.mu * n, h(root)};
        attenuation_found[j] = 1;
      }
    } catch (const std::exception&) {
      // boundary left unreported for this detuning
    }
  });

  for (std::size_t j = 0; j < nd; ++j)
    if (attenuation_found[j]) map.boundary_attenuation.push_back(attenuation_row[j]);

  for (std::size_t j = 0; j + 1 < nd; ++j) {
    const double a = equal_residual[j], b = equal_residual[j + 1];
    if (!std::isfinite(a) || !std::isfinite(b) || (a < 0.0) == (b < 0.0)) continue;
    try {
      const double root = numerics::find_root([&](double d) { return equal_boundary_residual(d, ctx); },
                                              map.delta_p[j], map.delta_p[j + 1], 1e-12);
      const double residual = equal_boundary_residual(root, ctx);
      for (double n : map.n_atoms) map.boundary_equal.push_back({root, n, ctx.geom.mu * n, residual});
    } catch (const std::exception&) {
    }
  }
  return map;
}

}  // namespace mcn::calibration
