#include "mcn/traces.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "mcn/io.hpp"
#include "mcn/numerics.hpp"

namespace mcn::traces {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view s, std::size_t line_no) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    throw TraceError("line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
  return v;
}

std::size_t argmax(std::span<const double> v, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(std::max_element(v.begin() + lo, v.begin() + hi) - v.begin());
}

// Half-maximum full width around peak, linearly interpolated; in samples.
double half_max_width(std::span<const double> v, std::size_t lo, std::size_t hi, std::size_t peak,
                      double base) {
  const double half = base + 0.5 * (v[peak] - base);
  double left = static_cast<double>(lo);
  for (std::size_t i = peak; i > lo; --i) {
    if (v[i - 1] <= half) {
      left = static_cast<double>(i - 1) + (half - v[i - 1]) / (v[i] - v[i - 1]);
      break;
    }
  }
  double right = static_cast<double>(hi - 1);
  for (std::size_t i = peak; i + 1 < hi; ++i) {
    if (v[i + 1] <= half) {
      right = static_cast<double>(i) + (v[i] - half) / (v[i] - v[i + 1]);
      break;
    }
  }
  return std::max(right - left, 1.0);
}

struct SechFit {
  double a, x0, w, b, rms;
  bool ok;
};

// Levenberg-Marquardt on y = a sech^2((x - x0) / w) + b with O(1) scaled data.
SechFit fit_sech2(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Eigen::Vector4d theta) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd r(n);
  Eigen::MatrixXd jac(n, 4);

  auto residuals = [&](const Eigen::Vector4d& th, Eigen::VectorXd& out) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double c = std::cosh((x[i] - th[1]) / th[2]);
      out[i] = y[i] - (th[0] / (c * c) + th[3]);
    }
    return out.squaredNorm();
  };
  auto jacobian = [&](const Eigen::Vector4d& th) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = (x[i] - th[1]) / th[2];
      const double c = std::cosh(z);
      const double s = 1.0 / (c * c);
      const double t = std::tanh(z);
      jac(i, 0) = s;
      jac(i, 1) = 2.0 * th[0] * s * t / th[2];
      jac(i, 2) = 2.0 * th[0] * s * t * z / th[2];
      jac(i, 3) = 1.0;
    }
  };

  double cost = residuals(theta, r);
  double lambda = 1e-3;
  bool converged = false;
  Eigen::VectorXd r_trial(n);
  for (int iter = 0; iter < 300 && !converged; ++iter) {
    jacobian(theta);
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d jtr = jac.transpose() * r;
    while (true) {
      Eigen::Matrix4d lhs = jtj;
      for (int k = 0; k < 4; ++k) lhs(k, k) += lambda * std::max(jtj(k, k), 1e-300);
      const Eigen::Vector4d step = lhs.ldlt().solve(jtr);
      const Eigen::Vector4d trial = theta + step;
      const double trial_cost =
          (std::isfinite(step.sum()) && trial[2] > 0.0) ? residuals(trial, r_trial) : kInf;
      if (trial_cost < cost) {
        const double drop = cost - trial_cost;
        theta = trial;
        r.swap(r_trial);
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        if (drop <= 1e-14 * cost || step.norm() <= 1e-13 * (theta.norm() + 1e-13) || cost < 1e-28 * n)
          converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e12) {
        converged = true;  // no descent direction left
        break;
      }
    }
  }
  const double rms = std::sqrt(cost / static_cast<double>(n));
  const bool ok = converged && std::isfinite(cost) && theta[0] > 0.0 && theta[2] > 0.0 &&
                  theta[1] >= x[0] && theta[1] <= x[n - 1];
  return {theta[0], theta[1], theta[2], theta[3], rms, ok};
}

}  // namespace

Trace Trace::uniform(double t0, double dt, std::vector<double> p, TraceMeta meta) {
  Trace tr;
  tr.t.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) tr.t[i] = t0 + static_cast<double>(i) * dt;
  tr.p = std::move(p);
  tr.dt = dt;
  tr.meta = std::move(meta);
  return tr;
}

void Trace::validate() const {
  if (t.size() != p.size()) throw TraceError("time and power lengths differ");
  if (t.size() < 16) throw TraceError("trace needs at least 16 samples");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw TraceError("sample spacing must be positive");
  const double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double expected = t[0] + static_cast<double>(i) * dt;
    if (std::abs(t[i] - expected) > 1e-9 * dt + 8.0 * eps * std::max(std::abs(t[i]), std::abs(t[0])))
      throw TraceError("non-uniform sampling at sample " + std::to_string(i));
    if (!std::isfinite(p[i])) throw TraceError("non-finite power at sample " + std::to_string(i));
  }
}

const char* to_string(FitQuality q) {
  switch (q) {
    case FitQuality::fitted: return "fitted";
    case FitQuality::raw_fallback: return "raw_fallback";
    case FitQuality::no_burst: return "no_burst";
  }
  return "?";
}

const char* to_string(DominantShape s) {
  return s == DominantShape::second_burst ? "second-burst-dominant" : "first-burst-dominant";
}

std::vector<double> moving_average(std::span<const double> p, std::size_t width) {
  const std::size_t n = p.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + p[i];
  const std::size_t h = width / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = std::min({h, i, n - 1 - i});
    out[i] = (prefix[i + k + 1] - prefix[i - k]) / static_cast<double>(2 * k + 1);
  }
  return out;
}

double align_time_zero(const Trace& pump, const AlignOptions& options) {
  pump.validate();
  const auto s = moving_average(pump.p, std::max<std::size_t>(options.smoothing_samples, 1));
  std::vector<double> sorted = s;
  const std::size_t top = std::max<std::size_t>(1, sorted.size() / 10);
  std::nth_element(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(top), sorted.end());
  double plateau = 0.0;
  for (auto it = sorted.end() - static_cast<std::ptrdiff_t>(top); it != sorted.end(); ++it) plateau += *it;
  plateau /= static_cast<double>(top);
  const double half = 0.5 * plateau;
  if (!(plateau > 0.0)) throw TraceError("pump reference has no positive plateau");
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i - 1] < half && s[i] >= half)
      return pump.t[i - 1] + (half - s[i - 1]) / (s[i] - s[i - 1]) * pump.dt;
  }
  throw TraceError("pump reference never crosses 50 % of its plateau");
}

std::size_t smoothing_width(const Trace& trace, const DetectOptions& options) {
  if (options.smoothing_samples > 0) return options.smoothing_samples;
  const double w = std::floor(options.rise_time / trace.dt);
  return std::max<std::size_t>(3, std::isfinite(w) ? static_cast<std::size_t>(w) : 3);
}

namespace {

struct NoiseFloor {
  double baseline;
  double sigma;           // per raw sample
  double baseline_var;    // variance of the baseline estimate
  double floor;           // lower bound on the smoothed noise
};

NoiseFloor noise_floor(const Trace& trace, const DetectOptions& options) {
  if (!(options.noise_fraction > 0.0 && options.noise_fraction < 1.0))
    throw std::invalid_argument("noise_fraction must lie in (0, 1)");
  const auto m = std::max<std::size_t>(
      2, static_cast<std::size_t>(options.noise_fraction * static_cast<double>(trace.size())));
  const auto stats = numerics::summary_stats(std::span<const double>(trace.p).first(m));
  double excess = 0.0;
  for (double v : trace.p) excess = std::max(excess, v - stats.mean);
  return {stats.mean, stats.std_dev, stats.std_err * stats.std_err, 1e-3 * excess};  // floor keeps noiseless traces separable
}

}  // namespace

std::vector<Interval> detect_bursts(const Trace& trace, double min_prominence_sigma,
                                    const DetectOptions& options) {
  trace.validate();
  if (!(min_prominence_sigma > 0.0)) throw std::invalid_argument("min_prominence_sigma must be > 0");
  const std::size_t w = smoothing_width(trace, options);
  const auto nf = noise_floor(trace, options);
  const auto s = moving_average(trace.p, w);
  const std::size_t n = s.size();
  // Threshold follows the averaged sample count, which shrinks at the edges.
  auto above = [&](std::size_t i) {
    const std::size_t k = std::min({w / 2, i, n - 1 - i});
    const double var = nf.sigma * nf.sigma / static_cast<double>(2 * k + 1) + nf.baseline_var;
    const double sigma = std::max(std::sqrt(var), nf.floor);
    return sigma > 0.0 && s[i] > nf.baseline + min_prominence_sigma * sigma;
  };

  std::vector<Interval> runs;
  for (std::size_t i = 0; i < s.size();) {
    if (above(i)) {
      std::size_t j = i;
      while (j < s.size() && above(j)) ++j;
      runs.push_back({i, j});
      i = j;
    } else {
      ++i;
    }
  }
  const auto gap = static_cast<std::size_t>(options.merge_gap_windows * static_cast<double>(w));
  std::vector<Interval> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && r.begin - merged.back().end < gap)
      merged.back().end = r.end;
    else
      merged.push_back(r);
  }
  // Pad by one smoothing window, never past the midpoint to a neighbour.
  std::vector<Interval> out = merged;
  for (std::size_t k = 0; k < merged.size(); ++k) {
    const std::size_t lo_limit = k == 0 ? 0 : (merged[k - 1].end + merged[k].begin) / 2;
    const std::size_t hi_limit = k + 1 == merged.size() ? s.size() : (merged[k].end + merged[k + 1].begin) / 2;
    out[k].begin = merged[k].begin > lo_limit + w ? merged[k].begin - w : lo_limit;
    out[k].end = std::min(merged[k].end + w, hi_limit);
  }
  return out;
}

BurstFeatures fit_burst(const Trace& trace, Interval iv, double t_zero) {
  trace.validate();
  if (iv.end > trace.size() || iv.begin >= iv.end || iv.size() < 8)
    throw std::invalid_argument("fit interval must contain at least 8 samples");
  const std::span<const double> p(trace.p);
  const std::size_t n = iv.size();

  BurstFeatures f;
  f.n_bursts = 1;
  const std::size_t raw_peak = argmax(p, iv.begin, iv.end);
  f.t_d_raw = trace.t[raw_peak] - t_zero;

  // Initial guess from a lightly smoothed copy of the window.
  const auto sm = moving_average(p.subspan(iv.begin, n), 5);
  const std::size_t edge = std::max<std::size_t>(1, std::min<std::size_t>(3, n / 4));
  double b0 = 0.0;
  for (std::size_t i = 0; i < edge; ++i) b0 += sm[i] + sm[n - 1 - i];
  b0 /= static_cast<double>(2 * edge);
  const std::size_t sp = argmax(sm, 0, n);
  const double width0 = half_max_width(sm, 0, n, sp, b0);

  f.baseline = b0;
  auto fall_back = [&] {
    f.quality = FitQuality::raw_fallback;
    f.t_d = f.t_d_raw;
    f.p_s = std::max(p[raw_peak] - b0, 0.0);
    f.tau_b = half_max_width(p, iv.begin, iv.end, raw_peak, b0) * trace.dt;
    f.fit_rms = kInf;
    return f;
  };

  double yscale = 0.0;
  for (std::size_t i = iv.begin; i < iv.end; ++i) yscale = std::max(yscale, std::abs(p[i]));
  if (!(sm[sp] - b0 > 1e-9 * yscale) || !(yscale > 0.0)) return fall_back();

  // Scaled coordinates: x in samples from the window start, y relative to the window maximum.
  Eigen::VectorXd x(static_cast<Eigen::Index>(n)), y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    x[static_cast<Eigen::Index>(i)] = static_cast<double>(i);
    y[static_cast<Eigen::Index>(i)] = p[iv.begin + i] / yscale;
  }
  Eigen::Vector4d theta((sm[sp] - b0) / yscale, static_cast<double>(sp), width0 / kSech2FwhmPerTau,
                        b0 / yscale);
  const SechFit fit = fit_sech2(x, y, theta);
  if (!fit.ok) return fall_back();

  f.quality = FitQuality::fitted;
  f.p_s = fit.a * yscale;
  f.baseline = fit.b * yscale;
  f.t_d = trace.t[iv.begin] + fit.x0 * trace.dt - t_zero;
  f.tau_b = kSech2FwhmPerTau * fit.w * trace.dt;
  f.fit_rms = fit.rms * yscale;
  return f;
}

BurstFeatures analyze_shot(const Trace& trace, double t_zero, double min_prominence_sigma,
                           const DetectOptions& options) {
  const auto intervals = detect_bursts(trace, min_prominence_sigma, options);
  if (intervals.empty()) {
    BurstFeatures f;
    const auto floor = noise_floor(trace, options);
    const std::size_t k = argmax(trace.p, 0, trace.size());
    f.quality = FitQuality::no_burst;
    f.n_bursts = 0;
    f.baseline = floor.baseline;
    f.t_d_raw = trace.t[k] - t_zero;
    f.t_d = f.t_d_raw;
    f.p_s = std::max(trace.p[k] - floor.baseline, 0.0);
    f.tau_b = half_max_width(trace.p, 0, trace.size(), k, floor.baseline) * trace.dt;
    f.fit_rms = kInf;
    return f;
  }
  auto usable = [](Interval iv) { return iv.size() >= 8; };
  auto first = std::find_if(intervals.begin(), intervals.end(), usable);
  if (first == intervals.end()) first = intervals.begin();
  Interval iv = *first;
  if (!usable(iv)) iv.end = std::min(trace.size(), iv.begin + 8);
  BurstFeatures f = fit_burst(trace, iv, t_zero);
  f.n_bursts = intervals.size();
  auto second = std::find_if(first + 1, intervals.end(), usable);
  if (second != intervals.end() && f.p_s > 0.0) {
    const BurstFeatures g = fit_burst(trace, *second, t_zero);
    f.second_peak_ratio = g.p_s / f.p_s;
  }
  return f;
}

ShotStatistics shot_statistics(std::span<const BurstFeatures> features, bool exclude_fallback) {
  if (features.empty()) throw std::invalid_argument("shot_statistics needs at least one shot");
  std::vector<double> td, ps, tb, ratio;
  std::size_t fallback = 0;
  for (const auto& f : features) {
    if (!f.fit_ok()) {
      ++fallback;
      if (exclude_fallback) continue;
    }
    td.push_back(f.t_d);
    ps.push_back(f.p_s);
    tb.push_back(f.tau_b);
    ratio.push_back(f.second_peak_ratio);
  }
  if (td.empty()) throw std::invalid_argument("no shots left after excluding fallbacks");
  const auto st = numerics::summary_stats(td);
  const auto sp = numerics::summary_stats(ps);
  const auto sb = numerics::summary_stats(tb);
  ShotStatistics out;
  out.mean_t_d = st.mean;
  out.std_t_d = st.std_dev;
  out.stderr_t_d = st.std_err;
  out.mean_p_s = sp.mean;
  out.std_p_s = sp.std_dev;
  out.mean_tau_b = sb.mean;
  out.std_tau_b = sb.std_dev;
  out.n_shots = td.size();
  out.n_fallback = fallback;
  out.dominant_shape =
      numerics::median(ratio) > 1.0 ? DominantShape::second_burst : DominantShape::first_burst;
  return out;
}

Trace read_trace_csv(const std::filesystem::path& path, std::optional<double> volts_per_watt,
                     TraceMeta meta) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  double scale = 1.0;
  std::vector<double> t, p;
  while (std::getline(in, line)) {
    ++line_no;
    const auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto comma = s.find(',');
    if (comma == std::string_view::npos)
      throw TraceError(path.string() + ":" + std::to_string(line_no) + ": expected two columns");
    if (!header_seen) {
      const auto c0 = trim(s.substr(0, comma));
      const auto c1 = trim(s.substr(comma + 1));
      if (c0 != "time_s") throw TraceError(path.string() + ": first column must be time_s");
      if (c1 == "power_v") {
        if (!volts_per_watt || !(*volts_per_watt > 0.0))
          throw TraceError(path.string() + ": power_v column requires a positive volts_per_watt");
        scale = 1.0 / *volts_per_watt;
      } else if (c1 != "power_w") {
        throw TraceError(path.string() + ": second column must be power_w or power_v");
      }
      header_seen = true;
      continue;
    }
    t.push_back(parse_number(s.substr(0, comma), line_no));
    p.push_back(parse_number(s.substr(comma + 1), line_no) * scale);
  }
  if (!header_seen) throw TraceError(path.string() + ": missing header");
  if (t.size() < 2) throw TraceError(path.string() + ": trace needs at least 16 samples");
  Trace tr;
  tr.dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  tr.t = std::move(t);
  tr.p = std::move(p);
  tr.meta = std::move(meta);
  tr.validate();
  return tr;
}

void write_trace_csv(const std::filesystem::path& path, const Trace& trace,
                     const std::vector<std::string>& comments) {
  std::string out;
  out.reserve(trace.size() * 48 + 64);
  for (const auto& c : comments) out += "# " + c + "\n";
  out += "time_s,power_w\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += io::format_double(trace.t[i]);
    out += ',';
    out += io::format_double(trace.p[i]);
    out += '\n';
  }
  io::atomic_write(path, out);
}

std::string shot_file_name(const std::string& run_id, int shot_index) {
  return run_id + "_shot" + std::to_string(shot_index) + ".csv";
}

std::string pump_file_name(const std::string& run_id) { return run_id + "_pump.csv"; }

}  // namespace mcn::traces
