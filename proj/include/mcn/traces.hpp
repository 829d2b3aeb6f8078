#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcn::traces {

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceMeta {
  std::string run_id;
  double n_atoms = 0.0;
  double delta_p = 0.0;  // [gamma]
  int shot_index = -1;   // -1 for a pump reference
};

/// Uniformly sampled power trace.
struct Trace {
  std::vector<double> t;  // [s]
  std::vector<double> p;  // [W]
  double dt = 0.0;
  TraceMeta meta;

  static Trace uniform(double t0, double dt, std::vector<double> p, TraceMeta meta = {});

  /// Throws TraceError unless t is uniform (1e-9 relative) and has >= 16 samples.
  void validate() const;
  std::size_t size() const { return p.size(); }
};

/// Half-open sample range [begin, end).
struct Interval {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const Interval&) const = default;
};

enum class FitQuality { fitted, raw_fallback, no_burst };

const char* to_string(FitQuality q);

struct BurstFeatures {
  double t_d = 0.0;       // fitted first-burst peak time relative to t = 0
  double p_s = 0.0;       // fitted first-burst amplitude
  double tau_b = 0.0;     // FWHM of the fitted first burst
  double t_d_raw = 0.0;   // raw argmax in the burst window, relative to t = 0
  std::size_t n_bursts = 0;
  double second_peak_ratio = 0.0;
  double fit_rms = 0.0;   // +infinity when the fit was abandoned
  double baseline = 0.0;
  FitQuality quality = FitQuality::fitted;

  bool fit_ok() const { return quality == FitQuality::fitted; }
};

enum class DominantShape { first_burst, second_burst };

const char* to_string(DominantShape s);

struct ShotStatistics {
  double mean_t_d = 0.0;
  double std_t_d = 0.0;
  double stderr_t_d = 0.0;
  double mean_p_s = 0.0;
  double std_p_s = 0.0;
  double mean_tau_b = 0.0;
  double std_tau_b = 0.0;
  std::size_t n_shots = 0;
  std::size_t n_fallback = 0;
  DominantShape dominant_shape = DominantShape::first_burst;
};

struct AlignOptions {
  std::size_t smoothing_samples = 9;  // centered moving average before the crossing search
};

struct DetectOptions {
  double noise_fraction = 0.1;        // leading fraction of samples used as the dark window
  double rise_time = 130e-9;          // pump rise time; sets the default smoothing width
  std::size_t smoothing_samples = 0;  // 0: max(3, rise_time / dt)
  double merge_gap_windows = 1.0;     // merge intervals closer than this many windows
};

/// sech^2 FWHM per unit of the sech argument scale: 2 arccosh(sqrt 2).
inline constexpr double kSech2FwhmPerTau = 1.7627471740390861;

/// Centered moving average; the window shrinks symmetrically at the edges.
std::vector<double> moving_average(std::span<const double> p, std::size_t width);

/// Time at which the pump first reaches 50 % of its plateau (mean of the top
/// decile of smoothed samples), linearly interpolated between samples.
double align_time_zero(const Trace& pump_reference, const AlignOptions& options = {});

std::size_t smoothing_width(const Trace& trace, const DetectOptions& options);

/// Sorted, disjoint sample intervals whose smoothed power exceeds
/// baseline + min_prominence_sigma * noise. The noise combines the dark-window
/// standard deviation scaled to the number of averaged samples with the
/// standard error of the baseline itself. Runs closer than merge_gap_windows
/// are joined; each interval is padded by one smoothing window, stopping
/// halfway to a neighbour.
std::vector<Interval> detect_bursts(const Trace& trace, double min_prominence_sigma = 5.0,
                                    const DetectOptions& options = {});

/// Least-squares fit of A sech^2((t - t0) / tau) + b over the interval.
/// Falls back to raw peak / half-maximum estimates (quality raw_fallback,
/// fit_rms = +inf) when the fit does not converge to a positive burst.
BurstFeatures fit_burst(const Trace& trace, Interval interval, double t_zero = 0.0);

/// detect_bursts + fit_burst on the earliest burst, plus the second-burst ratio.
BurstFeatures analyze_shot(const Trace& trace, double t_zero, double min_prominence_sigma = 5.0,
                           const DetectOptions& options = {});

ShotStatistics shot_statistics(std::span<const BurstFeatures> features, bool exclude_fallback = false);

// -- CSV ---------------------------------------------------------------------

/// Reads `time_s,power_w` (or `time_s,power_v` with volts_per_watt). Lines
/// starting with '#' are comments.
Trace read_trace_csv(const std::filesystem::path& path, std::optional<double> volts_per_watt = {},
                     TraceMeta meta = {});

void write_trace_csv(const std::filesystem::path& path, const Trace& trace,
                     const std::vector<std::string>& comments = {});

std::string shot_file_name(const std::string& run_id, int shot_index);
std::string pump_file_name(const std::string& run_id);

}  // namespace mcn::traces
