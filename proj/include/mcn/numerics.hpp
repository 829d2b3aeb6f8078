#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace mcn::numerics {

using ScalarFunction = std::function<double(double)>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Accuracy contract for `integrate`.
///
/// Convergence is declared when the summed error estimate is below
/// max(abs_tol, rel_tol * |result|). For a semi-infinite upper limit the
/// integral is mapped onto [0, 1) with x = lo + c*u/(1-u), c = tail_scale,
/// so tail_scale should be of the order of the integrand's decay length.
struct QuadratureSpec {
  double rel_tol = 1e-10;
  double abs_tol = 0.0;
  std::size_t max_subdivisions = 500;
  double tail_scale = 1.0;

  void validate() const;
};

/// Thrown when adaptive subdivision runs out of budget.
class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(double estimate, double error_bound);

  double estimate() const noexcept { return estimate_; }
  double error_bound() const noexcept { return error_bound_; }

 private:
  double estimate_;
  double error_bound_;
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  std::size_t intervals = 0;
};

// Adaptive Gauss-Kronrod (7/15) quadrature. `hi` may be +infinity.
QuadratureResult integrate_detailed(const ScalarFunction& f, double lo, double hi,
                                    const QuadratureSpec& spec = {});

double integrate(const ScalarFunction& f, double lo, double hi, const QuadratureSpec& spec = {});

/// Bounded Brent minimizer (golden section with parabolic steps).
///
/// Searches [lo, hi] and never leaves it; a minimum sitting on an endpoint is
/// approached to within `tol`. Throws std::invalid_argument for an empty or
/// non-finite bracket and std::domain_error when the objective is not finite.
double minimize_scalar(const ScalarFunction& g, double lo, double hi, double tol = 1e-9);

/// Brent root finder on a sign-changing bracket.
double find_root(const ScalarFunction& h, double lo, double hi, double xtol = 1e-12,
                 std::size_t max_iter = 200);

struct LinFitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_err = 0.0;
  double intercept_err = 0.0;
  double residual_sum_sq = 0.0;
  std::size_t n = 0;
};

// Weighted least-squares line. Empty `weights` means uniform weights.
// Weights are relative: parameter errors are scaled by the reduced residual
// sum of squares (zero when n == 2).
LinFitResult linfit(std::span<const double> xs, std::span<const double> ys,
                    std::span<const double> weights = {});

struct SampleStats {
  double mean = 0.0;
  double std_dev = 0.0;  // n-1 normalization, 0 for a single sample
  double std_err = 0.0;
  std::size_t n = 0;
};

SampleStats summary_stats(std::span<const double> samples);

double median(std::span<const double> samples);

}  // namespace mcn::numerics
