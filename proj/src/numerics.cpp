#include "mcn/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <sstream>
#include <vector>

namespace mcn::numerics {

namespace {

// Kronrod nodes on [0, 1] in decreasing order; odd indices are shared with
// the embedded 7-point Gauss rule.
constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};

constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double lo;
  double hi;
  double value;
  double error;
  double abs_value;

  bool operator<(const Segment& other) const { return error < other.error; }
};

Segment gauss_kronrod(const ScalarFunction& f, double lo, double hi) {
  const double center = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);

  const double f_center = f(center);
  double kronrod = f_center * kKronrodWeights[7];
  double gauss = f_center * kGaussWeights[3];
  double abs_sum = std::abs(kronrod);

  for (std::size_t i = 0; i < 7; ++i) {
    const double dx = half * kKronrodNodes[i];
    const double f1 = f(center - dx);
    const double f2 = f(center + dx);
    kronrod += kKronrodWeights[i] * (f1 + f2);
    abs_sum += kKronrodWeights[i] * (std::abs(f1) + std::abs(f2));
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * (f1 + f2);
  }

  const double value = kronrod * half;
  const double error = std::abs((kronrod - gauss) * half);
  const double abs_value = abs_sum * std::abs(half);
  if (!std::isfinite(value) || !std::isfinite(error)) {
    throw std::domain_error("integrand is not finite on the integration interval");
  }
  return {lo, hi, value, error, abs_value};
}

}  // namespace

void QuadratureSpec::validate() const {
  if (!(rel_tol > 0.0)) throw std::invalid_argument("QuadratureSpec: rel_tol must be > 0");
  if (!(abs_tol >= 0.0)) throw std::invalid_argument("QuadratureSpec: abs_tol must be >= 0");
  if (max_subdivisions < 1) throw std::invalid_argument("QuadratureSpec: max_subdivisions must be >= 1");
  if (!(tail_scale > 0.0) || !std::isfinite(tail_scale)) {
    throw std::invalid_argument("QuadratureSpec: tail_scale must be finite and > 0");
  }
}

QuadratureError::QuadratureError(double estimate, double error_bound)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "quadrature did not converge: estimate " << estimate << ", error bound "
           << error_bound;
        return os.str();
      }()),
      estimate_(estimate),
      error_bound_(error_bound) {}

QuadratureResult integrate_detailed(const ScalarFunction& f, double lo, double hi,
                                    const QuadratureSpec& spec) {
  spec.validate();
  if (std::isnan(lo) || std::isnan(hi) || !std::isfinite(lo)) {
    throw std::invalid_argument("integrate: lower limit must be finite");
  }
  if (!(lo < hi)) throw std::invalid_argument("integrate: require lo < hi");

  ScalarFunction g = f;
  double a = lo;
  double b = hi;
  if (std::isinf(hi)) {
    // x = lo + c u / (1 - u), dx = c / (1 - u)^2 du. Gauss-Kronrod nodes never
    // touch u = 1, so the mapped integrand is only evaluated at finite x.
    const double c = spec.tail_scale;
    g = [&f, lo, c](double u) {
      const double one_minus = 1.0 - u;
      const double x = lo + c * u / one_minus;
      const double fx = f(x);
      if (fx == 0.0) return 0.0;
      return fx * c / (one_minus * one_minus);
    };
    a = 0.0;
    b = 1.0;
  }

  std::priority_queue<Segment> heap;
  Segment first = gauss_kronrod(g, a, b);
  double total = first.value;
  double total_error = first.error;
  double total_abs = first.abs_value;
  heap.push(first);

  constexpr double kRoundoff = 50.0 * std::numeric_limits<double>::epsilon();
  auto converged = [&] {
    const double target = std::max(spec.abs_tol, spec.rel_tol * std::abs(total));
    return total_error <= target || total_error <= kRoundoff * total_abs;
  };

  while (!converged()) {
    if (heap.size() >= spec.max_subdivisions) throw QuadratureError(total, total_error);
    const Segment worst = heap.top();
    const double mid = 0.5 * (worst.lo + worst.hi);
    if (!(mid > worst.lo && mid < worst.hi)) throw QuadratureError(total, total_error);
    heap.pop();
    const Segment left = gauss_kronrod(g, worst.lo, mid);
    const Segment right = gauss_kronrod(g, mid, worst.hi);
    total += left.value + right.value - worst.value;
    total_error += left.error + right.error - worst.error;
    total_abs += left.abs_value + right.abs_value - worst.abs_value;
    heap.push(left);
    heap.push(right);
  }

  // Re-sum from scratch so the returned value carries no drift from the
  // incremental updates above.
  double value = 0.0;
  double error = 0.0;
  const std::size_t intervals = heap.size();
  while (!heap.empty()) {
    value += heap.top().value;
    error += heap.top().error;
    heap.pop();
  }
  return {value, error, intervals};
}

double integrate(const ScalarFunction& f, double lo, double hi, const QuadratureSpec& spec) {
  return integrate_detailed(f, lo, hi, spec).value;
}

double minimize_scalar(const ScalarFunction& g, double lo, double hi, double tol) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw std::invalid_argument("minimize_scalar: bracket must be finite with lo < hi");
  }
  if (!(tol > 0.0)) throw std::invalid_argument("minimize_scalar: tol must be > 0");

  auto eval = [&g](double x) {
    const double v = g(x);
    if (std::isnan(v)) throw std::domain_error("minimize_scalar: objective returned NaN");
    return v;
  };

  const double golden = 0.5 * (3.0 - std::sqrt(5.0));
  const double rel_eps = 4.0 * std::numeric_limits<double>::epsilon();
  double a = lo;
  double b = hi;
  double v = a + golden * (b - a);
  double w = v;
  double x = v;
  double fx = eval(x);
  double fv = fx;
  double fw = fx;
  double d = 0.0;
  double e = 0.0;

  for (int iter = 0; iter < 1000; ++iter) {
    const double xm = 0.5 * (a + b);
    const double tol1 = rel_eps * std::abs(x) + tol / 3.0;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;

    bool golden_step = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double e_prev = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_prev) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (xm >= x) ? tol1 : -tol1;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x >= xm) ? a - x : b - x;
      d = golden * e;
    }

    const double step = std::abs(d) >= tol1 ? d : (d >= 0.0 ? tol1 : -tol1);
    const double u = std::clamp(x + step, lo, hi);
    const double fu = eval(u);

    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return std::clamp(x, lo, hi);
}

double find_root(const ScalarFunction& h, double lo, double hi, double xtol, std::size_t max_iter) {
  double a = lo;
  double b = hi;
  double fa = h(a);
  double fb = h(b);
  if (std::isnan(fa) || std::isnan(fb)) throw std::domain_error("find_root: function is NaN at bracket");
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if ((fa > 0.0) == (fb > 0.0)) throw std::invalid_argument("find_root: bracket does not change sign");

  double c = a;
  double fc = fa;
  double d = b - a;
  double e = d;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a; fc = fa;
      d = b - a; e = d;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol1 = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b) + 0.5 * xtol;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || fb == 0.0) return b;

    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      double p;
      double q;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qa = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
        q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q; else p = -p;
      if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q), std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol1 ? d : (xm > 0.0 ? tol1 : -tol1);
    fb = h(b);
    if (std::isnan(fb)) throw std::domain_error("find_root: function returned NaN");
  }
  throw std::runtime_error("find_root: no convergence");
}

LinFitResult linfit(std::span<const double> xs, std::span<const double> ys,
                    std::span<const double> weights) {
  const std::size_t n = xs.size();
  if (ys.size() != n) throw std::invalid_argument("linfit: xs and ys differ in length");
  if (n < 2) throw std::invalid_argument("linfit: need at least two points");
  if (!weights.empty() && weights.size() != n) {
    throw std::invalid_argument("linfit: weights differ in length");
  }
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double sw = 0.0;
  double swx = 0.0;
  double swy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weight(i);
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("linfit: weights must be finite and >= 0");
    sw += w;
    swx += w * xs[i];
    swy += w * ys[i];
  }
  if (!(sw > 0.0)) throw std::invalid_argument("linfit: all weights are zero");

  const double x_mean = swx / sw;
  const double y_mean = swy / sw;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - x_mean;
    sxx += weight(i) * dx * dx;
    sxy += weight(i) * dx * ys[i];
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("linfit: degenerate design, all x equal");

  LinFitResult fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = y_mean - fit.slope * x_mean;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ys[i] - fit.intercept - fit.slope * xs[i];
    fit.residual_sum_sq += weight(i) * r * r;
  }
  if (n > 2) {
    const double s2 = fit.residual_sum_sq / static_cast<double>(n - 2);
    fit.slope_err = std::sqrt(s2 / sxx);
    fit.intercept_err = std::sqrt(s2 * (1.0 / sw + x_mean * x_mean / sxx));
  }
  return fit;
}

SampleStats summary_stats(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("summary_stats: empty sample");
  const std::size_t n = samples.size();
  double sum = 0.0;
  for (double s : samples) sum += s;
  SampleStats st;
  st.n = n;
  st.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - st.mean) * (s - st.mean);
    st.std_dev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  st.std_err = st.std_dev / std::sqrt(static_cast<double>(n));
  return st;
}

double median(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("median: empty sample");
  std::vector<double> v(samples.begin(), samples.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double upper = v[mid];
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace mcn::numerics
