#pragma once

// Quadrature oracles used by the statistical tests.  These deliberately avoid
// the library's own closed forms: densities are integrated numerically so a
// bug in a sampler or density cannot cancel against itself.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace testsupport {

namespace detail {

inline double simpson(double a, double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive(const std::function<double(double)>& f, double a,
                       double fa, double b, double fb, double m, double fm,
                       double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, fa, m, fm, flm);
  const double right = simpson(m, fm, b, fb, frm);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson integration of f over [a, b].
inline double integrate(const std::function<double(double)>& f, double a,
                        double b, double tol = 1e-10, int max_depth = 40) {
  if (!(b > a)) throw std::invalid_argument("integrate: empty interval");
  const double m = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fm = f(m);
  const double whole = detail::simpson(a, fa, b, fb, fm);
  return detail::adaptive(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

// Tabulated CDF built by integrating a density over [lo, hi] with composite
// Simpson on a fine grid of knots, normalized so the table ends at exactly
// one.  With log_spaced = true the knots are uniform in log(x), which resolves
// heavy-tailed positive densities whose mode and tail live on very different
// scales.  Evaluation interpolates linearly between knots; points outside the
// window clamp to 0 or 1.
class NumericCdf {
 public:
  NumericCdf(const std::function<double(double)>& pdf, double lo, double hi,
             int cells = 8192, bool log_spaced = false)
      : log_spaced_(log_spaced), cum_(static_cast<std::size_t>(cells) + 1, 0.0) {
    if (!(hi > lo) || cells < 8) throw std::invalid_argument("NumericCdf: bad grid");
    if (log_spaced && !(lo > 0.0))
      throw std::invalid_argument("NumericCdf: log spacing needs lo > 0");
    lo_ = log_spaced ? std::log(lo) : lo;
    hi_ = log_spaced ? std::log(hi) : hi;
    step_ = (hi_ - lo_) / cells;
    // With the substitution x = exp(t) the integrand picks up a factor x.
    const auto g = [&](double t) {
      if (!log_spaced_) return pdf(t);
      const double x = std::exp(t);
      return pdf(x) * x;
    };
    double prev_t = lo_, prev_f = g(lo_);
    for (int i = 1; i <= cells; ++i) {
      const double t = lo_ + step_ * i;
      const double fm = g(0.5 * (prev_t + t));
      const double ft = g(t);
      cum_[i] = cum_[i - 1] + (t - prev_t) / 6.0 * (prev_f + 4.0 * fm + ft);
      prev_t = t;
      prev_f = ft;
    }
    total_mass_ = cum_.back();
    if (!(total_mass_ > 0.0)) throw std::runtime_error("NumericCdf: zero total mass");
    for (auto& c : cum_) c /= total_mass_;
  }

  double operator()(double x) const {
    const double t = log_spaced_ ? std::log(x) : x;
    if (!(t > lo_)) return 0.0;
    if (t >= hi_) return 1.0;
    const double u = (t - lo_) / step_;
    const auto i = static_cast<std::size_t>(u);
    const double frac = u - static_cast<double>(i);
    return cum_[i] + frac * (cum_[i + 1] - cum_[i]);
  }

  // Mass of the un-normalized density over the window; used both to sanity
  // check window coverage and as the unit-integral oracle for densities.
  double total_mass() const { return total_mass_; }

 private:
  bool log_spaced_;
  double lo_, hi_, step_, total_mass_;
  std::vector<double> cum_;
};

}  // namespace testsupport
