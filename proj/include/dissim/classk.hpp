#ifndef DISSIM_CLASSK_HPP_
#define DISSIM_CLASSK_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "dissim/errors.hpp"
#include "dissim/util.hpp"

namespace dissim {

/**
 * A represented class-K comparison function on [0,inf).
 *
 * Four representations are supported:
 *   Zero                      the constant 0 (allowed where K-inf or {0} is)
 *   Linear(a)                 s -> a*s,        a > 0
 *   Power(a,p)                s -> a*s^p,      a > 0, p > 0 (p=1 normalizes
 *                             to Linear)
 *   Pwl(points, tail_slope)   piecewise linear through (0,0) and strictly
 *                             increasing breakpoints, extrapolated past the
 *                             last breakpoint with tail_slope
 *
 * Values are immutable after construction and safe to share across threads.
 * Strict monotonicity is structural (positive segment slopes), so it holds
 * at every point, not just on a verification grid.
 */
class ClassKFn {
 public:
  enum class Kind { kZero, kLinear, kPower, kPwl };

  ClassKFn() : kind_(Kind::kZero) {}

  static ClassKFn zero() { return ClassKFn(); }

  static ClassKFn linear(double slope) {
    if (!(slope > 0.0)) throw InvalidCertificate("Linear slope must be > 0, got " + fmt_double(slope));
    ClassKFn f;
    f.kind_ = Kind::kLinear;
    f.a_ = slope;
    return f;
  }

  static ClassKFn identity() { return linear(1.0); }

  static ClassKFn power(double coeff, double exponent) {
    if (!(coeff > 0.0) || !(exponent > 0.0))
      throw InvalidCertificate("Power needs coeff > 0 and exponent > 0");
    if (exponent == 1.0) return linear(coeff);
    ClassKFn f;
    f.kind_ = Kind::kPower;
    f.a_ = coeff;
    f.p_ = exponent;
    return f;
  }

  /* points must start at (0,0) with strictly increasing s and f(s);
   * tail_slope >= 0 extrapolates past the last breakpoint (K-inf iff > 0) */
  static ClassKFn pwl(std::vector<std::pair<double, double>> points, double tail_slope) {
    if (points.empty() || points.front().first != 0.0 || points.front().second != 0.0)
      throw InvalidCertificate("Pwl breakpoints must be anchored at (0,0)");
    if (tail_slope < 0.0) throw InvalidCertificate("Pwl tail slope must be >= 0");
    ClassKFn f;
    f.kind_ = Kind::kPwl;
    f.tail_ = tail_slope;
    f.xs_.reserve(points.size());
    f.ys_.reserve(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
      if (i > 0 && !(points[i].first > points[i - 1].first && points[i].second > points[i - 1].second))
        throw InvalidCertificate("Pwl breakpoints must be strictly increasing in s and f(s)");
      f.xs_.push_back(points[i].first);
      f.ys_.push_back(points[i].second);
    }
    return f;
  }

  Kind kind() const { return kind_; }
  bool is_zero() const { return kind_ == Kind::kZero; }

  /* unbounded range: Linear/Power always, Pwl needs a positive tail */
  bool is_kinf() const {
    switch (kind_) {
      case Kind::kZero: return false;
      case Kind::kLinear:
      case Kind::kPower: return true;
      case Kind::kPwl: return tail_ > 0.0;
    }
    return false;
  }

  double linear_slope() const {
    if (kind_ != Kind::kLinear) throw InvalidCertificate("not a Linear function");
    return a_;
  }
  double power_coeff() const { return a_; }
  double power_exponent() const { return p_; }
  const std::vector<double>& pwl_xs() const { return xs_; }
  const std::vector<double>& pwl_ys() const { return ys_; }
  double pwl_tail() const { return tail_; }
  double pwl_hull_max() const { return xs_.empty() ? 0.0 : xs_.back(); }

  /* interpolation error bound recorded when a composition had to resample */
  double interp_error() const { return interp_err_; }

  double operator()(double s) const { return evaluate(s); }

  double evaluate(double s) const {
    if (s < 0.0) throw DomainError("comparison functions are defined on s >= 0, got " + fmt_double(s));
    switch (kind_) {
      case Kind::kZero: return 0.0;
      case Kind::kLinear: return a_ * s;
      case Kind::kPower: return a_ * std::pow(s, p_);
      case Kind::kPwl: {
        if (s >= xs_.back()) return ys_.back() + tail_ * (s - xs_.back());
        auto it = std::upper_bound(xs_.begin(), xs_.end(), s);
        size_t k = static_cast<size_t>(it - xs_.begin());  // xs_[k-1] <= s < xs_[k]
        double t = (s - xs_[k - 1]) / (xs_[k] - xs_[k - 1]);
        return ys_[k - 1] + t * (ys_[k] - ys_[k - 1]);
      }
    }
    return 0.0;
  }

  /* exact inverse; requires K-inf (Zero and bounded Pwl are rejected) */
  ClassKFn inverse() const {
    switch (kind_) {
      case Kind::kZero: throw InvalidCertificate("the zero function has no inverse");
      case Kind::kLinear: return linear(1.0 / a_);
      case Kind::kPower: return power(std::pow(a_, -1.0 / p_), 1.0 / p_);
      case Kind::kPwl: {
        if (!(tail_ > 0.0))
          throw InvalidCertificate("Pwl with zero tail slope is not K-inf; no inverse");
        std::vector<std::pair<double, double>> swapped(xs_.size());
        for (size_t i = 0; i < xs_.size(); ++i) swapped[i] = {ys_[i], xs_[i]};
        return pwl(std::move(swapped), 1.0 / tail_);
      }
    }
    throw InvalidCertificate("unreachable");
  }

  /* s -> c*f(s), c > 0 */
  ClassKFn scale_output(double c) const {
    if (!(c > 0.0)) throw InvalidCertificate("scale factor must be > 0");
    switch (kind_) {
      case Kind::kZero: return zero();
      case Kind::kLinear: return linear(c * a_);
      case Kind::kPower: return power(c * a_, p_);
      case Kind::kPwl: {
        ClassKFn f = *this;
        for (double& y : f.ys_) y *= c;
        f.tail_ *= c;
        return f;
      }
    }
    return zero();
  }

  /* largest segment slope (supremum of difference quotients for Pwl/Linear;
   * infinity for Power away from p=1) */
  double max_slope() const {
    switch (kind_) {
      case Kind::kZero: return 0.0;
      case Kind::kLinear: return a_;
      case Kind::kPower: return std::numeric_limits<double>::infinity();
      case Kind::kPwl: {
        double m = tail_;
        for (size_t k = 1; k < xs_.size(); ++k)
          m = std::max(m, (ys_[k] - ys_[k - 1]) / (xs_[k] - xs_[k - 1]));
        return m;
      }
    }
    return 0.0;
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::kZero: return "Zero";
      case Kind::kLinear: return "Linear(" + fmt_double(a_) + ")";
      case Kind::kPower: return "Power(" + fmt_double(a_) + "," + fmt_double(p_) + ")";
      case Kind::kPwl:
        return "Pwl(n=" + std::to_string(xs_.size()) + ",hull=" + fmt_double(xs_.back()) +
               ",tail=" + fmt_double(tail_) + ")";
    }
    return "?";
  }

  void set_interp_error(double e) { interp_err_ = e; }

 private:
  Kind kind_;
  double a_ = 0.0;  // Linear slope / Power coefficient
  double p_ = 1.0;  // Power exponent
  std::vector<double> xs_, ys_;
  double tail_ = 0.0;
  double interp_err_ = 0.0;
};

namespace detail {

/* solve g(s) = y for Pwl g (y within range; uses the tail past the hull) */
inline double pwl_preimage(const ClassKFn& g, double y) {
  const auto& xs = g.pwl_xs();
  const auto& ys = g.pwl_ys();
  if (y <= 0.0) return 0.0;
  if (y >= ys.back()) {
    if (g.pwl_tail() <= 0.0) return xs.back();
    return xs.back() + (y - ys.back()) / g.pwl_tail();
  }
  auto it = std::upper_bound(ys.begin(), ys.end(), y);
  size_t k = static_cast<size_t>(it - ys.begin());
  double t = (y - ys[k - 1]) / (ys[k] - ys[k - 1]);
  return xs[k - 1] + t * (xs[k] - xs[k - 1]);
}

}  // namespace detail

struct ComposeOptions {
  /* resampling range for compositions that leave the closed-form families;
   * <= 0 picks a range from the operands' breakpoint hulls */
  double range = 0.0;
  int grid_points = 256;
};

/* f(g(s)). Closed form inside the Linear/Power families and for Pwl paired
 * with Linear; Pwl-Pwl composes exactly on merged breakpoints; remaining
 * mixes resample to Pwl and record the measured interpolation error bound. */
inline ClassKFn compose(const ClassKFn& f, const ClassKFn& g, ComposeOptions opt = {}) {
  using K = ClassKFn::Kind;
  if (f.is_zero() || g.is_zero()) return ClassKFn::zero();
  if (f.kind() == K::kLinear && g.kind() == K::kLinear)
    return ClassKFn::linear(f.linear_slope() * g.linear_slope());
  if (f.kind() == K::kLinear && g.kind() == K::kPower)
    return g.scale_output(f.linear_slope());
  if (f.kind() == K::kPower && g.kind() == K::kLinear)
    return ClassKFn::power(f.power_coeff() * std::pow(g.linear_slope(), f.power_exponent()),
                           f.power_exponent());
  if (f.kind() == K::kPower && g.kind() == K::kPower)
    return ClassKFn::power(f.power_coeff() * std::pow(g.power_coeff(), f.power_exponent()),
                           f.power_exponent() * g.power_exponent());
  if (f.kind() == K::kPwl && g.kind() == K::kLinear) {
    double b = g.linear_slope();
    std::vector<std::pair<double, double>> pts(f.pwl_xs().size());
    for (size_t i = 0; i < pts.size(); ++i) pts[i] = {f.pwl_xs()[i] / b, f.pwl_ys()[i]};
    return ClassKFn::pwl(std::move(pts), f.pwl_tail() * b);
  }
  if (f.kind() == K::kLinear && g.kind() == K::kPwl) return g.scale_output(f.linear_slope());
  if (f.kind() == K::kPwl && g.kind() == K::kPwl) {
    /* exact: kinks occur at g's breakpoints and at preimages of f's */
    std::vector<double> ss(g.pwl_xs().begin(), g.pwl_xs().end());
    for (double fx : f.pwl_xs()) ss.push_back(detail::pwl_preimage(g, fx));
    std::sort(ss.begin(), ss.end());
    ss.erase(std::unique(ss.begin(), ss.end(),
                         [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(a)); }),
             ss.end());
    std::vector<std::pair<double, double>> pts;
    pts.reserve(ss.size());
    double prev_y = -1.0;
    for (double s : ss) {
      double y = f.evaluate(g.evaluate(s));
      if (!pts.empty() && !(s > pts.back().first && y > prev_y)) continue;  // drop stalls from dedup
      pts.push_back({s, y});
      prev_y = y;
    }
    double tail = f.pwl_tail() * g.pwl_tail();
    return ClassKFn::pwl(std::move(pts), tail);
  }

  /* Power paired with Pwl: resample */
  double range = opt.range;
  if (range <= 0.0) {
    range = 1.0;
    if (g.kind() == K::kPwl) range = std::max(range, g.pwl_hull_max());
    if (f.kind() == K::kPwl && g.is_kinf()) {
      /* cover enough of g's domain that f's hull is exercised */
      if (g.kind() == K::kPwl) range = std::max(range, detail::pwl_preimage(g, f.pwl_hull_max()));
      else range = std::max(range, g.inverse().evaluate(f.pwl_hull_max()));
    }
  }
  int n = std::max(8, opt.grid_points);
  std::vector<std::pair<double, double>> pts;
  pts.reserve(static_cast<size_t>(n) + 1);
  pts.push_back({0.0, 0.0});
  for (int i = 1; i <= n; ++i) {
    double s = range * static_cast<double>(i) / n;
    double y = f.evaluate(g.evaluate(s));
    if (y <= pts.back().second) continue;
    pts.push_back({s, y});
  }
  if (pts.size() < 2) throw InvalidCertificate("composition degenerated to a point on the working range");
  double tail = (pts.back().second - pts[pts.size() - 2].second) /
                (pts.back().first - pts[pts.size() - 2].first);
  ClassKFn out = ClassKFn::pwl(std::move(pts), tail);
  /* measured deviation at segment midpoints */
  double err = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = range * (static_cast<double>(i) + 0.5) / n;
    err = std::max(err, std::abs(out.evaluate(s) - f.evaluate(g.evaluate(s))));
  }
  out.set_interp_error(err);
  return out;
}

namespace detail {

/* Power -> Pwl on (0, range] with geometric breakpoints starting far below
 * any verification grid. Chord values are downscaled by the measured chord
 * overshoot so the result never exceeds the source at sampled points in
 * [first breakpoint, range]. */
inline ClassKFn power_to_pwl(const ClassKFn& f, double range, int n = 256) {
  if (!(range > 0.0)) throw ConfigError("conversion range must be positive");
  std::vector<double> xs;
  xs.reserve(static_cast<size_t>(n) + 1);
  xs.push_back(0.0);
  double lo = range * 1e-8;
  double ratio = std::pow(range / lo, 1.0 / (n - 1));
  double x = lo;
  for (int i = 0; i < n; ++i) {
    xs.push_back(x);
    x *= ratio;
  }
  xs.back() = range;
  /* chord overshoot relative to f (positive only where f is convex) */
  double overshoot = 0.0;
  for (size_t k = 1; k < xs.size(); ++k) {
    double x0 = xs[k - 1], x1 = xs[k];
    double y0 = f.evaluate(x0), y1 = f.evaluate(x1);
    for (int j = 1; j < 4; ++j) {
      double s = x0 + (x1 - x0) * j / 4.0;
      double chord = y0 + (y1 - y0) * (s - x0) / (x1 - x0);
      double fs = f.evaluate(s);
      if (fs > 0.0) overshoot = std::max(overshoot, (chord - fs) / fs);
    }
  }
  double scale = 1.0 / (1.0 + overshoot);
  std::vector<std::pair<double, double>> pts;
  pts.reserve(xs.size());
  for (double xv : xs) pts.push_back({xv, f.evaluate(xv) * scale});
  double tail = (pts.back().second - pts[pts.size() - 2].second) /
                (pts.back().first - pts[pts.size() - 2].first);
  return ClassKFn::pwl(std::move(pts), tail);
}

}  // namespace detail

struct MinorantOptions {
  double delta = 0.05;   // contraction margin: all output slopes <= 1 - delta
  double range = 1e3;    // Pwl conversion range for Power inputs
};

/* A K-inf minorant sigma_hat of sigma with Id - sigma_hat strictly
 * increasing, built by cumulative slope clamping at 1 - delta. Linear stays
 * closed form; Power converts to Pwl on the working range first. */
inline ClassKFn contractive_minorant(const ClassKFn& sigma, MinorantOptions opt = {}) {
  if (sigma.is_zero()) throw InvalidCertificate("cannot build a contractive minorant of Zero");
  if (!(opt.delta > 0.0 && opt.delta < 1.0)) throw ConfigError("delta must lie in (0,1)");
  const double cap = 1.0 - opt.delta;
  switch (sigma.kind()) {
    case ClassKFn::Kind::kLinear:
      return ClassKFn::linear(std::min(sigma.linear_slope(), cap));
    case ClassKFn::Kind::kPower:
      return contractive_minorant(detail::power_to_pwl(sigma, opt.range), opt);
    case ClassKFn::Kind::kPwl: {
      const auto& xs = sigma.pwl_xs();
      const auto& ys = sigma.pwl_ys();
      std::vector<std::pair<double, double>> pts;
      pts.reserve(xs.size());
      pts.push_back({0.0, 0.0});
      for (size_t k = 1; k < xs.size(); ++k) {
        double m = (ys[k] - ys[k - 1]) / (xs[k] - xs[k - 1]);
        double y = pts.back().second + std::min(m, cap) * (xs[k] - xs[k - 1]);
        pts.push_back({xs[k], y});
      }
      double tail = std::min(sigma.pwl_tail(), cap);
      return ClassKFn::pwl(std::move(pts), tail);
    }
    default:
      throw InvalidCertificate("unsupported representation");
  }
}

/* Id - f, defined when every slope of f is < 1 (else the result is not
 * increasing and a configuration error is raised). */
inline ClassKFn identity_minus(const ClassKFn& f) {
  switch (f.kind()) {
    case ClassKFn::Kind::kZero: return ClassKFn::identity();
    case ClassKFn::Kind::kLinear: {
      double a = f.linear_slope();
      if (a >= 1.0) throw ConfigError("Id - f is not increasing: slope " + fmt_double(a));
      return ClassKFn::linear(1.0 - a);
    }
    case ClassKFn::Kind::kPwl: {
      if (f.max_slope() >= 1.0)
        throw ConfigError("Id - f is not increasing: max slope " + fmt_double(f.max_slope()));
      const auto& xs = f.pwl_xs();
      const auto& ys = f.pwl_ys();
      std::vector<std::pair<double, double>> pts(xs.size());
      for (size_t i = 0; i < xs.size(); ++i) pts[i] = {xs[i], xs[i] - ys[i]};
      return ClassKFn::pwl(std::move(pts), 1.0 - f.pwl_tail());
    }
    case ClassKFn::Kind::kPower:
      throw ConfigError("Id - Power is not increasing on all of [0,inf)");
  }
  throw ConfigError("unreachable");
}

/* Output of the error-bound synthesis: a one-step contraction lambda with
 * lambda(s) < s, an external-input gain, and a constant offset. */
struct BoundSynthesis {
  ClassKFn lambda;
  ClassKFn gamma_ext;  // Zero when rho_ext is Zero
  double phi = 0.0;
  ClassKFn sigma_hat;  // the minorant actually used
};

struct SynthesisOptions {
  ClassKFn psi = ClassKFn::linear(0.5);  // split function; Id - psi must be K-inf
  double delta = 0.05;                   // minorant margin
  double range = 1e3;                    // working range for Pwl conversions
};

/*
 * From a certified decrease  V+ - V <= -sigma(V) + rho_ext(|u|) + eps
 * derive the one-step envelope
 *   V+ <= max{ lambda(V), gamma_ext(|u|) + phi }
 * with
 *   sigma_hat = contractive minorant of sigma
 *   gamma_ext = sigma_hat^-1 o psi^-1 o (2 rho_ext)
 *   phi       = sigma_hat^-1( psi^-1( 2 eps ) )
 *   lambda    = Id - (Id - psi) o sigma_hat.
 */
inline BoundSynthesis synthesize_bound(const ClassKFn& sigma, const ClassKFn& rho_ext, double eps,
                                       SynthesisOptions opt = {}) {
  if (!sigma.is_kinf()) throw InvalidCertificate("sigma must be K-inf");
  if (eps < 0.0) throw DomainError("eps must be >= 0");
  if (!rho_ext.is_zero() && !rho_ext.is_kinf())
    throw InvalidCertificate("rho_ext must be K-inf or Zero");
  ClassKFn id_minus_psi = identity_minus(opt.psi);  // throws ConfigError if psi unusable
  if (!id_minus_psi.is_kinf()) throw ConfigError("Id - psi must be K-inf");

  BoundSynthesis out;
  out.sigma_hat = contractive_minorant(sigma, {opt.delta, opt.range});
  ClassKFn sigma_hat_inv = out.sigma_hat.inverse();
  ClassKFn psi_inv = opt.psi.inverse();

  if (rho_ext.is_zero()) {
    out.gamma_ext = ClassKFn::zero();
  } else {
    ComposeOptions copt;
    copt.range = opt.range;
    out.gamma_ext = compose(sigma_hat_inv, compose(psi_inv, rho_ext.scale_output(2.0), copt), copt);
  }
  out.phi = (eps == 0.0) ? 0.0 : sigma_hat_inv.evaluate(psi_inv.evaluate(2.0 * eps));

  ComposeOptions copt;
  copt.range = opt.range;
  ClassKFn psi_tilde = compose(id_minus_psi, out.sigma_hat, copt);
  out.lambda = identity_minus(psi_tilde);
  return out;
}

}  // namespace dissim

#endif  // DISSIM_CLASSK_HPP_
