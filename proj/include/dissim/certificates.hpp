#ifndef DISSIM_CERTIFICATES_HPP_
#define DISSIM_CERTIFICATES_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <string>
#include <vector>

#include "dissim/classk.hpp"
#include "dissim/parallel.hpp"
#include "dissim/system.hpp"

namespace dissim {

inline void require_symmetric(const Eigen::MatrixXd& X, const char* what) {
  if (X.rows() != X.cols()) throw InvalidCertificate(std::string(what) + " must be square");
  double scale = std::max(1.0, X.cwiseAbs().maxCoeff());
  if ((X - X.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidCertificate(std::string(what) + " must be symmetric");
}

/* v^T X v for the stacked mismatch vector [dw; dy] */
inline double supply_rate(const Eigen::MatrixXd& X, const Eigen::VectorXd& dw,
                          const Eigen::VectorXd& dy) {
  Eigen::VectorXd v(dw.size() + dy.size());
  v << dw, dy;
  return v.dot(X * v);
}

/**
 * Incremental-passivity certificate for one subsystem: a quadratic value
 * G(x,x') = (x-x')^T Q (x-x'), a state feedback H(x) = K x + k0, a decrease
 * rate kappa_hat, an output-error lower bound underline_alpha, a quadratic
 * supply rate X over (internal-input mismatch, internal-output mismatch),
 * and the slope function gamma bounding G(x,x') - G(x,x'') by gamma(|x'-x''|).
 */
struct PassivityCertificate {
  Eigen::MatrixXd Q;
  Eigen::MatrixXd K;
  Eigen::VectorXd k0;
  ClassKFn kappa_hat;
  ClassKFn underline_alpha;
  Eigen::MatrixXd X;
  int x11_dim = 0;  // leading block size of X (internal-input mismatch)
  ClassKFn gamma;

  void validate() const {
    require_symmetric(Q, "Q");
    Eigen::LLT<Eigen::MatrixXd> llt(Q);
    if (llt.info() != Eigen::Success)
      throw InvalidCertificate("Q must be positive definite (Cholesky failed)");
    require_symmetric(X, "supply rate X");
    if (x11_dim <= 0 || x11_dim >= X.rows())
      throw InvalidCertificate("supply rate partition is degenerate");
    if (!kappa_hat.is_kinf() || !underline_alpha.is_kinf())
      throw InvalidCertificate("kappa_hat and underline_alpha must be K-inf");
  }

  double value(const Eigen::VectorXd& x, const Eigen::VectorXd& xp) const {
    Eigen::VectorXd d = x - xp;
    return d.dot(Q * d);
  }

  Eigen::VectorXd feedback(const Eigen::VectorXd& x) const { return K * x + k0; }
};

struct GammaOptions {
  int samples = 10000;
  uint64_t seed = 0x5eedau;
  double floor_slope = 1e-12;  // keeps gamma K-inf on degenerate boxes
};

/*
 * Linear gamma(r) = c r with  G(x,x') - G(x,x'') <= c |x'-x''|_inf  on the
 * box. Start from the conservative bound c0 = 2 * rowsum(|Q|) * n * D, then
 * tighten by bisection against a sampling oracle; the oracle includes the
 * exact r->0 directional ratios at box-corner pairs, which attain the true
 * supremum for quadratic forms, so the tightened slope never dips below a
 * ratio the certificate actually has to dominate.
 */
inline ClassKFn derive_gamma(const Eigen::MatrixXd& Q, const Box& box, GammaOptions opt = {}) {
  require_symmetric(Q, "Q");
  const int n = box.dim();
  if (n != Q.rows()) throw DomainError("gamma derivation: box and Q dimensions differ");
  for (const auto& ax : box.axes)
    if (!std::isfinite(ax.lo) || !std::isfinite(ax.hi))
      throw DomainError("gamma requires a bounded box");

  double max_width = box.diameter_inf();
  if (max_width <= 0.0) return ClassKFn::linear(opt.floor_slope);

  double rowsum = 0.0;
  for (int r = 0; r < n; ++r) rowsum = std::max(rowsum, Q.row(r).cwiseAbs().sum());
  const double c0 = 2.0 * rowsum * n * max_width;

  double worst = 0.0;
  auto g = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    Eigen::VectorXd d = a - b;
    return d.dot(Q * d);
  };

  if (n <= 5) {
    /* directional limit ratios 2 u^T Q (x - x'') over corner pairs and sign
     * patterns; exact suprema live here */
    unsigned corners = 1u << n;
    for (unsigned cx = 0; cx < corners; ++cx) {
      Eigen::VectorXd x = box.corner(cx);
      for (unsigned cz = 0; cz < corners; ++cz) {
        Eigen::VectorXd z = box.corner(cz);
        Eigen::VectorXd qxz = Q * (x - z);
        for (unsigned su = 0; su < corners; ++su) {
          double dot = 0.0;
          for (int i = 0; i < n; ++i) dot += ((su >> i) & 1u ? 1.0 : -1.0) * qxz[i];
          worst = std::max(worst, 2.0 * std::abs(dot));
        }
      }
    }
  }

  for (int it = 0; it < opt.samples; ++it) {
    auto rng = rng_for(opt.seed, static_cast<uint64_t>(it));
    Eigen::VectorXd x(n), xp(n), xpp(n);
    for (int i = 0; i < n; ++i) {
      x[i] = uniform_in(rng, box.axes[static_cast<size_t>(i)].lo, box.axes[static_cast<size_t>(i)].hi);
      xp[i] = uniform_in(rng, box.axes[static_cast<size_t>(i)].lo, box.axes[static_cast<size_t>(i)].hi);
      xpp[i] = uniform_in(rng, box.axes[static_cast<size_t>(i)].lo, box.axes[static_cast<size_t>(i)].hi);
    }
    double r = (xp - xpp).cwiseAbs().maxCoeff();
    if (r <= 1e-15) continue;
    worst = std::max(worst, (g(x, xp) - g(x, xpp)) / r);
  }

  double lo = worst, hi = std::max(c0, worst);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    double mid = 0.5 * (lo + hi);
    if (mid >= worst) hi = mid;  // mid still dominates every sampled ratio
    else lo = mid;
  }
  return ClassKFn::linear(std::max(hi, opt.floor_slope));
}

/* Closed-form certificate for the consensus-benchmark class
 *   x+ = x + w + u (identity A, B, D), identity internal output map:
 * Q = I, H(x) = -lambda x, kappa_hat = lambda r, underline_alpha = r^2,
 * X = [[I, (1-lambda) I], [(1-lambda) I, 0]]. */
inline PassivityCertificate passivity_for_linear(const SubsystemModel& sub, double lambda_fb,
                                                 GammaOptions gopt = {}) {
  if (!(lambda_fb > 0.0 && lambda_fb <= 0.5))
    throw DomainError("feedback gain must lie in (0, 0.5], got " + fmt_double(lambda_fb));
  if (!sub.is_linear()) throw UnsupportedDynamics("closed-form certificate needs linear dynamics");
  const auto& lin = *sub.linear();
  const int n = sub.state_dim();
  auto is_identity = [&](const Eigen::MatrixXd& M) {
    return M.rows() == n && M.cols() == n &&
           (M - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-12;
  };
  if (!is_identity(lin.A) || !is_identity(lin.B) || !is_identity(lin.D) || !is_identity(sub.h2()))
    throw UnsupportedDynamics(
        "closed-form certificate covers x+ = x + w + u with identity internal output only");

  PassivityCertificate cert;
  cert.Q = Eigen::MatrixXd::Identity(n, n);
  cert.K = -lambda_fb * Eigen::MatrixXd::Identity(n, n);
  cert.k0 = Eigen::VectorXd::Zero(n);
  cert.kappa_hat = ClassKFn::linear(lambda_fb);
  cert.underline_alpha = ClassKFn::power(1.0, 2.0);
  cert.X = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  cert.X.topLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  cert.X.topRightCorner(n, n) = (1.0 - lambda_fb) * Eigen::MatrixXd::Identity(n, n);
  cert.X.bottomLeftCorner(n, n) = (1.0 - lambda_fb) * Eigen::MatrixXd::Identity(n, n);
  cert.x11_dim = n;
  cert.gamma = derive_gamma(cert.Q, sub.state_set().hull(), gopt);
  cert.validate();
  return cert;
}

struct ViolationRecord {
  double margin = 0.0;  // negative: by how much the inequality failed
  std::string what;
};

struct SampledReport {
  long samples = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::vector<ViolationRecord> violations;  // sorted by margin, worst first

  bool clean() const { return violations.empty(); }
};

namespace detail {

inline void finalize_report(SampledReport& rep, size_t cap = 32) {
  std::sort(rep.violations.begin(), rep.violations.end(),
            [](const ViolationRecord& a, const ViolationRecord& b) { return a.margin < b.margin; });
  if (rep.violations.size() > cap) rep.violations.resize(cap);
}

}  // namespace detail

struct VerifyOptions {
  long sample_budget = 10000;
  uint64_t seed = 1;
  double slack = 1e-9;  // relative
  unsigned threads = 1;
};

/* Samples (x, x', u, w, w') tuples and checks both defining inequalities of
 * the passivity certificate against the subsystem. Violations are report
 * content, never exceptions. */
inline SampledReport verify_passivity(const SubsystemModel& sub, const PassivityCertificate& cert,
                                      VerifyOptions opt = {}) {
  const Box sbox = sub.state_set().hull();
  const Box& ubox = sub.input_box();
  const Box& wbox = sub.internal_box();
  const size_t budget = static_cast<size_t>(opt.sample_budget);

  std::vector<double> margins(budget);
  std::vector<ViolationRecord> records(budget);
  auto draw = [](std::mt19937_64& rng, const Box& b) {
    Eigen::VectorXd v(b.dim());
    for (int i = 0; i < b.dim(); ++i)
      v[i] = uniform_in(rng, b.axes[static_cast<size_t>(i)].lo, b.axes[static_cast<size_t>(i)].hi);
    return v;
  };

  parallel_for(budget, opt.threads, [&](size_t idx) {
    auto rng = rng_for(opt.seed, idx);
    Eigen::VectorXd x = draw(rng, sbox), xp = draw(rng, sbox);
    Eigen::VectorXd u = draw(rng, ubox);
    Eigen::VectorXd w = draw(rng, wbox), wp = draw(rng, wbox);

    double gval = cert.value(x, xp);
    double m1 = gval - cert.underline_alpha.evaluate((x - xp).cwiseAbs().maxCoeff());

    Eigen::VectorXd xd = sub.eval(x, cert.feedback(x) + u, w);
    Eigen::VectorXd xpd = sub.eval(xp, cert.feedback(xp) + u, wp);
    double lhs = cert.value(xd, xpd) - gval;
    double sup = supply_rate(cert.X, w - wp, sub.h2_of(x) - sub.h2_of(xp));
    double rhs = -cert.kappa_hat.evaluate(gval) + sup;
    double m2 = rhs - lhs;

    double scale = std::max({1.0, std::abs(gval), std::abs(rhs), std::abs(lhs)});
    margins[idx] = std::min(m1, m2);
    if (m1 < -opt.slack * std::max(1.0, std::abs(gval)))
      records[idx] = {m1, "lower-bound inequality at sample " + std::to_string(idx)};
    else if (m2 < -opt.slack * scale)
      records[idx] = {m2, "decrease inequality at sample " + std::to_string(idx)};
    else
      records[idx] = {0.0, ""};
  });

  SampledReport rep;
  rep.samples = opt.sample_budget;
  for (size_t i = 0; i < budget; ++i) {
    rep.worst_margin = std::min(rep.worst_margin, margins[i]);
    if (!records[i].what.empty()) rep.violations.push_back(records[i]);
  }
  detail::finalize_report(rep);
  return rep;
}

/**
 * Storage certificate relating one finite abstraction to its concrete
 * subsystem: comparison functions (alpha, sigma, rho_ext), the quadratic
 * supply rate X with its block partition, the channel matrices W, What, H,
 * the offset epsilon, and the quadratic value S(x,xhat) = (x-xhat)^T Q (x-xhat).
 */
struct StorageCertificate {
  ClassKFn alpha;
  ClassKFn sigma;
  ClassKFn rho_ext;  // K-inf or Zero
  Eigen::MatrixXd X;
  int x11_dim = 0;
  Eigen::MatrixXd W, What, H;
  double epsilon = 0.0;
  Eigen::MatrixXd Q;

  void validate() const {
    require_symmetric(X, "supply rate X");
    require_symmetric(Q, "Q");
    if (epsilon < 0.0) throw InvalidCertificate("epsilon must be >= 0");
    if (!alpha.is_kinf() || !sigma.is_kinf())
      throw InvalidCertificate("alpha and sigma must be K-inf");
    if (!rho_ext.is_zero() && !rho_ext.is_kinf())
      throw InvalidCertificate("rho_ext must be K-inf or Zero");
  }

  double value(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat) const {
    Eigen::VectorXd d = x - xhat;
    return d.dot(Q * d);
  }
};

/* quantization-error construction: sigma = kappa_hat, rho_ext = 0,
 * W = What = H = I, with the caller supplying epsilon (gamma(eta/2)) */
inline StorageCertificate storage_from_passivity(const PassivityCertificate& p, int internal_dim,
                                                 int y2_dim, double epsilon) {
  StorageCertificate s;
  s.alpha = p.underline_alpha;
  s.sigma = p.kappa_hat;
  s.rho_ext = ClassKFn::zero();
  s.X = p.X;
  s.x11_dim = p.x11_dim;
  s.W = Eigen::MatrixXd::Identity(internal_dim, internal_dim);
  s.What = Eigen::MatrixXd::Identity(internal_dim, internal_dim);
  s.H = Eigen::MatrixXd::Identity(y2_dim, y2_dim);
  s.epsilon = epsilon;
  s.Q = p.Q;
  s.validate();
  return s;
}

/**
 * Network-level simulation certificate: V(x,xhat) = sum_i mu_i S_i, with the
 * composed comparison functions and offset. sigma_closed_form records
 * whether sigma came out of the exact family algebra or the grid fallback.
 */
struct SimulationCertificate {
  ClassKFn alpha;
  ClassKFn sigma;
  ClassKFn rho_ext;
  double epsilon = 0.0;
  std::vector<Eigen::MatrixXd> Q;  // per-subsystem value matrices
  Eigen::VectorXd mu;
  std::vector<int> dims;
  bool sigma_closed_form = true;

  double value(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat) const {
    double v = 0.0;
    int off = 0;
    for (size_t i = 0; i < Q.size(); ++i) {
      int n = dims[i];
      Eigen::VectorXd d = x.segment(off, n) - xhat.segment(off, n);
      v += mu[static_cast<int>(i)] * d.dot(Q[i] * d);
      off += n;
    }
    return v;
  }
};

}  // namespace dissim

#endif  // DISSIM_CERTIFICATES_HPP_
