#ifndef DISSIM_COMPOSITION_HPP_
#define DISSIM_COMPOSITION_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "dissim/abstraction.hpp"
#include "dissim/certificates.hpp"

namespace dissim {

/**
 * Input to the network-level composition: one storage certificate per
 * subsystem, nonnegative weights, the concrete and abstract coupling
 * matrices, and the abstractions (for the internal-input cover check).
 */
struct CompositionProblem {
  std::vector<StorageCertificate> certs;
  Eigen::VectorXd mu;
  Eigen::MatrixXd M;
  Eigen::MatrixXd Mhat;
  const std::vector<FiniteAbstraction>* abstractions = nullptr;

  void validate() const {
    if (certs.empty()) throw StructuralError("composition of zero subsystems");
    if (mu.size() != static_cast<int>(certs.size()))
      throw DomainError("weight count disagrees with certificate count");
    for (int i = 0; i < mu.size(); ++i)
      if (mu[i] < 0.0) throw ConfigError("weights must be nonnegative");
  }
};

/* W, What, H block diagonals and the interleaved supply-rate matrix: rows
 * and columns ordered (mismatch blocks 1..N, output blocks 1..N), with
 * mu_i X_i^{11} in the upper-left band, mu_i X_i^{22} in the lower-right,
 * and the cross blocks in between. */
struct BlockAssembly {
  Eigen::MatrixXd W, What, H;
  Eigen::MatrixXd X;
  int q = 0;  // rows of H
  std::vector<int> r_dims;     // mismatch block sizes (X^{11} blocks)
  std::vector<int> y2_dims;    // output block sizes (X^{22} blocks)
};

inline BlockAssembly assemble(const CompositionProblem& problem) {
  problem.validate();
  const int N = static_cast<int>(problem.certs.size());

  BlockAssembly out;
  int wr = 0, wc = 0, hwr = 0, hwc = 0, hr = 0, hc = 0, rsum = 0, qsum = 0;
  for (int i = 0; i < N; ++i) {
    const auto& c = problem.certs[static_cast<size_t>(i)];
    int r = static_cast<int>(c.W.rows());
    int q2 = static_cast<int>(c.H.rows());
    if (c.What.rows() != r)
      throw DomainError("subsystem " + std::to_string(i) + ": W and What row counts differ");
    if (c.X.rows() != r + q2 || c.x11_dim != r)
      throw DomainError("subsystem " + std::to_string(i) +
                        ": supply-rate partition does not match W/H dimensions");
    out.r_dims.push_back(r);
    out.y2_dims.push_back(q2);
    wr += r;
    wc += static_cast<int>(c.W.cols());
    hwr += r;
    hwc += static_cast<int>(c.What.cols());
    hr += q2;
    hc += static_cast<int>(c.H.cols());
    rsum += r;
    qsum += q2;
  }
  out.q = hr;

  out.W = Eigen::MatrixXd::Zero(wr, wc);
  out.What = Eigen::MatrixXd::Zero(hwr, hwc);
  out.H = Eigen::MatrixXd::Zero(hr, hc);
  out.X = Eigen::MatrixXd::Zero(rsum + qsum, rsum + qsum);

  int ro = 0, co = 0, hro = 0, hco = 0, Ho = 0, Hco = 0, xo = 0, yo = 0;
  for (int i = 0; i < N; ++i) {
    const auto& c = problem.certs[static_cast<size_t>(i)];
    double m = problem.mu[i];
    int r = out.r_dims[static_cast<size_t>(i)];
    int q2 = out.y2_dims[static_cast<size_t>(i)];
    out.W.block(ro, co, r, c.W.cols()) = c.W;
    out.What.block(hro, hco, r, c.What.cols()) = c.What;
    out.H.block(Ho, Hco, q2, c.H.cols()) = c.H;

    out.X.block(xo, xo, r, r) = m * c.X.topLeftCorner(r, r);
    out.X.block(xo, rsum + yo, r, q2) = m * c.X.topRightCorner(r, q2);
    out.X.block(rsum + yo, xo, q2, r) = m * c.X.bottomLeftCorner(q2, r);
    out.X.block(rsum + yo, rsum + yo, q2, q2) = m * c.X.bottomRightCorner(q2, q2);

    ro += r;
    co += static_cast<int>(c.W.cols());
    hro += r;
    hco += static_cast<int>(c.What.cols());
    Ho += q2;
    Hco += static_cast<int>(c.H.cols());
    xo += r;
    yo += q2;
  }
  return out;
}

/* the canonical interleaving permutation P with X = P^T blockdiag(mu_i X_i) P;
 * exposed so the identity is testable exactly */
inline Eigen::MatrixXd interleaving_permutation(const BlockAssembly& a) {
  int total = static_cast<int>(a.X.rows());
  int rsum = 0;
  for (int r : a.r_dims) rsum += r;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(total, total);
  int bd = 0;   // row index within blockdiag(mu_i X_i)
  int xo = 0, yo = 0;
  for (size_t i = 0; i < a.r_dims.size(); ++i) {
    for (int k = 0; k < a.r_dims[i]; ++k) P(bd++, xo + k) = 1.0;
    for (int k = 0; k < a.y2_dims[i]; ++k) P(bd++, rsum + yo + k) = 1.0;
    xo += a.r_dims[i];
    yo += a.y2_dims[i];
  }
  return P;
}

struct LmiCheck {
  bool pass = false;
  double max_eigenvalue = 0.0;
  double tolerance = 1e-9;
};

/* [WM; I_q]^T X [WM; I_q] must be negative semidefinite; the test matrix is
 * symmetrized (deviation beyond 1e-12 of scale is a hard error since X is
 * symmetric by construction) and its largest eigenvalue reported. */
inline LmiCheck check_coupling_lmi(const BlockAssembly& a, const Eigen::MatrixXd& M,
                                   double tol = 1e-9) {
  if (a.W.cols() != M.rows() || M.cols() != a.q)
    throw DomainError("coupling matrix dimensions do not fit the assembly");
  Eigen::MatrixXd G(a.W.rows() + a.q, a.q);
  G.topRows(a.W.rows()) = a.W * M;
  G.bottomRows(a.q) = Eigen::MatrixXd::Identity(a.q, a.q);
  Eigen::MatrixXd T = G.transpose() * a.X * G;
  double scale = std::max(1.0, T.cwiseAbs().maxCoeff());
  if ((T - T.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidCertificate("LMI test matrix drifted from symmetry beyond 1e-12");
  Eigen::MatrixXd S = 0.5 * (T + T.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  LmiCheck out;
  out.tolerance = tol;
  out.max_eigenvalue = es.eigenvalues().maxCoeff();
  out.pass = out.max_eigenvalue <= tol;
  return out;
}

struct MatchCheck {
  bool pass = false;
  double deviation = 0.0;
  double tolerance = 0.0;
};

/* W M H = What Mhat, entrywise */
inline MatchCheck check_coupling_match(const BlockAssembly& a, const Eigen::MatrixXd& M,
                                       const Eigen::MatrixXd& Mhat) {
  if (a.W.cols() != M.rows() || M.cols() != a.H.rows())
    throw DomainError("concrete coupling dimensions do not fit the assembly");
  if (a.What.cols() != Mhat.rows() || Mhat.cols() != a.H.cols())
    throw DomainError("abstract coupling dimensions do not fit the assembly");
  Eigen::MatrixXd lhs = a.W * M * a.H;
  Eigen::MatrixXd rhs = a.What * Mhat;
  MatchCheck out;
  double scale = std::max({1.0, lhs.cwiseAbs().maxCoeff(), rhs.cwiseAbs().maxCoeff()});
  out.deviation = (lhs - rhs).cwiseAbs().maxCoeff();
  out.tolerance = 1e-12 * scale;
  out.pass = out.deviation <= out.tolerance;
  return out;
}

struct CoverCheck {
  bool pass = true;
  double worst_deviation = 0.0;
  int worst_coordinate = -1;
  double worst_value = 0.0;
  long values_checked = 0;
};

/* Mhat applied to the stacked abstract internal outputs must land inside the
 * internal input sets. Streamed per coordinate through the same Minkowski
 * decomposition that built the sets, so the full product is never
 * materialized. */
inline CoverCheck check_internal_cover(const Eigen::MatrixXd& Mhat,
                                       const std::vector<FiniteAbstraction>& abstractions,
                                       double tol = 1e-9, InternalSetOptions opt = {}) {
  std::vector<std::vector<double>> coord_vals;
  for (const auto& abs : abstractions) {
    for (int r = 0; r < abs.h2.rows(); ++r) {
      std::vector<double> vals;
      for (int o = 0; o < abs.state_grid.size(); ++o) {
        if (!abs.state_grid.is_core(o)) continue;
        vals.push_back(abs.h2.row(r).dot(abs.state_grid.point(o)));
      }
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end(),
                             [&](double a, double b) { return std::abs(a - b) <= opt.dedup_tol; }),
                 vals.end());
      coord_vals.push_back(std::move(vals));
    }
  }
  if (Mhat.cols() != static_cast<int>(coord_vals.size()))
    throw DomainError("abstract coupling columns do not match stacked output dimension");

  CoverCheck out;
  int row = 0;
  for (size_t i = 0; i < abstractions.size(); ++i) {
    const FiniteSet& target = abstractions[i].internal_inputs;
    for (int d = 0; d < target.dim(); ++d, ++row) {
      std::vector<double> acc{0.0};
      for (int c = 0; c < Mhat.cols(); ++c) {
        double m = Mhat(row, c);
        if (m == 0.0) continue;
        std::vector<double> next;
        next.reserve(acc.size() * coord_vals[static_cast<size_t>(c)].size());
        for (double a : acc)
          for (double v : coord_vals[static_cast<size_t>(c)]) next.push_back(a + m * v);
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end(),
                               [&](double a, double b) { return std::abs(a - b) <= opt.dedup_tol; }),
                   next.end());
        if (static_cast<long>(next.size()) > opt.cap)
          throw CapacityError("cover check for coordinate " + std::to_string(row) + " exceeds " +
                              std::to_string(opt.cap) + " points; use a coarser state quantization");
        acc = std::move(next);
      }
      const auto& members = target.coordinate_values(d);
      for (double v : acc) {
        ++out.values_checked;
        auto it = std::lower_bound(members.begin(), members.end(), v);
        double dev = std::numeric_limits<double>::infinity();
        if (it != members.end()) dev = std::min(dev, std::abs(*it - v));
        if (it != members.begin()) dev = std::min(dev, std::abs(*(it - 1) - v));
        if (dev > out.worst_deviation) {
          out.worst_deviation = dev;
          out.worst_coordinate = row;
          out.worst_value = v;
        }
      }
    }
  }
  out.pass = out.worst_deviation <= tol;
  return out;
}

namespace detail {

/* min / max of sum_i mu_i f_i(s_i) subject to sum_i mu_i s_i = s (active
 * subsystems only), by recursive grid search over the scaled simplex */
inline double simplex_envelope(const std::vector<const ClassKFn*>& fs,
                               const std::vector<double>& mu, double s, int points_per_dim,
                               bool want_min) {
  const size_t n = fs.size();
  double best = want_min ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
  /* enumerate the allocation of the budget s across mu_i s_i */
  std::function<void(size_t, double, double)> rec = [&](size_t i, double remaining, double acc) {
    if (i + 1 == n) {
      double si = std::max(0.0, remaining) / mu[i];
      double v = acc + mu[i] * fs[i]->evaluate(si);
      best = want_min ? std::min(best, v) : std::max(best, v);
      return;
    }
    for (int k = 0; k <= points_per_dim; ++k) {
      double part = remaining * static_cast<double>(k) / points_per_dim;
      rec(i + 1, std::max(0.0, remaining - part), acc + mu[i] * fs[i]->evaluate(part / mu[i]));
    }
  };
  if (n == 1) {
    return mu[0] * fs[0]->evaluate(s / mu[0]);
  }
  rec(0, s, 0.0);
  return best;
}

}  // namespace detail

struct ComposeOptionsNetwork {
  int simplex_points = 200;       // grid resolution per simplex dimension (fallback path)
  int envelope_samples = 64;      // sampled s values when building a Pwl envelope
  double envelope_range = 10.0;   // working range for Pwl envelopes
  int max_fallback_subsystems = 4;
};

/*
 * The composed simulation certificate:
 *   V     = sum_i mu_i S_i
 *   eps   = sum_i mu_i eps_i
 *   sigma = min { sum mu_i sigma_i(s_i) : mu^T s = s }   (closed form when
 *           every active sigma_i is Linear: the smallest slope wins)
 *   rho   = sum_i mu_i rho_i (infinity-norm coupling puts every block at the
 *           full magnitude)
 *   alpha = inverse of max { sum alpha_i^{-1}(s_i) : mu^T s = s }, closed
 *           form for a common power exponent, grid fallback otherwise.
 * Zero-weight subsystems drop out of every formula (their outputs are not
 * covered by the certificate); composing is refused if any check failed.
 */
inline SimulationCertificate compose_certificate(const CompositionProblem& problem,
                                                 const BlockAssembly& assembly,
                                                 const LmiCheck& lmi, const MatchCheck& match,
                                                 const CoverCheck& cover,
                                                 ComposeOptionsNetwork opt = {}) {
  (void)assembly;
  if (!lmi.pass)
    throw InvalidCertificate("composition refused: the coupling LMI failed (max eigenvalue " +
                             fmt_double(lmi.max_eigenvalue) + ")");
  if (!match.pass)
    throw InvalidCertificate("composition refused: coupling consistency failed (deviation " +
                             fmt_double(match.deviation) + ")");
  if (!cover.pass)
    throw InvalidCertificate("composition refused: internal input cover failed (deviation " +
                             fmt_double(cover.worst_deviation) + ")");

  const int N = static_cast<int>(problem.certs.size());
  std::vector<int> active;
  for (int i = 0; i < N; ++i)
    if (problem.mu[i] > 0.0) active.push_back(i);
  if (active.empty()) throw ConfigError("all weights are zero; nothing to compose");

  SimulationCertificate out;
  out.mu = problem.mu;
  for (int i = 0; i < N; ++i) {
    out.Q.push_back(problem.certs[static_cast<size_t>(i)].Q);
    out.dims.push_back(static_cast<int>(problem.certs[static_cast<size_t>(i)].Q.rows()));
  }

  out.epsilon = 0.0;
  for (int i : active) out.epsilon += problem.mu[i] * problem.certs[static_cast<size_t>(i)].epsilon;

  /* sigma */
  bool all_linear = true;
  for (int i : active)
    if (problem.certs[static_cast<size_t>(i)].sigma.kind() != ClassKFn::Kind::kLinear) all_linear = false;
  if (all_linear) {
    double slope = std::numeric_limits<double>::infinity();
    for (int i : active)
      slope = std::min(slope, problem.certs[static_cast<size_t>(i)].sigma.linear_slope());
    out.sigma = ClassKFn::linear(slope);
    out.sigma_closed_form = true;
  } else {
    if (static_cast<int>(active.size()) > opt.max_fallback_subsystems)
      throw CapacityError("sigma grid fallback supports at most " +
                          std::to_string(opt.max_fallback_subsystems) + " weighted subsystems");
    std::vector<const ClassKFn*> fs;
    std::vector<double> mus;
    for (int i : active) {
      fs.push_back(&problem.certs[static_cast<size_t>(i)].sigma);
      mus.push_back(problem.mu[i]);
    }
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    for (int k = 1; k <= opt.envelope_samples; ++k) {
      double s = opt.envelope_range * static_cast<double>(k) / opt.envelope_samples;
      double v = detail::simplex_envelope(fs, mus, s, opt.simplex_points, /*want_min=*/true);
      if (v > pts.back().second) pts.push_back({s, v});
    }
    double tail = (pts.back().second - pts[pts.size() - 2].second) /
                  (pts.back().first - pts[pts.size() - 2].first);
    out.sigma = ClassKFn::pwl(std::move(pts), tail);
    out.sigma_closed_form = false;
  }

  /* rho_ext: sum of the active gains at full magnitude */
  bool all_zero = true;
  for (int i : active)
    if (!problem.certs[static_cast<size_t>(i)].rho_ext.is_zero()) all_zero = false;
  if (all_zero) {
    out.rho_ext = ClassKFn::zero();
  } else {
    bool lin = true;
    for (int i : active) {
      const auto& r = problem.certs[static_cast<size_t>(i)].rho_ext;
      if (!r.is_zero() && r.kind() != ClassKFn::Kind::kLinear) lin = false;
    }
    if (lin) {
      double slope = 0.0;
      for (int i : active) {
        const auto& r = problem.certs[static_cast<size_t>(i)].rho_ext;
        if (!r.is_zero()) slope += problem.mu[i] * r.linear_slope();
      }
      out.rho_ext = ClassKFn::linear(slope);
    } else {
      std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
      for (int k = 1; k <= opt.envelope_samples; ++k) {
        double s = opt.envelope_range * static_cast<double>(k) / opt.envelope_samples;
        double v = 0.0;
        for (int i : active)
          v += problem.mu[i] * problem.certs[static_cast<size_t>(i)].rho_ext.evaluate(s);
        if (v > pts.back().second) pts.push_back({s, v});
      }
      double tail = (pts.back().second - pts[pts.size() - 2].second) /
                    (pts.back().first - pts[pts.size() - 2].first);
      out.rho_ext = ClassKFn::pwl(std::move(pts), tail);
    }
  }

  /* alpha */
  bool common_power = true;
  double p = 0.0;
  for (int i : active) {
    const auto& a = problem.certs[static_cast<size_t>(i)].alpha;
    double pi = 0.0;
    if (a.kind() == ClassKFn::Kind::kLinear) pi = 1.0;
    else if (a.kind() == ClassKFn::Kind::kPower) pi = a.power_exponent();
    else {
      common_power = false;
      break;
    }
    if (p == 0.0) p = pi;
    else if (pi != p) common_power = false;
  }
  if (common_power && p == 1.0) {
    double m = std::numeric_limits<double>::infinity();
    for (int i : active) {
      const auto& a = problem.certs[static_cast<size_t>(i)].alpha;
      m = std::min(m, a.linear_slope() * problem.mu[i]);
    }
    out.alpha = ClassKFn::linear(m);
  } else if (common_power) {
    /* maximize sum c_i t_i^{1/p} with sum mu_i t_i = 1, c_i = a_i^{-1/p};
     * stationarity gives t_i proportional to (mu_i / c_i)^{p/(1-p)} */
    double denom = 0.0, numer = 0.0;
    std::vector<double> beta;
    for (int i : active) {
      const auto& a = problem.certs[static_cast<size_t>(i)].alpha;
      double ci = std::pow(a.power_coeff(), -1.0 / p);
      double bi = std::pow(problem.mu[i] / ci, p / (1.0 - p));
      beta.push_back(bi);
      denom += problem.mu[i] * bi;
      numer += ci * std::pow(bi, 1.0 / p);
    }
    double C = std::pow(denom, -1.0 / p) * numer;  // alpha_bar(s) = C s^{1/p}
    out.alpha = ClassKFn::power(std::pow(C, -p), p);
  } else {
    if (static_cast<int>(active.size()) > opt.max_fallback_subsystems)
      throw CapacityError("alpha grid fallback supports at most " +
                          std::to_string(opt.max_fallback_subsystems) + " weighted subsystems");
    std::vector<ClassKFn> inverses;
    std::vector<const ClassKFn*> fs;
    std::vector<double> mus;
    for (int i : active) {
      inverses.push_back(problem.certs[static_cast<size_t>(i)].alpha.inverse());
      mus.push_back(problem.mu[i]);
    }
    for (auto& inv : inverses) fs.push_back(&inv);
    /* alpha_bar as a Pwl envelope (each term enters un-weighted; the weights
     * only shape the constraint), then invert */
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    for (int k = 1; k <= opt.envelope_samples; ++k) {
      double s = opt.envelope_range * static_cast<double>(k) / opt.envelope_samples;
      std::vector<double> ones(mus.size(), 1.0);
      /* max over mu^T t = s of sum alpha_i^{-1}(t_i): reuse the simplex walk
       * with unit outer weights but mu-scaled budget */
      const size_t n = fs.size();
      double best = -std::numeric_limits<double>::infinity();
      std::function<void(size_t, double, double)> rec = [&](size_t i, double remaining, double acc) {
        if (i + 1 == n) {
          best = std::max(best, acc + fs[i]->evaluate(std::max(0.0, remaining) / mus[i]));
          return;
        }
        for (int kk = 0; kk <= opt.simplex_points; ++kk) {
          double part = remaining * static_cast<double>(kk) / opt.simplex_points;
          rec(i + 1, std::max(0.0, remaining - part), acc + fs[i]->evaluate(part / mus[i]));
        }
      };
      if (n == 1) best = fs[0]->evaluate(s / mus[0]);
      else rec(0, s, 0.0);
      if (best > pts.back().second) pts.push_back({s, best});
    }
    double tail = (pts.back().second - pts[pts.size() - 2].second) /
                  (pts.back().first - pts[pts.size() - 2].first);
    out.alpha = ClassKFn::pwl(std::move(pts), tail).inverse();
  }

  return out;
}

}  // namespace dissim

#endif  // DISSIM_COMPOSITION_HPP_
