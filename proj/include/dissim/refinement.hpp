#ifndef DISSIM_REFINEMENT_HPP_
#define DISSIM_REFINEMENT_HPP_

#include <algorithm>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dissim/abstraction.hpp"
#include "dissim/certificates.hpp"
#include "dissim/classk.hpp"
#include "dissim/parallel.hpp"

namespace dissim {

/**
 * Runtime error-bound package for one simulation certificate: the one-step
 * contraction lambda (lambda(s) < s for s > 0), the external gain, the
 * offset phi, the output-error radius eps_hat = alpha^{-1}(gamma_ext(v)+phi),
 * and the input magnitude bound v it was computed for. The pair relation is
 * { (x,xhat) : V(x,xhat) <= gamma_ext(v) + phi }.
 */
struct RefinementBound {
  ClassKFn lambda;
  ClassKFn gamma_ext;
  double phi = 0.0;
  double eps_hat = 0.0;
  double input_bound_v = 0.0;

  double level() const {
    return (gamma_ext.is_zero() ? 0.0 : gamma_ext.evaluate(input_bound_v)) + phi;
  }
};

inline RefinementBound compute_bound(const SimulationCertificate& cert, double v,
                                     SynthesisOptions opt = {}) {
  if (v < 0.0) throw DomainError("input bound must be >= 0");
  BoundSynthesis syn = synthesize_bound(cert.sigma, cert.rho_ext, cert.epsilon, opt);
  RefinementBound out;
  out.lambda = syn.lambda;
  out.gamma_ext = syn.gamma_ext;
  out.phi = syn.phi;
  out.input_bound_v = v;
  double lvl = out.level();
  out.eps_hat = lvl == 0.0 ? 0.0 : cert.alpha.inverse().evaluate(lvl);
  return out;
}

/* interface map: the concrete input that tracks an abstract input */
inline Eigen::VectorXd refine_input(const PassivityCertificate& cert, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& u_hat) {
  return cert.feedback(x) + u_hat;
}

/* successor minimizing the storage value against the concrete successor;
 * ties resolve to the lowest ordinal (successor lists are ascending) */
inline int choose_abstract_successor(const FiniteAbstraction& abs, int s, int u, long w,
                                     const Eigen::VectorXd& x_d, const Eigen::MatrixXd& Q) {
  const auto& succ = abs.successors(s, u, w);
  if (succ.empty())
    throw NonBlockingViolation("no successor for state " + std::to_string(s) + " input " +
                               std::to_string(u) + " internal " + std::to_string(w));
  int best = succ.front();
  double best_val = std::numeric_limits<double>::infinity();
  for (int32_t d : succ) {
    Eigen::VectorXd diff = x_d - abs.state_point(d);
    double v = diff.dot(Q * diff);
    if (v < best_val) {
      best_val = v;
      best = d;
    }
  }
  return best;
}

/* view over the abstract side of a composed network */
struct AbstractNetworkView {
  const std::vector<FiniteAbstraction>* subs = nullptr;
  Eigen::MatrixXd Mhat;

  int count() const { return static_cast<int>(subs->size()); }
  const FiniteAbstraction& at(int i) const { return (*subs)[static_cast<size_t>(i)]; }
};

namespace detail {

inline Eigen::VectorXd stacked_state(const AbstractNetworkView& av, const std::vector<int>& ords) {
  int total = 0;
  for (int i = 0; i < av.count(); ++i) total += av.at(i).state_grid.dim();
  Eigen::VectorXd x(total);
  int off = 0;
  for (int i = 0; i < av.count(); ++i) {
    x.segment(off, av.at(i).state_grid.dim()) = av.at(i).state_point(ords[static_cast<size_t>(i)]);
    off += av.at(i).state_grid.dim();
  }
  return x;
}

inline Eigen::VectorXd stacked_h2(const AbstractNetworkView& av, const std::vector<int>& ords) {
  int total = 0;
  for (int i = 0; i < av.count(); ++i) total += static_cast<int>(av.at(i).h2.rows());
  Eigen::VectorXd y(total);
  int off = 0;
  for (int i = 0; i < av.count(); ++i) {
    y.segment(off, av.at(i).h2.rows()) = av.at(i).h2_of(ords[static_cast<size_t>(i)]);
    off += static_cast<int>(av.at(i).h2.rows());
  }
  return y;
}

inline Eigen::VectorXd stacked_h1(const AbstractNetworkView& av, const std::vector<int>& ords) {
  int total = 0;
  for (int i = 0; i < av.count(); ++i) total += static_cast<int>(av.at(i).h1.rows());
  Eigen::VectorXd y(total);
  int off = 0;
  for (int i = 0; i < av.count(); ++i) {
    y.segment(off, av.at(i).h1.rows()) = av.at(i).h1_of(ords[static_cast<size_t>(i)]);
    off += static_cast<int>(av.at(i).h1.rows());
  }
  return y;
}

/* abstract internal inputs from the coupling, snapped per block to the
 * nearest set member; the deviation is zero whenever the state stays in the
 * region the sets were built from */
struct SnappedInternal {
  std::vector<long> flat;
  double deviation = 0.0;
};

inline SnappedInternal snap_internal(const AbstractNetworkView& av, const std::vector<int>& ords) {
  Eigen::VectorXd w = av.Mhat * stacked_h2(av, ords);
  SnappedInternal out;
  int off = 0;
  for (int i = 0; i < av.count(); ++i) {
    int p = av.at(i).internal_inputs.dim();
    auto near = av.at(i).internal_inputs.nearest(w.segment(off, p));
    out.flat.push_back(near.flat);
    out.deviation = std::max(out.deviation, near.deviation);
    off += p;
  }
  return out;
}

}  // namespace detail

/**
 * Per-step record of a paired run. out_err is the infinity norm of the
 * output mismatch, bound the envelope value the next step must satisfy.
 */
struct TraceLog {
  struct Record {
    int k = 0;
    Eigen::VectorXd x, xhat;
    double V = 0.0;
    double bound = 0.0;
    double out_err = 0.0;
  };

  std::vector<Record> steps;
  double max_out_err = 0.0;
  double max_V = 0.0;
  double max_snap_deviation = 0.0;
  bool standing_bound_active = false;
  std::vector<ViolationRecord> violations;
  int first_violation_step = -1;

  bool failed() const { return !violations.empty(); }

  /* header: k, x0.., xhat0.., V, bound, out_err; 17 significant digits */
  void to_csv(std::ostream& os) const {
    if (steps.empty()) return;
    os << "k";
    for (int i = 0; i < steps.front().x.size(); ++i) os << ",x" << i;
    for (int i = 0; i < steps.front().xhat.size(); ++i) os << ",xhat" << i;
    os << ",V,bound,out_err\n";
    for (const auto& r : steps) {
      os << r.k;
      for (int i = 0; i < r.x.size(); ++i) os << "," << fmt_double(r.x[i]);
      for (int i = 0; i < r.xhat.size(); ++i) os << "," << fmt_double(r.xhat[i]);
      os << "," << fmt_double(r.V) << "," << fmt_double(r.bound) << "," << fmt_double(r.out_err)
         << "\n";
    }
  }
};

struct SimulateOptions {
  double slack = 1e-9;  // relative
};

inline int net_state_offset(const InterconnectedSystem& net, int i) {
  int off = 0;
  for (int j = 0; j < i; ++j) off += net.subsystem(j).state_dim();
  return off;
}

/*
 * Runs the concrete network and its abstraction side by side for K steps:
 * concrete inputs are refined abstract ones (u = H(x) + u_hat), internal
 * inputs follow the couplings, abstract successors minimize the storage
 * value. Every step asserts the one-step envelope
 *   V(x+, xhat+) <= max{ lambda(V), gamma_ext(|u_hat|) + phi }
 * and, when the pair starts inside the relation, the standing output bound
 * |h(x) - h_hat(xhat)| <= eps_hat. Violations mark the log failed.
 */
inline TraceLog simulate_pair(const InterconnectedSystem& net, const AbstractNetworkView& av,
                              const std::vector<PassivityCertificate>& pcerts,
                              const SimulationCertificate& cert, const RefinementBound& bound,
                              const Eigen::VectorXd& x0, const std::vector<int>& xhat0,
                              const std::vector<std::vector<int>>& uhat_seq, int K,
                              SimulateOptions opt = {}) {
  const int N = net.subsystem_count();
  if (static_cast<int>(xhat0.size()) != N) throw DomainError("abstract state count mismatch");

  TraceLog log;
  Eigen::VectorXd x = x0;
  std::vector<int> ords = xhat0;

  double level = bound.level();
  {
    Eigen::VectorXd xh = detail::stacked_state(av, ords);
    log.standing_bound_active = cert.value(x, xh) <= level + opt.slack * std::max(1.0, level);
  }

  auto record_violation = [&](int k, double margin, const std::string& what) {
    log.violations.push_back({margin, what});
    if (log.first_violation_step < 0) log.first_violation_step = k;
  };

  double prev_bound = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= K; ++k) {
    Eigen::VectorXd xh = detail::stacked_state(av, ords);
    double V = cert.value(x, xh);
    double out_err = (net.output(x) - detail::stacked_h1(av, ords)).cwiseAbs().maxCoeff();
    log.max_V = std::max(log.max_V, V);
    log.max_out_err = std::max(log.max_out_err, out_err);

    if (k > 0 && V > prev_bound + opt.slack * std::max(1.0, prev_bound))
      record_violation(k, prev_bound - V, "one-step envelope exceeded at step " + std::to_string(k));
    if (log.standing_bound_active &&
        out_err > bound.eps_hat + opt.slack * std::max(1.0, bound.eps_hat))
      record_violation(k, bound.eps_hat - out_err,
                       "standing output bound exceeded at step " + std::to_string(k));

    if (k == K) break;

    const auto& uhat_ords = uhat_seq[static_cast<size_t>(k)];
    Eigen::VectorXd uhat_stack(net.input_dim());
    {
      int off = 0;
      for (int i = 0; i < N; ++i) {
        uhat_stack.segment(off, av.at(i).input_grid.dim()) =
            av.at(i).input_point(uhat_ords[static_cast<size_t>(i)]);
        off += av.at(i).input_grid.dim();
      }
    }
    double uhat_norm = uhat_stack.cwiseAbs().maxCoeff();
    if (uhat_norm > bound.input_bound_v + 1e-12)
      throw DomainError("abstract input exceeds the declared bound v");

    double step_bound =
        std::max(bound.lambda.evaluate(V),
                 (bound.gamma_ext.is_zero() ? 0.0 : bound.gamma_ext.evaluate(uhat_norm)) + bound.phi);
    if (K > 0) log.steps.push_back({k, x, xh, V, step_bound, out_err});
    prev_bound = step_bound;

    /* concrete side */
    Eigen::VectorXd w = net.internal_inputs(x);
    Eigen::VectorXd xnext(x.size());
    {
      int off = 0;
      for (int i = 0; i < N; ++i) {
        const auto& sub = net.subsystem(i);
        Eigen::VectorXd xi = net.state_block(x, i);
        Eigen::VectorXd ui =
            refine_input(pcerts[static_cast<size_t>(i)], xi,
                         uhat_stack.segment(off, sub.input_dim()));
        xnext.segment(net_state_offset(net, i), sub.state_dim()) =
            sub.eval(xi, ui, net.internal_block(w, i));
        off += sub.input_dim();
      }
    }

    /* abstract side */
    auto snapped = detail::snap_internal(av, ords);
    log.max_snap_deviation = std::max(log.max_snap_deviation, snapped.deviation);
    std::vector<int> next_ords(static_cast<size_t>(N));
    {
      int off = 0;
      for (int i = 0; i < N; ++i) {
        const auto& sub = net.subsystem(i);
        Eigen::VectorXd xdi = xnext.segment(off, sub.state_dim());
        next_ords[static_cast<size_t>(i)] = choose_abstract_successor(
            av.at(i), ords[static_cast<size_t>(i)], uhat_ords[static_cast<size_t>(i)],
            snapped.flat[static_cast<size_t>(i)], xdi, cert.Q[static_cast<size_t>(i)]);
        off += sub.state_dim();
      }
    }
    x = xnext;
    ords = next_ords;
  }
  return log;
}

struct AltSimOptions {
  double slack = 1e-9;
  unsigned threads = 1;
  long max_pairs = 50000000;
};

struct AltSimReport {
  long pairs_total = 0;
  long pairs_in_relation = 0;
  long inputs_checked = 0;
  long output_violations = 0;
  long invariance_violations = 0;
  std::vector<ViolationRecord> violations;  // worst first, capped

  bool clean() const { return output_violations == 0 && invariance_violations == 0; }
};

/*
 * Exhaustive one-step check of the relation R = { V <= gamma_ext(v) + phi }:
 * every in-relation pair must satisfy the output-error bound, and for every
 * abstract input the refined concrete input must lead to a successor pair
 * inside R (the storage value separates over subsystems, so the best joint
 * successor is the blockwise argmin).
 */
inline AltSimReport verify_alternating_simulation(const InterconnectedSystem& net,
                                                  const AbstractNetworkView& av,
                                                  const std::vector<PassivityCertificate>& pcerts,
                                                  const SimulationCertificate& cert,
                                                  const RefinementBound& bound,
                                                  const std::vector<Eigen::VectorXd>& concrete_samples,
                                                  AltSimOptions opt = {}) {
  const int N = net.subsystem_count();
  const double level = bound.level();

  long joint_states = 1;
  for (int i = 0; i < N; ++i) joint_states *= av.at(i).state_count();
  if (joint_states * static_cast<long>(concrete_samples.size()) > opt.max_pairs)
    throw CapacityError("pair enumeration exceeds the cap of " + std::to_string(opt.max_pairs));

  long joint_inputs = 1;
  for (int i = 0; i < N; ++i) joint_inputs *= av.at(i).input_count();

  struct Slot {
    long in_rel = 0, inputs = 0, out_viol = 0, inv_viol = 0;
    std::vector<ViolationRecord> viol;
  };
  std::vector<Slot> slots(concrete_samples.size());

  parallel_for(concrete_samples.size(), opt.threads, [&](size_t ci) {
    const Eigen::VectorXd& x = concrete_samples[ci];
    Slot& slot = slots[ci];
    std::vector<int> ords(static_cast<size_t>(N), 0);
    for (long js = 0; js < joint_states; ++js) {
      long rem = js;
      for (int i = N - 1; i >= 0; --i) {
        ords[static_cast<size_t>(i)] = static_cast<int>(rem % av.at(i).state_count());
        rem /= av.at(i).state_count();
      }
      Eigen::VectorXd xh = detail::stacked_state(av, ords);
      double V = cert.value(x, xh);
      if (V > level) continue;
      ++slot.in_rel;

      double out_err = (net.output(x) - detail::stacked_h1(av, ords)).cwiseAbs().maxCoeff();
      if (out_err > bound.eps_hat + opt.slack * std::max(1.0, bound.eps_hat)) {
        ++slot.out_viol;
        slot.viol.push_back({bound.eps_hat - out_err,
                             "output error " + fmt_double(out_err) + " at sample " +
                                 std::to_string(ci) + " joint state " + std::to_string(js)});
      }

      Eigen::VectorXd w = net.internal_inputs(x);
      auto snapped = detail::snap_internal(av, ords);

      std::vector<int> uords(static_cast<size_t>(N), 0);
      for (long ju = 0; ju < joint_inputs; ++ju) {
        long urem = ju;
        for (int i = N - 1; i >= 0; --i) {
          uords[static_cast<size_t>(i)] = static_cast<int>(urem % av.at(i).input_count());
          urem /= av.at(i).input_count();
        }
        ++slot.inputs;

        double vnext = 0.0;
        bool blocked = false;
        int off = 0;
        for (int i = 0; i < N && !blocked; ++i) {
          const auto& sub = net.subsystem(i);
          Eigen::VectorXd xi = x.segment(off, sub.state_dim());
          Eigen::VectorXd ui = refine_input(pcerts[static_cast<size_t>(i)], xi,
                                            av.at(i).input_point(uords[static_cast<size_t>(i)]));
          Eigen::VectorXd xdi = sub.eval(xi, ui, net.internal_block(w, i));
          const auto& succ = av.at(i).successors(ords[static_cast<size_t>(i)],
                                                 uords[static_cast<size_t>(i)],
                                                 snapped.flat[static_cast<size_t>(i)]);
          if (succ.empty()) {
            blocked = true;
            break;
          }
          double best = std::numeric_limits<double>::infinity();
          for (int32_t d : succ) {
            Eigen::VectorXd diff = xdi - av.at(i).state_point(d);
            best = std::min(best, diff.dot(cert.Q[static_cast<size_t>(i)] * diff));
          }
          vnext += cert.mu[i] * best;
          off += sub.state_dim();
        }
        if (blocked || vnext > level + opt.slack * std::max(1.0, level)) {
          ++slot.inv_viol;
          slot.viol.push_back({level - vnext,
                               "relation not preserved at sample " + std::to_string(ci) +
                                   " joint state " + std::to_string(js) + " joint input " +
                                   std::to_string(ju)});
        }
      }
    }
  });

  AltSimReport rep;
  rep.pairs_total = joint_states * static_cast<long>(concrete_samples.size());
  for (auto& s : slots) {
    rep.pairs_in_relation += s.in_rel;
    rep.inputs_checked += s.inputs;
    rep.output_violations += s.out_viol;
    rep.invariance_violations += s.inv_viol;
    for (auto& v : s.viol) rep.violations.push_back(std::move(v));
  }
  std::sort(rep.violations.begin(), rep.violations.end(),
            [](const ViolationRecord& a, const ViolationRecord& b) { return a.margin < b.margin; });
  if (rep.violations.size() > 32) rep.violations.resize(32);
  return rep;
}

/* concrete sample builder: per-axis grid values plus interval midpoints,
 * joined over all subsystems as a product (capped) */
inline std::vector<Eigen::VectorXd> grid_midpoint_samples(const AbstractNetworkView& av,
                                                          long cap = 2000000) {
  std::vector<std::vector<double>> axes;
  for (int i = 0; i < av.count(); ++i) {
    const Grid& g = av.at(i).state_grid;
    for (int a = 0; a < g.dim(); ++a) {
      std::vector<double> vals;
      for (int o = 0; o < g.size(); ++o) vals.push_back(g.point(o)[a]);
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      std::vector<double> with_mid;
      for (size_t j = 0; j < vals.size(); ++j) {
        with_mid.push_back(vals[j]);
        if (j + 1 < vals.size()) with_mid.push_back(0.5 * (vals[j] + vals[j + 1]));
      }
      axes.push_back(std::move(with_mid));
    }
  }
  long total = 1;
  for (const auto& a : axes) {
    total *= static_cast<long>(a.size());
    if (total > cap) throw CapacityError("concrete sample product exceeds the cap");
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<size_t>(total));
  Eigen::VectorXd v(static_cast<int>(axes.size()));
  std::vector<size_t> idx(axes.size(), 0);
  for (long t = 0; t < total; ++t) {
    long rem = t;
    for (int a = static_cast<int>(axes.size()) - 1; a >= 0; --a) {
      idx[static_cast<size_t>(a)] = static_cast<size_t>(rem % static_cast<long>(axes[static_cast<size_t>(a)].size()));
      rem /= static_cast<long>(axes[static_cast<size_t>(a)].size());
    }
    for (size_t a = 0; a < axes.size(); ++a) v[static_cast<int>(a)] = axes[a][idx[a]];
    out.push_back(v);
  }
  return out;
}

}  // namespace dissim

#endif  // DISSIM_REFINEMENT_HPP_
