#ifndef DISSIM_STORAGE_CHECK_HPP_
#define DISSIM_STORAGE_CHECK_HPP_

#include <algorithm>
#include <string>
#include <vector>

#include "dissim/abstraction.hpp"
#include "dissim/certificates.hpp"

namespace dissim {

struct StorageCheckOptions {
  long concrete_samples = 1000;  // sampled concrete states
  int w_samples = 5;             // sampled internal inputs per state (plus box corners)
  uint64_t seed = 2;
  double slack = 1e-9;  // relative
  unsigned threads = 1;
};

/*
 * Pointwise verification that S(x,xhat) = (x-xhat)^T Q (x-xhat) certifies the
 * abstraction: over sampled concrete states x, all abstract states, all
 * quantized inputs, all internal input members (and sampled concrete
 * internal inputs), the chosen successor satisfies the decrease inequality
 *
 *   S(x_d, xhat_d) - S(x,xhat) <= -sigma(S) + rho_ext(|u_hat|) + supply + eps
 *
 * and every pair satisfies alpha(|h1(x) - h1_hat(xhat)|_inf) <= S(x,xhat).
 * The concrete input is the interfaced one, u = H(x) + u_hat. Violations are
 * report content; an empty successor set (possible only for hand-edited
 * tables) raises NonBlockingViolation.
 */
inline SampledReport check_storage_pointwise(const SubsystemModel& concrete,
                                             const FiniteAbstraction& abstract,
                                             const PassivityCertificate& pcert,
                                             const StorageCertificate& scert,
                                             StorageCheckOptions opt = {}) {
  scert.validate();
  const Box sbox = concrete.state_set().hull();
  const Box& wbox = concrete.internal_box();
  const size_t nx = static_cast<size_t>(opt.concrete_samples);

  /* concrete internal input draws: box corners plus seeded uniforms */
  std::vector<Eigen::VectorXd> w_base;
  if (wbox.dim() <= 4)
    for (unsigned mask = 0; mask < (1u << wbox.dim()); ++mask) w_base.push_back(wbox.corner(mask));

  struct Slot {
    double worst = std::numeric_limits<double>::infinity();
    std::vector<ViolationRecord> viol;
  };
  std::vector<Slot> slots(nx);

  parallel_for(nx, opt.threads, [&](size_t xi) {
    auto rng = rng_for(opt.seed, xi);
    Eigen::VectorXd x(sbox.dim());
    for (int i = 0; i < sbox.dim(); ++i)
      x[i] = uniform_in(rng, sbox.axes[static_cast<size_t>(i)].lo, sbox.axes[static_cast<size_t>(i)].hi);

    std::vector<Eigen::VectorXd> ws = w_base;
    for (int j = 0; j < opt.w_samples; ++j) {
      Eigen::VectorXd w(wbox.dim());
      for (int i = 0; i < wbox.dim(); ++i)
        w[i] = uniform_in(rng, wbox.axes[static_cast<size_t>(i)].lo, wbox.axes[static_cast<size_t>(i)].hi);
      ws.push_back(w);
    }

    Slot& slot = slots[xi];
    auto note = [&](double margin, const std::string& what) {
      slot.worst = std::min(slot.worst, margin);
      if (!what.empty()) slot.viol.push_back({margin, what});
    };

    for (int s = 0; s < abstract.state_count(); ++s) {
      Eigen::VectorXd xhat = abstract.state_point(s);
      double sval = scert.value(x, xhat);

      /* output-error lower bound */
      double err = (concrete.h1() * x - abstract.h1_of(s)).cwiseAbs().maxCoeff();
      double m_bound = sval - scert.alpha.evaluate(err);
      note(m_bound, m_bound < -opt.slack * std::max(1.0, sval)
                        ? "lower bound at x-sample " + std::to_string(xi) + " state " + std::to_string(s)
                        : "");

      Eigen::VectorXd hx = concrete.h2_of(x);
      for (int u = 0; u < abstract.input_count(); ++u) {
        Eigen::VectorXd uhat = abstract.input_point(u);
        double rho = scert.rho_ext.evaluate(uhat.cwiseAbs().maxCoeff());
        for (const auto& w : ws) {
          Eigen::VectorXd xd = concrete.eval(x, pcert.feedback(x) + uhat, w);
          for (long wi = 0; wi < abstract.internal_count(); ++wi) {
            const auto& succ = abstract.successors(s, u, wi);
            if (succ.empty())
              throw NonBlockingViolation("no successor for state " + std::to_string(s) +
                                         " input " + std::to_string(u) + " internal " +
                                         std::to_string(wi));
            double best = std::numeric_limits<double>::infinity();
            for (int32_t d : succ) best = std::min(best, scert.value(xd, abstract.state_point(d)));
            Eigen::VectorXd what = abstract.internal_point(wi);
            double sup = supply_rate(scert.X, scert.W * w - scert.What * what,
                                     hx - scert.H * abstract.h2_of(s));
            double rhs = -scert.sigma.evaluate(sval) + rho + sup + scert.epsilon;
            double lhs = best - sval;
            double scale = std::max({1.0, sval, std::abs(rhs), std::abs(lhs)});
            double margin = rhs - lhs;
            note(margin, margin < -opt.slack * scale
                             ? "decrease at x-sample " + std::to_string(xi) + " state " +
                                   std::to_string(s) + " input " + std::to_string(u) +
                                   " internal " + std::to_string(wi)
                             : "");
          }
        }
      }
    }
  });

  SampledReport rep;
  rep.samples = opt.concrete_samples;
  for (auto& slot : slots) {
    rep.worst_margin = std::min(rep.worst_margin, slot.worst);
    for (auto& v : slot.viol) rep.violations.push_back(std::move(v));
  }
  detail::finalize_report(rep);
  return rep;
}

}  // namespace dissim

#endif  // DISSIM_STORAGE_CHECK_HPP_
