#ifndef DISSIM_SYSTEM_HPP_
#define DISSIM_SYSTEM_HPP_

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dissim/geometry.hpp"

namespace dissim {

using TransitionFn =
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&)>;

struct LinearDynamics {
  Eigen::MatrixXd A, B, D;  // x+ = A x + B u + D w
};

/**
 * A concrete discrete-time control subsystem with external and internal
 * channels:
 *
 *   x+ = f(x, u, w),   y1 = H1 x,   y2 = H2 x
 *
 * The transition map is deterministic (one successor per argument tuple).
 * Output maps are linear; H1 defaults to the identity. Models are immutable
 * after construction; step is reentrant.
 */
class SubsystemModel {
 public:
  static SubsystemModel make_linear(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd D,
                                    BoxUnion state_set, Box input_box, Box internal_box) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n || B.rows() != n || D.rows() != n)
      throw DomainError("linear dynamics matrices disagree with the state dimension");
    if (state_set.dim() != n || input_box.dim() != static_cast<int>(B.cols()) ||
        internal_box.dim() != static_cast<int>(D.cols()))
      throw DomainError("linear dynamics matrices disagree with the declared boxes");
    SubsystemModel s;
    s.linear_ = LinearDynamics{A, B, D};
    s.f_ = [A, B, D](const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Eigen::VectorXd& w) {
      return Eigen::VectorXd(A * x + B * u + D * w);
    };
    s.finish(std::move(state_set), std::move(input_box), std::move(internal_box),
             static_cast<int>(B.cols()), static_cast<int>(D.cols()));
    return s;
  }

  static SubsystemModel make_general(TransitionFn f, BoxUnion state_set, Box input_box,
                                     Box internal_box, int input_dim, int internal_dim) {
    SubsystemModel s;
    s.f_ = std::move(f);
    s.finish(std::move(state_set), std::move(input_box), std::move(internal_box), input_dim,
             internal_dim);
    return s;
  }

  SubsystemModel with_internal_output(Eigen::MatrixXd H2) const {
    if (H2.cols() != state_dim()) throw DomainError("internal output map column count mismatch");
    SubsystemModel s = *this;
    s.h2_ = std::move(H2);
    return s;
  }

  SubsystemModel with_boxes(BoxUnion state_set, Box input_box, Box internal_box) const {
    SubsystemModel s = *this;
    if (state_set.dim() != state_dim() || input_box.dim() != input_dim() ||
        internal_box.dim() != internal_dim())
      throw DomainError("replacement boxes disagree with model dimensions");
    s.state_set_ = std::move(state_set);
    s.input_box_ = std::move(input_box);
    s.internal_box_ = std::move(internal_box);
    return s;
  }

  int state_dim() const { return state_set_.dim(); }
  int input_dim() const { return input_box_.dim(); }
  int internal_dim() const { return internal_box_.dim(); }
  int y1_dim() const { return static_cast<int>(h1_.rows()); }
  int y2_dim() const { return static_cast<int>(h2_.rows()); }

  const BoxUnion& state_set() const { return state_set_; }
  const Box& input_box() const { return input_box_; }
  const Box& internal_box() const { return internal_box_; }
  const Eigen::MatrixXd& h1() const { return h1_; }
  const Eigen::MatrixXd& h2() const { return h2_; }
  const std::optional<LinearDynamics>& linear() const { return linear_; }
  bool is_linear() const { return linear_.has_value(); }

  /* raw transition evaluation; no membership enforcement (used by interface
   * maps and verification sweeps that intentionally leave the boxes) */
  Eigen::VectorXd eval(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& w) const {
    return f_(x, u, w);
  }

  /* the unique successor; arguments must lie in their boxes (1e-12 slack) */
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& w) const {
    if (x.size() != state_dim() || u.size() != input_dim() || w.size() != internal_dim())
      throw DomainError("step: argument dimension mismatch");
    if (!state_set_.contains(x))
      throw DomainError("step: state outside its set (axis " +
                        std::to_string(worst_axis(state_set_, x)) + ")");
    int ax = input_box_.violated_axis(u);
    if (ax >= 0) throw DomainError("step: input outside its box (axis " + std::to_string(ax) + ")");
    ax = internal_box_.violated_axis(w);
    if (ax >= 0)
      throw DomainError("step: internal input outside its box (axis " + std::to_string(ax) + ")");
    return f_(x, u, w);
  }

  Eigen::VectorXd h1_of(const Eigen::VectorXd& x) const { return h1_ * x; }
  Eigen::VectorXd h2_of(const Eigen::VectorXd& x) const { return h2_ * x; }

 private:
  void finish(BoxUnion state_set, Box input_box, Box internal_box, int input_dim, int internal_dim) {
    state_set_ = std::move(state_set);
    input_box_ = std::move(input_box);
    internal_box_ = std::move(internal_box);
    if (input_box_.dim() != input_dim || internal_box_.dim() != internal_dim)
      throw DomainError("box dimensions disagree with declared input/internal dimensions");
    const int n = state_set_.dim();
    h1_ = Eigen::MatrixXd::Identity(n, n);
    h2_ = Eigen::MatrixXd::Identity(n, n);
  }

  static int worst_axis(const BoxUnion& set, const Eigen::VectorXd& x) {
    /* against the hull; good enough for an error message */
    return set.hull().violated_axis(x);
  }

  BoxUnion state_set_;
  Box input_box_, internal_box_;
  TransitionFn f_;
  Eigen::MatrixXd h1_, h2_;
  std::optional<LinearDynamics> linear_;
};

struct InterconnectionMatrix {
  Eigen::MatrixXd M;  // stacked internal outputs -> stacked internal inputs
};

/**
 * Closed network of subsystems under a static coupling: at each step the
 * internal inputs are w = M [h2_1(x_1); ...; h2_N(x_N)] and every subsystem
 * advances. Well-posedness (the coupling image fits every internal input
 * box) is verified exactly at construction for the linear output maps.
 */
class InterconnectedSystem {
 public:
  InterconnectedSystem(std::vector<SubsystemModel> subs, InterconnectionMatrix coupling)
      : subs_(std::move(subs)), M_(std::move(coupling.M)) {
    if (subs_.empty()) throw StructuralError("interconnection of zero subsystems");
    int y2_total = 0, w_total = 0;
    for (const auto& s : subs_) {
      state_offset_.push_back(state_total_);
      input_offset_.push_back(input_total_);
      internal_offset_.push_back(w_total);
      y2_offset_.push_back(y2_total);
      state_total_ += s.state_dim();
      input_total_ += s.input_dim();
      w_total += s.internal_dim();
      y2_total += s.y2_dim();
    }
    internal_total_ = w_total;
    y2_total_ = y2_total;
    if (M_.rows() != internal_total_ || M_.cols() != y2_total_)
      throw DomainError("coupling matrix is " + std::to_string(M_.rows()) + "x" +
                        std::to_string(M_.cols()) + ", expected " + std::to_string(internal_total_) +
                        "x" + std::to_string(y2_total_));
    check_well_posed();
  }

  int subsystem_count() const { return static_cast<int>(subs_.size()); }
  const SubsystemModel& subsystem(int i) const { return subs_[static_cast<size_t>(i)]; }
  const Eigen::MatrixXd& coupling() const { return M_; }
  int state_dim() const { return state_total_; }
  int input_dim() const { return input_total_; }

  Eigen::VectorXd state_block(const Eigen::VectorXd& x, int i) const {
    return x.segment(state_offset_[static_cast<size_t>(i)], subs_[static_cast<size_t>(i)].state_dim());
  }
  Eigen::VectorXd input_block(const Eigen::VectorXd& u, int i) const {
    return u.segment(input_offset_[static_cast<size_t>(i)], subs_[static_cast<size_t>(i)].input_dim());
  }

  Eigen::VectorXd stacked_h2(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y(y2_total_);
    for (int i = 0; i < subsystem_count(); ++i)
      y.segment(y2_offset_[static_cast<size_t>(i)], subs_[static_cast<size_t>(i)].y2_dim()) =
          subs_[static_cast<size_t>(i)].h2_of(state_block(x, i));
    return y;
  }

  Eigen::VectorXd internal_inputs(const Eigen::VectorXd& x) const { return M_ * stacked_h2(x); }

  Eigen::VectorXd internal_block(const Eigen::VectorXd& w, int i) const {
    return w.segment(internal_offset_[static_cast<size_t>(i)], subs_[static_cast<size_t>(i)].internal_dim());
  }

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    Eigen::VectorXd w = internal_inputs(x);
    Eigen::VectorXd next(state_total_);
    for (int i = 0; i < subsystem_count(); ++i) {
      next.segment(state_offset_[static_cast<size_t>(i)], subs_[static_cast<size_t>(i)].state_dim()) =
          subs_[static_cast<size_t>(i)].step(state_block(x, i), input_block(u, i), internal_block(w, i));
    }
    return next;
  }

  Eigen::VectorXd output(const Eigen::VectorXd& x) const {
    int q = 0;
    for (const auto& s : subs_) q += s.y1_dim();
    Eigen::VectorXd y(q);
    int off = 0;
    for (int i = 0; i < subsystem_count(); ++i) {
      y.segment(off, subs_[static_cast<size_t>(i)].y1_dim()) =
          subs_[static_cast<size_t>(i)].h1_of(state_block(x, i));
      off += subs_[static_cast<size_t>(i)].y1_dim();
    }
    return y;
  }

 private:
  void check_well_posed() const {
    /* exact for linear h2 on boxes: per-coordinate interval of the stacked
     * output, then of its image under M, compared against the internal
     * boxes (hulls are used for union-shaped sets, which is conservative) */
    std::vector<Interval> y2(static_cast<size_t>(y2_total_));
    for (int i = 0; i < subsystem_count(); ++i) {
      const auto& s = subs_[static_cast<size_t>(i)];
      auto img = linear_image_intervals(s.h2(), s.state_set().hull());
      for (int r = 0; r < s.y2_dim(); ++r) y2[static_cast<size_t>(y2_offset_[static_cast<size_t>(i)] + r)] = img[static_cast<size_t>(r)];
    }
    Box y2box;
    y2box.axes = y2;
    auto w_img = linear_image_intervals(M_, y2box);
    double worst = 0.0;
    int worst_coord = -1;
    for (int i = 0; i < subsystem_count(); ++i) {
      const auto& wb = subs_[static_cast<size_t>(i)].internal_box();
      for (int r = 0; r < subs_[static_cast<size_t>(i)].internal_dim(); ++r) {
        const auto& iv = w_img[static_cast<size_t>(internal_offset_[static_cast<size_t>(i)] + r)];
        double over = std::max(wb.axes[static_cast<size_t>(r)].lo - iv.lo, iv.hi - wb.axes[static_cast<size_t>(r)].hi);
        if (over > worst) {
          worst = over;
          worst_coord = internal_offset_[static_cast<size_t>(i)] + r;
        }
      }
    }
    if (worst > 1e-12)
      throw InterconnectionError("coupling image leaves the internal input boxes (coordinate " +
                                 std::to_string(worst_coord) + " overshoots by " + fmt_double(worst) + ")");
  }

  std::vector<SubsystemModel> subs_;
  Eigen::MatrixXd M_;
  std::vector<int> state_offset_, input_offset_, internal_offset_, y2_offset_;
  int state_total_ = 0, input_total_ = 0, internal_total_ = 0, y2_total_ = 0;
};

/* e^M: symmetric input goes through the eigendecomposition (exact for the
 * graph-Laplacian class), anything else through scaling-and-squaring */
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& M) {
  double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    return es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() *
           es.eigenvectors().transpose();
  }
  return M.exp();
}

/* the consensus-style benchmark network: N scalar blocks
 *   x_i+ = x_i + w_i + u_i,  y1i = y2i = x_i
 * coupled by M = e^{-L tau} - I for the Laplacian L of an undirected graph */
struct LaplacianNetwork {
  std::vector<SubsystemModel> subs;
  Eigen::MatrixXd L;
  Eigen::MatrixXd A;  // e^{-L tau}
  Eigen::MatrixXd M;  // A - I
  double tau = 0.0;
  double lambda_fb = 0.0;
  std::vector<Eigen::MatrixXd> supply_rates;  // per-subsystem quadratic supply matrices
};

inline LaplacianNetwork build_laplacian_network(int N, const std::vector<std::pair<int, int>>& edges,
                                                double tau, double lambda_fb,
                                                Interval state_range = {0.0, 1.0},
                                                Interval input_range = {0.0, 0.1}) {
  if (N < 1) throw DomainError("need at least one subsystem");
  if (!(tau > 0.0)) throw DomainError("tau must be positive");
  if (!(lambda_fb > 0.0 && lambda_fb <= 0.5))
    throw DomainError("feedback gain must lie in (0, 0.5], got " + fmt_double(lambda_fb));

  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(N, N);
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= N || j >= N || i == j)
      throw DomainError("edge (" + std::to_string(i) + "," + std::to_string(j) + ") is invalid");
    if (L(i, j) != 0.0) continue;  // undirected simple graph: ignore duplicates
    L(i, j) = L(j, i) = -1.0;
    L(i, i) += 1.0;
    L(j, j) += 1.0;
  }

  LaplacianNetwork net;
  net.L = L;
  net.A = matrix_exponential(-tau * L);
  net.M = net.A - Eigen::MatrixXd::Identity(N, N);
  net.tau = tau;
  net.lambda_fb = lambda_fb;

  /* exact coupling image per coordinate fixes the internal input boxes */
  Box stacked(std::vector<Interval>(static_cast<size_t>(N), state_range));
  auto w_iv = linear_image_intervals(net.M, stacked);

  for (int i = 0; i < N; ++i) {
    Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
    Box state(std::vector<Interval>{state_range});
    Box input(std::vector<Interval>{input_range});
    Box internal(std::vector<Interval>{w_iv[static_cast<size_t>(i)]});
    net.subs.push_back(SubsystemModel::make_linear(one, one, one, BoxUnion(state), input, internal));
    Eigen::MatrixXd X(2, 2);
    X << 1.0, 1.0 - lambda_fb, 1.0 - lambda_fb, 0.0;
    net.supply_rates.push_back(X);
  }
  return net;
}

}  // namespace dissim

#endif  // DISSIM_SYSTEM_HPP_
