#ifndef DISSIM_GEOMETRY_HPP_
#define DISSIM_GEOMETRY_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <vector>

#include "dissim/errors.hpp"
#include "dissim/util.hpp"

namespace dissim {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/* axis-aligned box with finite bounds, lo < hi per axis (zero-width axes are
 * tolerated where a degenerate set is meaningful, e.g. gamma derivation) */
struct Box {
  std::vector<Interval> axes;

  Box() = default;
  explicit Box(std::vector<Interval> a) : axes(std::move(a)) { validate(); }

  static Box from_bounds(const std::vector<double>& lo, const std::vector<double>& hi) {
    if (lo.size() != hi.size()) throw DomainError("box bounds dimension mismatch");
    std::vector<Interval> a(lo.size());
    for (size_t i = 0; i < lo.size(); ++i) a[i] = {lo[i], hi[i]};
    return Box(std::move(a));
  }

  void validate() const {
    for (size_t i = 0; i < axes.size(); ++i) {
      if (!std::isfinite(axes[i].lo) || !std::isfinite(axes[i].hi))
        throw DomainError("box bounds must be finite");
      if (axes[i].lo > axes[i].hi)
        throw DomainError("box axis " + std::to_string(i) + " has lo > hi");
    }
  }

  int dim() const { return static_cast<int>(axes.size()); }

  bool contains(const Eigen::VectorXd& x, double slack = 1e-12) const {
    if (x.size() != dim()) return false;
    for (int i = 0; i < dim(); ++i)
      if (x[i] < axes[i].lo - slack || x[i] > axes[i].hi + slack) return false;
    return true;
  }

  /* first axis whose bound is violated, -1 if none */
  int violated_axis(const Eigen::VectorXd& x, double slack = 1e-12) const {
    for (int i = 0; i < dim(); ++i)
      if (x[i] < axes[i].lo - slack || x[i] > axes[i].hi + slack) return i;
    return -1;
  }

  double min_edge() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& ax : axes) m = std::min(m, ax.width());
    return m;
  }

  /* largest axis width (diameter in the infinity norm) */
  double diameter_inf() const {
    double m = 0.0;
    for (const auto& ax : axes) m = std::max(m, ax.width());
    return m;
  }

  Eigen::VectorXd lower() const {
    Eigen::VectorXd v(dim());
    for (int i = 0; i < dim(); ++i) v[i] = axes[i].lo;
    return v;
  }
  Eigen::VectorXd upper() const {
    Eigen::VectorXd v(dim());
    for (int i = 0; i < dim(); ++i) v[i] = axes[i].hi;
    return v;
  }

  Eigen::VectorXd corner(unsigned mask) const {
    Eigen::VectorXd v(dim());
    for (int i = 0; i < dim(); ++i) v[i] = (mask >> i) & 1u ? axes[i].hi : axes[i].lo;
    return v;
  }

  Box hull_with(const Box& other) const {
    if (other.dim() != dim()) throw DomainError("hull of boxes with different dimensions");
    Box out = *this;
    for (int i = 0; i < dim(); ++i) {
      out.axes[i].lo = std::min(out.axes[i].lo, other.axes[i].lo);
      out.axes[i].hi = std::max(out.axes[i].hi, other.axes[i].hi);
    }
    return out;
  }
};

inline Box make_box(std::initializer_list<Interval> axes) {
  return Box(std::vector<Interval>(axes));
}

/* finite union of boxes of a common dimension; single-box unions are the
 * common case */
struct BoxUnion {
  std::vector<Box> parts;

  BoxUnion() = default;
  BoxUnion(Box b) { parts.push_back(std::move(b)); }  // NOLINT: implicit by design
  explicit BoxUnion(std::vector<Box> p) : parts(std::move(p)) {
    if (parts.empty()) throw DomainError("box union must have at least one part");
    for (const auto& b : parts)
      if (b.dim() != parts.front().dim()) throw DomainError("box union parts disagree in dimension");
  }

  int dim() const { return parts.empty() ? 0 : parts.front().dim(); }

  bool contains(const Eigen::VectorXd& x, double slack = 1e-12) const {
    for (const auto& b : parts)
      if (b.contains(x, slack)) return true;
    return false;
  }

  /* span = min over parts of the smallest edge; the admissible upper bound
   * for a quantization pitch */
  double span() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : parts) m = std::min(m, b.min_edge());
    return m;
  }

  Box hull() const {
    Box h = parts.front();
    for (size_t i = 1; i < parts.size(); ++i) h = h.hull_with(parts[i]);
    return h;
  }
};

/* exact per-coordinate interval of { M x : x in box } (sign-split extremes;
 * exact because the map is linear and the domain a box) */
inline std::vector<Interval> linear_image_intervals(const Eigen::MatrixXd& M, const Box& box) {
  if (M.cols() != box.dim()) throw DomainError("linear image: dimension mismatch");
  std::vector<Interval> out(static_cast<size_t>(M.rows()));
  for (int r = 0; r < M.rows(); ++r) {
    double lo = 0.0, hi = 0.0;
    for (int c = 0; c < M.cols(); ++c) {
      double m = M(r, c);
      if (m >= 0.0) {
        lo += m * box.axes[c].lo;
        hi += m * box.axes[c].hi;
      } else {
        lo += m * box.axes[c].hi;
        hi += m * box.axes[c].lo;
      }
    }
    out[static_cast<size_t>(r)] = {lo, hi};
  }
  return out;
}

}  // namespace dissim

#endif  // DISSIM_GEOMETRY_HPP_
