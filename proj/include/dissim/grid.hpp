#ifndef DISSIM_GRID_HPP_
#define DISSIM_GRID_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dissim/geometry.hpp"

namespace dissim {

namespace detail {
struct IndexVecHash {
  size_t operator()(const std::vector<int64_t>& v) const {
    uint64_t h = 0x9e3779b97f4a7c15ull;
    for (int64_t k : v) h = splitmix64(h ^ static_cast<uint64_t>(k));
    return static_cast<size_t>(h);
  }
};
}  // namespace detail

/**
 * Integer-pitched grid: the points p with p_i = k_i * eta_i inside a box
 * union, plus any extension added later to keep transition maps total.
 * Points are ordered lexicographically by multi-index; the ordinal in that
 * order is the stable state index used by transition tables and dumps.
 */
class Grid {
 public:
  Grid() = default;

  int dim() const { return static_cast<int>(eta_.size()); }
  int size() const { return static_cast<int>(indices_.size()); }
  const Eigen::VectorXd& eta() const { return eta_; }

  const std::vector<int64_t>& index(int ordinal) const { return indices_[static_cast<size_t>(ordinal)]; }

  Eigen::VectorXd point(int ordinal) const {
    const auto& k = indices_[static_cast<size_t>(ordinal)];
    Eigen::VectorXd p(dim());
    for (int i = 0; i < dim(); ++i) p[i] = static_cast<double>(k[static_cast<size_t>(i)]) * eta_[i];
    return p;
  }

  int ordinal_of(const std::vector<int64_t>& k) const {
    auto it = lookup_.find(k);
    return it == lookup_.end() ? -1 : it->second;
  }

  bool is_core(int ordinal) const { return core_[static_cast<size_t>(ordinal)] != 0; }

  int core_size() const { return core_count_; }

  std::vector<int> core_ordinals() const {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(core_count_));
    for (int i = 0; i < size(); ++i)
      if (is_core(i)) out.push_back(i);
    return out;
  }

  /* hull of the quantization cells: point hull expanded by eta/2 per axis */
  Box covered_box() const {
    std::vector<Interval> axes(static_cast<size_t>(dim()));
    for (int i = 0; i < dim(); ++i) {
      axes[static_cast<size_t>(i)] = {static_cast<double>(kmin_[static_cast<size_t>(i)]) * eta_[i] - eta_[i] / 2.0,
                                      static_cast<double>(kmax_[static_cast<size_t>(i)]) * eta_[i] + eta_[i] / 2.0};
    }
    return Box(std::move(axes));
  }

  /* all grid points within eta/2 of y in every axis; ties at exactly eta/2
   * are members (non-strict comparison, the rule the brute-force oracle must
   * reproduce bit for bit) */
  std::vector<int> ball_query(const Eigen::VectorXd& y) const {
    std::vector<std::vector<int64_t>> per_axis(static_cast<size_t>(dim()));
    for (int i = 0; i < dim(); ++i) {
      double h = eta_[i] / 2.0;
      int64_t lo = static_cast<int64_t>(std::floor((y[i] - h) / eta_[i])) - 1;
      int64_t hi = static_cast<int64_t>(std::ceil((y[i] + h) / eta_[i])) + 1;
      for (int64_t k = lo; k <= hi; ++k)
        if (std::abs(static_cast<double>(k) * eta_[i] - y[i]) <= h) per_axis[static_cast<size_t>(i)].push_back(k);
    }
    std::vector<int> out;
    std::vector<int64_t> k(static_cast<size_t>(dim()));
    enumerate_product(per_axis, 0, k, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  /* add the full rectangular index range covering `target` (every point of
   * target ends up within eta/2 of a grid point); returns how many points
   * were added. Never removes existing points. Edge indices are chosen with
   * the exact comparison ball_query uses, so covering and membership agree
   * bit for bit. */
  int extend_to_cover(const Box& target) {
    if (target.dim() != dim()) throw DomainError("extension target dimension mismatch");
    std::vector<int64_t> lo(static_cast<size_t>(dim())), hi(static_cast<size_t>(dim()));
    for (int i = 0; i < dim(); ++i) {
      double h = eta_[i] / 2.0;
      auto covers = [&](int64_t k, double y) {
        return std::abs(static_cast<double>(k) * eta_[i] - y) <= h;
      };
      double tlo = target.axes[static_cast<size_t>(i)].lo;
      double thi = target.axes[static_cast<size_t>(i)].hi;
      int64_t guess_lo = static_cast<int64_t>(std::floor(tlo / eta_[i]));
      int64_t need_lo = guess_lo - 1;  // over-extension is harmless, gaps are not
      for (int64_t k = guess_lo - 2; k <= guess_lo + 2; ++k)
        if (covers(k, tlo)) {
          need_lo = k;
          break;
        }
      int64_t guess_hi = static_cast<int64_t>(std::ceil(thi / eta_[i]));
      int64_t need_hi = guess_hi + 1;
      for (int64_t k = guess_hi + 2; k >= guess_hi - 2; --k)
        if (covers(k, thi)) {
          need_hi = k;
          break;
        }
      lo[static_cast<size_t>(i)] = std::min(need_lo, kmin_[static_cast<size_t>(i)]);
      hi[static_cast<size_t>(i)] = std::max(need_hi, kmax_[static_cast<size_t>(i)]);
    }
    int added = 0;
    std::vector<int64_t> k(lo);
    while (true) {
      if (lookup_.find(k) == lookup_.end()) {
        pending_.push_back(k);
        ++added;
      }
      int ax = dim() - 1;
      while (ax >= 0) {
        if (++k[static_cast<size_t>(ax)] <= hi[static_cast<size_t>(ax)]) break;
        k[static_cast<size_t>(ax)] = lo[static_cast<size_t>(ax)];
        --ax;
      }
      if (ax < 0) break;
    }
    if (added > 0) {
      for (auto& nk : pending_) indices_.push_back(std::move(nk));
      pending_.clear();
      rebuild(false);
    }
    return added;
  }

  static Grid quantize(const BoxUnion& set, const Eigen::VectorXd& eta);
  static Grid quantize(const BoxUnion& set, double eta) {
    return quantize(set, Eigen::VectorXd::Constant(set.dim(), eta));
  }

  /* reconstruction path for dump/load round-trips */
  static Grid from_indices(const Eigen::VectorXd& eta, std::vector<std::vector<int64_t>> indices,
                           const std::vector<char>& core_flags) {
    if (indices.empty()) throw StructuralError("grid with no points");
    if (indices.size() != core_flags.size()) throw StructuralError("core flag count mismatch");
    Grid g;
    g.eta_ = eta;
    for (size_t i = 0; i < indices.size(); ++i)
      if (core_flags[i]) g.core_keys_.insert({indices[i], 1});
    g.indices_ = std::move(indices);
    g.rebuild(false);
    return g;
  }

 private:
  void enumerate_product(const std::vector<std::vector<int64_t>>& per_axis, int ax,
                         std::vector<int64_t>& k, std::vector<int>& out) const {
    if (ax == dim()) {
      int o = ordinal_of(k);
      if (o >= 0) out.push_back(o);
      return;
    }
    for (int64_t v : per_axis[static_cast<size_t>(ax)]) {
      k[static_cast<size_t>(ax)] = v;
      enumerate_product(per_axis, ax + 1, k, out);
    }
  }

  /* re-sort, re-key; ordinals change when points are added, so extension is
   * done before any table refers to ordinals */
  void rebuild(bool all_core) {
    std::sort(indices_.begin(), indices_.end());
    indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
    lookup_.clear();
    lookup_.reserve(indices_.size() * 2);
    core_.assign(indices_.size(), 0);
    core_count_ = 0;
    kmin_.assign(static_cast<size_t>(dim()), std::numeric_limits<int64_t>::max());
    kmax_.assign(static_cast<size_t>(dim()), std::numeric_limits<int64_t>::min());
    for (size_t i = 0; i < indices_.size(); ++i) {
      lookup_[indices_[i]] = static_cast<int>(i);
      bool core = all_core || core_keys_.count(indices_[i]) > 0;
      core_[i] = core ? 1 : 0;
      if (core) ++core_count_;
      for (int a = 0; a < dim(); ++a) {
        kmin_[static_cast<size_t>(a)] = std::min(kmin_[static_cast<size_t>(a)], indices_[i][static_cast<size_t>(a)]);
        kmax_[static_cast<size_t>(a)] = std::max(kmax_[static_cast<size_t>(a)], indices_[i][static_cast<size_t>(a)]);
      }
    }
    if (all_core)
      for (const auto& k : indices_) core_keys_.emplace(k, 1);
  }

  Eigen::VectorXd eta_;
  std::vector<std::vector<int64_t>> indices_;  // sorted lexicographically
  std::unordered_map<std::vector<int64_t>, int, detail::IndexVecHash> lookup_;
  std::vector<char> core_;
  std::unordered_map<std::vector<int64_t>, char, detail::IndexVecHash> core_keys_;
  int core_count_ = 0;
  std::vector<int64_t> kmin_, kmax_;
  std::vector<std::vector<int64_t>> pending_;
};

inline Grid Grid::quantize(const BoxUnion& set, const Eigen::VectorXd& eta) {
  if (eta.size() != set.dim()) throw QuantizationError("eta dimension mismatch");
  for (int i = 0; i < eta.size(); ++i)
    if (!(eta[i] > 0.0)) throw QuantizationError("eta must be positive");
  double span = set.span();
  if (eta.maxCoeff() > span)
    throw QuantizationError("eta " + fmt_double(eta.maxCoeff()) + " exceeds span " + fmt_double(span));

  Grid g;
  g.eta_ = eta;
  for (const Box& part : set.parts) {
    std::vector<int64_t> lo(static_cast<size_t>(set.dim())), hi(static_cast<size_t>(set.dim()));
    for (int i = 0; i < set.dim(); ++i) {
      double fuzz = 1e-9;
      lo[static_cast<size_t>(i)] = static_cast<int64_t>(std::ceil(part.axes[static_cast<size_t>(i)].lo / eta[i] - fuzz));
      hi[static_cast<size_t>(i)] = static_cast<int64_t>(std::floor(part.axes[static_cast<size_t>(i)].hi / eta[i] + fuzz));
      if (lo[static_cast<size_t>(i)] > hi[static_cast<size_t>(i)])
        throw QuantizationError("no grid point on axis " + std::to_string(i) +
                                " (eta too large for this part)");
    }
    std::vector<int64_t> k(lo);
    while (true) {
      g.indices_.push_back(k);
      int ax = set.dim() - 1;
      while (ax >= 0) {
        if (++k[static_cast<size_t>(ax)] <= hi[static_cast<size_t>(ax)]) break;
        k[static_cast<size_t>(ax)] = lo[static_cast<size_t>(ax)];
        --ax;
      }
      if (ax < 0) break;
    }
  }
  if (g.indices_.empty()) throw QuantizationError("quantization produced an empty grid");
  g.rebuild(true);
  return g;
}

}  // namespace dissim

#endif  // DISSIM_GRID_HPP_
