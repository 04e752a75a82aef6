#ifndef DISSIM_ABSTRACTION_HPP_
#define DISSIM_ABSTRACTION_HPP_

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dissim/certificates.hpp"
#include "dissim/grid.hpp"
#include "dissim/parallel.hpp"

namespace dissim {

/**
 * Finite point set with per-coordinate value lists; members are the product
 * of the coordinate sets, addressed by a flat index (last coordinate
 * fastest). Internal input sets are stored this way, which keeps nearest-
 * member snapping exact per coordinate.
 */
class FiniteSet {
 public:
  FiniteSet() = default;
  explicit FiniteSet(std::vector<std::vector<double>> coords) : coords_(std::move(coords)) {
    total_ = coords_.empty() ? 0 : 1;
    for (auto& c : coords_) {
      if (c.empty()) throw DomainError("finite set with an empty coordinate");
      std::sort(c.begin(), c.end());
      total_ *= static_cast<long>(c.size());
    }
  }

  static FiniteSet singleton_zero(int dim) {
    return FiniteSet(std::vector<std::vector<double>>(static_cast<size_t>(dim), {0.0}));
  }

  int dim() const { return static_cast<int>(coords_.size()); }
  long size() const { return total_; }
  const std::vector<double>& coordinate_values(int i) const { return coords_[static_cast<size_t>(i)]; }

  Eigen::VectorXd point(long flat) const {
    Eigen::VectorXd p(dim());
    for (int i = dim() - 1; i >= 0; --i) {
      long n = static_cast<long>(coords_[static_cast<size_t>(i)].size());
      p[i] = coords_[static_cast<size_t>(i)][static_cast<size_t>(flat % n)];
      flat /= n;
    }
    return p;
  }

  struct Nearest {
    long flat = 0;
    double deviation = 0.0;  // infinity-norm distance to the chosen member
  };

  Nearest nearest(const Eigen::VectorXd& v) const {
    Nearest out;
    long flat = 0;
    for (int i = 0; i < dim(); ++i) {
      const auto& c = coords_[static_cast<size_t>(i)];
      auto it = std::lower_bound(c.begin(), c.end(), v[i]);
      size_t j = static_cast<size_t>(it - c.begin());
      if (j == c.size()) j = c.size() - 1;
      else if (j > 0 && v[i] - c[j - 1] <= c[j] - v[i]) j = j - 1;  // ties -> lower member
      out.deviation = std::max(out.deviation, std::abs(c[j] - v[i]));
      flat = flat * static_cast<long>(c.size()) + static_cast<long>(j);
    }
    out.flat = flat;
    return out;
  }

  bool contains(const Eigen::VectorXd& v, double tol) const {
    return nearest(v).deviation <= tol;
  }

 private:
  std::vector<std::vector<double>> coords_;
  long total_ = 0;
};

struct InternalSetOptions {
  double dedup_tol = 1e-12;
  long cap = 1000000;  // per coordinate
};

/*
 * Finite internal input sets from the coupling recipe: coordinate r of the
 * stacked internal input ranges over the exact value set of
 * sum_c Mhat(r,c) * (stacked internal-output coordinate c), accumulated as
 * a Minkowski sum with deduplication. Coordinates of one subsystem produced
 * by non-diagonal output rows are treated independently, which yields a
 * superset of the joint projection (the cover check uses the same
 * decomposition, so the pair stays consistent). Values come from the
 * original-quantization (core) states.
 */
inline std::vector<FiniteSet> build_internal_input_sets(const Eigen::MatrixXd& Mhat,
                                                        const std::vector<Grid>& state_grids,
                                                        const std::vector<Eigen::MatrixXd>& h2,
                                                        const std::vector<int>& internal_dims,
                                                        InternalSetOptions opt = {}) {
  if (state_grids.size() != h2.size()) throw DomainError("grids and output maps disagree");
  /* stacked output coordinate values over core grid points */
  std::vector<std::vector<double>> coord_vals;
  for (size_t j = 0; j < state_grids.size(); ++j) {
    const Grid& g = state_grids[j];
    const Eigen::MatrixXd& C = h2[j];
    if (C.cols() != g.dim()) throw DomainError("output map does not match grid dimension");
    for (int r = 0; r < C.rows(); ++r) {
      std::vector<double> vals;
      vals.reserve(static_cast<size_t>(g.core_size()));
      for (int o = 0; o < g.size(); ++o) {
        if (!g.is_core(o)) continue;
        vals.push_back(C.row(r).dot(g.point(o)));
      }
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end(),
                             [&](double a, double b) { return std::abs(a - b) <= opt.dedup_tol; }),
                 vals.end());
      coord_vals.push_back(std::move(vals));
    }
  }
  if (Mhat.cols() != static_cast<int>(coord_vals.size()))
    throw DomainError("coupling matrix columns do not match stacked output dimension");

  int total_internal = 0;
  for (int d : internal_dims) total_internal += d;
  if (Mhat.rows() != total_internal)
    throw DomainError("coupling matrix rows do not match stacked internal dimension");

  std::vector<std::vector<double>> per_row(static_cast<size_t>(Mhat.rows()));
  for (int r = 0; r < Mhat.rows(); ++r) {
    std::vector<double> acc{0.0};
    for (int c = 0; c < Mhat.cols(); ++c) {
      double m = Mhat(r, c);
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
        throw CapacityError("internal input set for coordinate " + std::to_string(r) + " exceeds " +
                            std::to_string(opt.cap) + " points; use a coarser state quantization");
      acc = std::move(next);
    }
    per_row[static_cast<size_t>(r)] = std::move(acc);
  }

  std::vector<FiniteSet> out;
  int off = 0;
  for (int d : internal_dims) {
    std::vector<std::vector<double>> coords(per_row.begin() + off, per_row.begin() + off + d);
    out.emplace_back(std::move(coords));
    off += d;
  }
  return out;
}

/**
 * Finite abstraction of one subsystem under the interface u = H(x) + u_hat:
 * states are the quantized state set (plus whatever extension keeps the
 * transition map total), inputs the quantized input set, internal inputs an
 * explicit finite set, and
 *
 *   s' in post(s, u, w)  iff  | point(s') - f(point(s), H+u, w) |_inf <= eta/2.
 *
 * Output maps are inherited: h1 the identity on grid points, h2 the
 * concrete internal output map restricted to the grid.
 */
struct FiniteAbstraction {
  Grid state_grid;
  Grid input_grid;
  FiniteSet internal_inputs;
  Eigen::MatrixXd h1, h2;
  Eigen::VectorXd eta, mu1;
  std::vector<std::vector<int32_t>> table;  // (s * U + u) * W + w -> successor ordinals

  int state_count() const { return state_grid.size(); }
  int input_count() const { return input_grid.size(); }
  long internal_count() const { return internal_inputs.size(); }
  long triple_count() const {
    return static_cast<long>(state_count()) * input_count() * internal_count();
  }

  const std::vector<int32_t>& successors(int s, int u, long w) const {
    return table[static_cast<size_t>((static_cast<long>(s) * input_count() + u) * internal_count() + w)];
  }

  Eigen::VectorXd state_point(int s) const { return state_grid.point(s); }
  Eigen::VectorXd input_point(int u) const { return input_grid.point(u); }
  Eigen::VectorXd internal_point(long w) const { return internal_inputs.point(w); }
  Eigen::VectorXd h1_of(int s) const { return h1 * state_point(s); }
  Eigen::VectorXd h2_of(int s) const { return h2 * state_point(s); }
};

struct AbstractionOptions {
  int max_extension_rounds = 64;
  long max_states = 2000000;
  long max_triples = 50000000;
  unsigned threads = 1;
};

inline FiniteAbstraction build_abstraction(const SubsystemModel& sub,
                                           const PassivityCertificate& interface_cert,
                                           const Eigen::VectorXd& eta, const Eigen::VectorXd& mu1,
                                           FiniteSet internal_inputs, AbstractionOptions opt = {}) {
  if (internal_inputs.size() <= 0) throw DomainError("internal input set must be nonempty");
  if (internal_inputs.dim() != sub.internal_dim())
    throw DomainError("internal input set dimension mismatch");

  FiniteAbstraction abs;
  abs.eta = eta;
  abs.mu1 = mu1;
  abs.state_grid = Grid::quantize(sub.state_set(), eta);
  abs.input_grid = Grid::quantize(BoxUnion(sub.input_box()), mu1);
  abs.internal_inputs = std::move(internal_inputs);
  abs.h1 = sub.h1();
  abs.h2 = sub.h2();

  auto image = [&](int s, int u, long w) {
    Eigen::VectorXd x = abs.state_grid.point(s);
    return sub.eval(x, interface_cert.feedback(x) + abs.input_grid.point(u),
                    abs.internal_inputs.point(w));
  };

  if (static_cast<long>(abs.state_grid.size()) * abs.input_grid.size() *
          abs.internal_inputs.size() >
      opt.max_triples)
    throw CapacityError("abstraction exceeds the transition cap of " +
                        std::to_string(opt.max_triples) + " before extension");

  /* grow the grid until every one-step image is within eta/2 of a state;
   * newly added states are sources too, so iterate to a fixed point (the
   * interfaced loop must be contractive for this to terminate) */
  for (int round = 0;; ++round) {
    if (round >= opt.max_extension_rounds)
      throw CapacityError("grid extension did not stabilize after " +
                          std::to_string(opt.max_extension_rounds) +
                          " rounds; the interfaced closed loop does not contract into a bounded set");
    Eigen::VectorXd lo, hi;
    for (int s = 0; s < abs.state_grid.size(); ++s)
      for (int u = 0; u < abs.input_grid.size(); ++u)
        for (long w = 0; w < abs.internal_inputs.size(); ++w) {
          Eigen::VectorXd y = image(s, u, w);
          if (lo.size() == 0) {
            lo = y;
            hi = y;
          } else {
            lo = lo.cwiseMin(y);
            hi = hi.cwiseMax(y);
          }
        }
    std::vector<Interval> axes(static_cast<size_t>(lo.size()));
    for (int i = 0; i < lo.size(); ++i) axes[static_cast<size_t>(i)] = {lo[i], hi[i]};
    int added = abs.state_grid.extend_to_cover(Box(std::move(axes)));
    if (abs.state_grid.size() > opt.max_states)
      throw CapacityError("abstraction exceeds the state cap of " + std::to_string(opt.max_states));
    if (added == 0) break;
  }

  if (abs.triple_count() > opt.max_triples)
    throw CapacityError("abstraction exceeds the transition cap of " + std::to_string(opt.max_triples));

  const long per_state = static_cast<long>(abs.input_count()) * abs.internal_count();
  abs.table.assign(static_cast<size_t>(abs.triple_count()), {});
  parallel_for(static_cast<size_t>(abs.state_count()), opt.threads, [&](size_t si) {
    int s = static_cast<int>(si);
    for (int u = 0; u < abs.input_count(); ++u)
      for (long w = 0; w < abs.internal_count(); ++w) {
        Eigen::VectorXd y = image(s, u, w);
        std::vector<int> succ = abs.state_grid.ball_query(y);
        auto& cell = abs.table[static_cast<size_t>(s * per_state + u * abs.internal_count() + w)];
        cell.assign(succ.begin(), succ.end());
      }
  });
  for (const auto& cell : abs.table)
    if (cell.empty()) throw StructuralError("uncovered image after extension (internal error)");
  return abs;
}

struct NonBlockingReport {
  long scanned = 0;
  std::vector<std::array<long, 3>> blocking;  // (s, u, w) triples with no successor

  bool clean() const { return blocking.empty(); }
};

inline NonBlockingReport check_nonblocking(const FiniteAbstraction& abs) {
  if (abs.state_count() == 0 || abs.input_count() == 0 || abs.internal_count() == 0)
    throw StructuralError("degenerate abstraction (no states, inputs, or internal inputs)");
  NonBlockingReport rep;
  for (int s = 0; s < abs.state_count(); ++s)
    for (int u = 0; u < abs.input_count(); ++u)
      for (long w = 0; w < abs.internal_count(); ++w) {
        ++rep.scanned;
        if (abs.successors(s, u, w).empty())
          rep.blocking.push_back({static_cast<long>(s), static_cast<long>(u), w});
      }
  return rep;
}

/* ---- dump format -------------------------------------------------------
 * Structured text, one abstraction per file; doubles are printed with 17
 * significant digits so load(dump(a)) reproduces a bit for bit.
 */

inline void dump_abstraction(const FiniteAbstraction& abs, std::ostream& os) {
  os << "abstraction-v1\n";
  os << "state_dim " << abs.state_grid.dim() << "\n";
  os << "eta";
  for (int i = 0; i < abs.eta.size(); ++i) os << " " << fmt_double(abs.eta[i]);
  os << "\n";
  os << "input_dim " << abs.input_grid.dim() << "\n";
  os << "mu1";
  for (int i = 0; i < abs.mu1.size(); ++i) os << " " << fmt_double(abs.mu1[i]);
  os << "\n";
  os << "states " << abs.state_count() << "\n";
  for (int s = 0; s < abs.state_count(); ++s) {
    os << "s";
    for (int64_t k : abs.state_grid.index(s)) os << " " << k;
    os << " " << (abs.state_grid.is_core(s) ? 1 : 0) << "\n";
  }
  os << "inputs " << abs.input_count() << "\n";
  for (int u = 0; u < abs.input_count(); ++u) {
    os << "u";
    for (int64_t k : abs.input_grid.index(u)) os << " " << k;
    os << "\n";
  }
  os << "internal_dim " << abs.internal_inputs.dim() << "\n";
  for (int i = 0; i < abs.internal_inputs.dim(); ++i) {
    const auto& vals = abs.internal_inputs.coordinate_values(i);
    os << "w " << vals.size();
    for (double v : vals) os << " " << fmt_double(v);
    os << "\n";
  }
  auto dump_matrix = [&os](const char* name, const Eigen::MatrixXd& M) {
    os << name << " " << M.rows() << " " << M.cols();
    for (int r = 0; r < M.rows(); ++r)
      for (int c = 0; c < M.cols(); ++c) os << " " << fmt_double(M(r, c));
    os << "\n";
  };
  dump_matrix("h1", abs.h1);
  dump_matrix("h2", abs.h2);
  os << "transitions " << abs.triple_count() << "\n";
  for (int s = 0; s < abs.state_count(); ++s)
    for (int u = 0; u < abs.input_count(); ++u)
      for (long w = 0; w < abs.internal_count(); ++w) {
        os << s << " " << u << " " << w << " ->";
        for (int32_t d : abs.successors(s, u, w)) os << " " << d;
        os << "\n";
      }
  os << "end\n";
}

inline std::string dump_abstraction(const FiniteAbstraction& abs) {
  std::ostringstream os;
  dump_abstraction(abs, os);
  return os.str();
}

inline FiniteAbstraction load_abstraction(std::istream& is) {
  auto fail = [](const std::string& what) -> void {
    throw SchemaError("abstraction dump: " + what);
  };
  std::string tok;
  auto expect = [&](const char* want) {
    if (!(is >> tok) || tok != want) fail("expected '" + std::string(want) + "'");
  };

  expect("abstraction-v1");
  FiniteAbstraction abs;
  expect("state_dim");
  int n = 0;
  is >> n;
  abs.eta.resize(n);
  expect("eta");
  for (int i = 0; i < n; ++i) is >> abs.eta[i];
  expect("input_dim");
  int m = 0;
  is >> m;
  abs.mu1.resize(m);
  expect("mu1");
  for (int i = 0; i < m; ++i) is >> abs.mu1[i];

  expect("states");
  int ns = 0;
  is >> ns;
  std::vector<std::vector<int64_t>> sk(static_cast<size_t>(ns), std::vector<int64_t>(static_cast<size_t>(n)));
  std::vector<char> score(static_cast<size_t>(ns));
  for (int s = 0; s < ns; ++s) {
    expect("s");
    for (int i = 0; i < n; ++i) is >> sk[static_cast<size_t>(s)][static_cast<size_t>(i)];
    int c = 0;
    is >> c;
    score[static_cast<size_t>(s)] = static_cast<char>(c);
  }
  abs.state_grid = Grid::from_indices(abs.eta, std::move(sk), score);

  expect("inputs");
  int nu = 0;
  is >> nu;
  std::vector<std::vector<int64_t>> uk(static_cast<size_t>(nu), std::vector<int64_t>(static_cast<size_t>(m)));
  for (int u = 0; u < nu; ++u) {
    expect("u");
    for (int i = 0; i < m; ++i) is >> uk[static_cast<size_t>(u)][static_cast<size_t>(i)];
  }
  abs.input_grid = Grid::from_indices(abs.mu1, std::move(uk), std::vector<char>(static_cast<size_t>(nu), 1));

  expect("internal_dim");
  int p = 0;
  is >> p;
  std::vector<std::vector<double>> coords(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) {
    expect("w");
    size_t cnt = 0;
    is >> cnt;
    coords[static_cast<size_t>(i)].resize(cnt);
    for (size_t j = 0; j < cnt; ++j) is >> coords[static_cast<size_t>(i)][j];
  }
  abs.internal_inputs = FiniteSet(std::move(coords));

  auto load_matrix = [&](const char* name) {
    expect(name);
    int r = 0, c = 0;
    is >> r >> c;
    Eigen::MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) is >> M(i, j);
    return M;
  };
  abs.h1 = load_matrix("h1");
  abs.h2 = load_matrix("h2");

  expect("transitions");
  long nt = 0;
  is >> nt;
  if (nt != static_cast<long>(ns) * nu * abs.internal_inputs.size()) fail("transition count mismatch");
  abs.table.assign(static_cast<size_t>(nt), {});
  std::string line;
  std::getline(is, line);  // finish the count line
  for (long t = 0; t < nt; ++t) {
    if (!std::getline(is, line)) fail("truncated transition section");
    std::istringstream ls(line);
    long s = 0, u = 0, w = 0;
    std::string arrow;
    ls >> s >> u >> w >> arrow;
    if (arrow != "->") fail("malformed transition line");
    auto& cell = abs.table[static_cast<size_t>((s * nu + u) * abs.internal_inputs.size() + w)];
    int32_t d = 0;
    while (ls >> d) cell.push_back(d);
  }
  expect("end");
  return abs;
}

inline FiniteAbstraction load_abstraction(const std::string& text) {
  std::istringstream is(text);
  return load_abstraction(is);
}

}  // namespace dissim

#endif  // DISSIM_ABSTRACTION_HPP_
