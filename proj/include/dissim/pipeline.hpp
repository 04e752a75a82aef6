#ifndef DISSIM_PIPELINE_HPP_
#define DISSIM_PIPELINE_HPP_

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dissim/composition.hpp"
#include "dissim/refinement.hpp"
#include "dissim/storage_check.hpp"
#include "dissim/system.hpp"

namespace dissim {

struct SubsystemSpec {
  std::string preset = "integrator";  // "integrator" (x+ = x + w + u) or "linear"
  int dims = 1;
  std::vector<Interval> state_box;  // per axis
  std::vector<Interval> input_box;
  Eigen::MatrixXd A, B, D;  // "linear" preset only
  double eta = 0.1;
  double mu1 = 0.1;
  double lambda_fb = 0.5;
};

struct CouplingSpec {
  std::string preset;  // "laplacian" or "explicit"
  std::vector<std::pair<int, int>> edges;
  double tau = 0.0;
  Eigen::MatrixXd M, Mhat;
};

struct RunOptions {
  uint64_t seed = 1;
  long sample_budget = 10000;   // passivity verification samples
  long concrete_samples = 1000; // storage-check concrete states
  int w_samples = 5;            // sampled concrete internal inputs per state
  int trace_count = 100;
  int horizon = 100;
  double input_bound = -1.0;  // < 0: largest quantized input magnitude
  double psi_slope = 0.5;
  double delta = 0.05;
  double slack = 1e-9;
  double dedup_tol = 1e-12;
  bool relation_check = false;
  unsigned threads = 1;
};

struct NetworkSpec {
  std::vector<SubsystemSpec> subsystems;
  CouplingSpec coupling;
  Eigen::VectorXd weights;
  RunOptions run;
  std::vector<std::string> defaults_applied;  // echoed into the report
};

namespace detail {

inline std::vector<Interval> parse_box(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw SchemaError("'" + key + "' must be a nonempty array of [lo,hi] pairs");
  std::vector<Interval> out;
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
      throw SchemaError("'" + key + "' entries must be [lo, hi] number pairs");
    out.push_back({pair[0].get<double>(), pair[1].get<double>()});
  }
  return out;
}

inline Eigen::MatrixXd parse_matrix(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw SchemaError("'" + key + "' must be an array of rows");
  int rows = static_cast<int>(j.size());
  int cols = static_cast<int>(j[0].size());
  Eigen::MatrixXd M(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols) throw SchemaError("'" + key + "' rows have unequal lengths");
    for (int c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw SchemaError("'" + key + "' entries must be numbers");
      M(r, c) = j[r][c].get<double>();
    }
  }
  return M;
}

}  // namespace detail

inline NetworkSpec parse_network_spec(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("top level must be an object");
  NetworkSpec spec;
  auto note_default = [&](const std::string& what) { spec.defaults_applied.push_back(what); };

  if (!j.contains("subsystems")) throw SchemaError("missing required key 'subsystems'");
  if (!j["subsystems"].is_array() || j["subsystems"].empty())
    throw SchemaError("'subsystems' must be a nonempty array");

  int idx = 0;
  for (const auto& js : j["subsystems"]) {
    SubsystemSpec s;
    std::string at = "subsystems[" + std::to_string(idx) + "]";
    if (!js.is_object()) throw SchemaError(at + " must be an object");
    s.preset = js.value("preset", std::string("integrator"));
    if (!js.contains("preset")) note_default(at + ".preset=integrator");
    if (s.preset != "integrator" && s.preset != "linear")
      throw SchemaError(at + ".preset must be 'integrator' or 'linear'");
    s.dims = js.value("dims", 1);
    if (!js.contains("dims")) note_default(at + ".dims=1");
    if (s.dims < 1) throw SchemaError(at + ".dims must be >= 1");

    if (js.contains("state_box")) s.state_box = detail::parse_box(js["state_box"], at + ".state_box");
    else {
      s.state_box.assign(static_cast<size_t>(s.dims), {0.0, 1.0});
      note_default(at + ".state_box=[0,1]^dims");
    }
    if (js.contains("input_box")) s.input_box = detail::parse_box(js["input_box"], at + ".input_box");
    else {
      s.input_box.assign(static_cast<size_t>(s.dims), {0.0, 0.1});
      note_default(at + ".input_box=[0,0.1]^dims");
    }
    if (static_cast<int>(s.state_box.size()) != s.dims)
      throw SchemaError(at + ".state_box size disagrees with dims");

    s.eta = js.value("eta", 0.1);
    if (!js.contains("eta")) note_default(at + ".eta=0.1");
    s.mu1 = js.value("mu1", 0.1);
    if (!js.contains("mu1")) note_default(at + ".mu1=0.1");
    s.lambda_fb = js.value("lambda_fb", 0.5);
    if (!js.contains("lambda_fb")) note_default(at + ".lambda_fb=0.5");

    if (s.preset == "linear") {
      for (const char* key : {"A", "B", "D"})
        if (!js.contains(key)) throw SchemaError(at + " with preset 'linear' needs matrix '" + key + "'");
      s.A = detail::parse_matrix(js["A"], at + ".A");
      s.B = detail::parse_matrix(js["B"], at + ".B");
      s.D = detail::parse_matrix(js["D"], at + ".D");
    }

    /* span preconditions surface at parse time */
    double span = std::numeric_limits<double>::infinity();
    for (const auto& ax : s.state_box) span = std::min(span, ax.hi - ax.lo);
    if (s.eta > span)
      throw QuantizationError(at + ": eta " + fmt_double(s.eta) + " exceeds state-box span " +
                              fmt_double(span));
    double ispan = std::numeric_limits<double>::infinity();
    for (const auto& ax : s.input_box) ispan = std::min(ispan, ax.hi - ax.lo);
    if (s.mu1 > ispan)
      throw QuantizationError(at + ": mu1 " + fmt_double(s.mu1) + " exceeds input-box span " +
                              fmt_double(ispan));

    spec.subsystems.push_back(std::move(s));
    ++idx;
  }

  if (!j.contains("coupling")) throw SchemaError("missing required key 'coupling'");
  const auto& jc = j["coupling"];
  if (!jc.is_object()) throw SchemaError("'coupling' must be an object");
  spec.coupling.preset = jc.value("preset", std::string("explicit"));
  if (spec.coupling.preset == "laplacian") {
    if (!jc.contains("edges")) throw SchemaError("coupling preset 'laplacian' needs 'edges'");
    for (const auto& e : jc["edges"]) {
      if (!e.is_array() || e.size() != 2) throw SchemaError("'edges' entries must be [i, j] pairs");
      spec.coupling.edges.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    if (!jc.contains("tau")) throw SchemaError("coupling preset 'laplacian' needs 'tau'");
    spec.coupling.tau = jc["tau"].get<double>();
  } else if (spec.coupling.preset == "explicit") {
    if (!jc.contains("M")) throw SchemaError("coupling preset 'explicit' needs matrix 'M'");
    spec.coupling.M = detail::parse_matrix(jc["M"], "coupling.M");
    if (jc.contains("Mhat")) spec.coupling.Mhat = detail::parse_matrix(jc["Mhat"], "coupling.Mhat");
    else {
      spec.coupling.Mhat = spec.coupling.M;
      note_default("coupling.Mhat=M");
    }
  } else {
    throw SchemaError("coupling preset must be 'laplacian' or 'explicit'");
  }

  const int N = static_cast<int>(spec.subsystems.size());
  if (j.contains("weights")) {
    const auto& jw = j["weights"];
    if (!jw.is_array() || static_cast<int>(jw.size()) != N)
      throw SchemaError("'weights' must list one value per subsystem");
    spec.weights.resize(N);
    for (int i = 0; i < N; ++i) spec.weights[i] = jw[static_cast<size_t>(i)].get<double>();
  } else {
    spec.weights = Eigen::VectorXd::Ones(N);
    note_default("weights=1^N");
  }

  RunOptions& r = spec.run;
  if (j.contains("run")) {
    const auto& jr = j["run"];
    auto get = [&](const char* key, auto fallback, auto& slot) {
      using T = std::decay_t<decltype(fallback)>;
      if (jr.contains(key)) slot = jr[key].get<T>();
      else {
        slot = fallback;
        note_default(std::string("run.") + key + "=" + fmt_double(static_cast<double>(fallback)));
      }
    };
    get("seed", static_cast<uint64_t>(1), r.seed);
    get("sample_budget", static_cast<long>(10000), r.sample_budget);
    get("concrete_samples", static_cast<long>(1000), r.concrete_samples);
    get("w_samples", 5, r.w_samples);
    get("trace_count", 100, r.trace_count);
    get("horizon", 100, r.horizon);
    get("input_bound", -1.0, r.input_bound);
    get("psi_slope", 0.5, r.psi_slope);
    get("delta", 0.05, r.delta);
    get("slack", 1e-9, r.slack);
    get("dedup_tol", 1e-12, r.dedup_tol);
    if (jr.contains("relation_check")) r.relation_check = jr["relation_check"].get<bool>();
    else note_default("run.relation_check=0");
    get("threads", 1u, r.threads);
  } else {
    note_default("run=<all defaults>");
  }
  if (!(r.psi_slope > 0.0 && r.psi_slope < 1.0)) throw ConfigError("run.psi_slope must lie in (0,1)");
  if (!(r.delta > 0.0 && r.delta < 1.0)) throw ConfigError("run.delta must lie in (0,1)");
  return spec;
}

inline NetworkSpec parse_network_spec_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw SchemaError("cannot read spec file '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("spec file '" + path + "': " + e.what());
  }
  return parse_network_spec(j);
}

struct PipelineResult {
  bool pass = false;
  int exit_code = 1;
  std::string report;
  std::vector<std::string> files;

  /* key quantities, for programmatic assertions */
  std::vector<double> eps_i;
  double epsilon = 0.0;
  double lmi_max_eig = 0.0;
  bool lmi_pass = false;
  double match_dev = 0.0;
  bool match_pass = false;
  bool cover_pass = false;
  std::string sigma_desc, lambda_desc, gamma_ext_desc;
  double phi = 0.0, eps_hat = 0.0, input_bound_v = 0.0;
  long passivity_violations = 0, storage_violations = 0, trace_violations = 0;
  double storage_worst_margin = 0.0;
  long relation_output_violations = 0, relation_invariance_violations = 0;
  long relation_pairs = 0;
  double max_trace_out_err = 0.0, max_snap_deviation = 0.0;

  SimulationCertificate certificate;
  RefinementBound bound;
};

/*
 * Full batch pipeline: build the network, certify each subsystem, quantize,
 * build abstractions, run the compositionality checks, compose the
 * network-level certificate, synthesize the error bound, and validate it
 * with sampled checks, paired traces, and (optionally) the exhaustive
 * relation check. Artifacts (report, abstraction dumps, trace CSVs) land in
 * out_dir. Exit code 0 iff every check passed; hard errors throw with the
 * failing stage named.
 */
inline PipelineResult run_pipeline_stages(const NetworkSpec& spec, const std::string& out_dir,
                                          std::string& stage_name) {
  namespace fs = std::filesystem;
  const RunOptions& run = spec.run;
  const int N = static_cast<int>(spec.subsystems.size());
  PipelineResult res;
  std::ostringstream rep;
  rep << "dissim pipeline report\n======================\n\n[config]\n";
  rep << "subsystems=" << N << "\n";
  rep << "seed=" << run.seed << "\n";
  rep << "sample_budget=" << run.sample_budget << "\n";
  rep << "concrete_samples=" << run.concrete_samples << "\n";
  rep << "w_samples=" << run.w_samples << "\n";
  rep << "trace_count=" << run.trace_count << "\n";
  rep << "horizon=" << run.horizon << "\n";
  rep << "input_bound=" << fmt_double(run.input_bound) << "\n";
  rep << "psi_slope=" << fmt_double(run.psi_slope) << "\n";
  rep << "delta=" << fmt_double(run.delta) << "\n";
  rep << "slack=" << fmt_double(run.slack) << "\n";
  rep << "dedup_tol=" << fmt_double(run.dedup_tol) << "\n";
  rep << "relation_check=" << (run.relation_check ? 1 : 0) << "\n";
  rep << "threads=" << run.threads << "\n";
  rep << "lmi_tol=1e-09\nmatch_tol=1e-12*scale\ncover_tol=1e-09\nsnap_tol=1e-09\n";
  for (const auto& d : spec.defaults_applied) rep << "default: " << d << "\n";
  rep << "\n";

  /* ---- build ---- */
  stage_name = "build";
  Eigen::MatrixXd M, Mhat;
  std::vector<SubsystemModel> subs;
  if (spec.coupling.preset == "laplacian") {
    for (const auto& s : spec.subsystems)
      if (s.preset != "integrator" || s.dims != 1)
        throw ConfigError("the laplacian preset expects one-dimensional integrator subsystems");
    /* the builder's gain argument only shapes its metadata; per-subsystem
     * gains are validated at the passivity stage */
    LaplacianNetwork lap = build_laplacian_network(N, spec.coupling.edges, spec.coupling.tau, 0.5);
    M = lap.M;
    Mhat = lap.M;
  } else {
    M = spec.coupling.M;
    Mhat = spec.coupling.Mhat;
  }

  /* stacked state hull -> exact internal input intervals */
  {
    std::vector<Interval> stacked;
    for (const auto& s : spec.subsystems)
      for (const auto& ax : s.state_box) stacked.push_back(ax);
    Box stacked_box(stacked);
    if (M.cols() != stacked_box.dim())
      throw DomainError("coupling matrix columns disagree with the stacked output dimension");
    auto w_iv = linear_image_intervals(M, stacked_box);
    int off = 0;
    for (int i = 0; i < N; ++i) {
      const auto& s = spec.subsystems[static_cast<size_t>(i)];
      std::vector<Interval> w_axes(w_iv.begin() + off, w_iv.begin() + off + s.dims);
      Box state(std::vector<Interval>(s.state_box));
      Box input(std::vector<Interval>(s.input_box));
      Box internal(std::move(w_axes));
      if (s.preset == "integrator") {
        Eigen::MatrixXd I = Eigen::MatrixXd::Identity(s.dims, s.dims);
        subs.push_back(SubsystemModel::make_linear(I, I, I, BoxUnion(state), input, internal));
      } else {
        subs.push_back(SubsystemModel::make_linear(s.A, s.B, s.D, BoxUnion(state), input, internal));
      }
      off += s.dims;
    }
  }

  /* ---- passivity ---- */
  stage_name = "passivity";
  std::vector<PassivityCertificate> pcerts;
  rep << "[passivity]\n";
  for (int i = 0; i < N; ++i) {
    PassivityCertificate pc = passivity_for_linear(subs[static_cast<size_t>(i)],
                                                   spec.subsystems[static_cast<size_t>(i)].lambda_fb,
                                                   {10000, run.seed});
    SampledReport vrep = verify_passivity(subs[static_cast<size_t>(i)], pc,
                                          {run.sample_budget, run.seed, run.slack, run.threads});
    res.passivity_violations += static_cast<long>(vrep.violations.size());
    rep << "i=" << i << " worst_margin=" << fmt_double(vrep.worst_margin)
        << " violations=" << vrep.violations.size() << "\n";
    pcerts.push_back(std::move(pc));
  }
  rep << "\n";

  /* ---- quantization + internal input sets ---- */
  stage_name = "quantization";
  std::vector<Grid> core_grids;
  std::vector<Eigen::MatrixXd> h2s;
  std::vector<int> internal_dims;
  for (int i = 0; i < N; ++i) {
    core_grids.push_back(Grid::quantize(subs[static_cast<size_t>(i)].state_set(),
                                        spec.subsystems[static_cast<size_t>(i)].eta));
    h2s.push_back(subs[static_cast<size_t>(i)].h2());
    internal_dims.push_back(subs[static_cast<size_t>(i)].internal_dim());
  }
  std::vector<FiniteSet> internal_sets =
      build_internal_input_sets(Mhat, core_grids, h2s, internal_dims, {run.dedup_tol, 1000000});

  /* ---- abstractions ---- */
  stage_name = "abstraction";
  std::vector<FiniteAbstraction> abstractions;
  rep << "[abstraction]\n";
  fs::create_directories(out_dir);
  for (int i = 0; i < N; ++i) {
    const auto& ss = spec.subsystems[static_cast<size_t>(i)];
    AbstractionOptions aopt;
    aopt.threads = run.threads;
    FiniteAbstraction abs = build_abstraction(
        subs[static_cast<size_t>(i)], pcerts[static_cast<size_t>(i)],
        Eigen::VectorXd::Constant(ss.dims, ss.eta), Eigen::VectorXd::Constant(ss.dims, ss.mu1),
        internal_sets[static_cast<size_t>(i)], aopt);
    std::string fname = "abstraction_" + std::to_string(i) + ".txt";
    std::ofstream os(fs::path(out_dir) / fname);
    dump_abstraction(abs, os);
    res.files.push_back(fname);
    rep << "i=" << i << " states=" << abs.state_count() << " core_states=" << abs.state_grid.core_size()
        << " inputs=" << abs.input_count() << " internal=" << abs.internal_count()
        << " triples=" << abs.triple_count() << " dump=" << fname << "\n";
    abstractions.push_back(std::move(abs));
  }
  rep << "\n";

  /* ---- operative boxes, gamma, storage certificates ----
   * The certificates operate wherever states can land in one step, so the
   * boxes grow to the covered hulls before gamma and epsilon are fixed. */
  stage_name = "certificates";
  std::vector<Box> covered;
  for (int i = 0; i < N; ++i) covered.push_back(abstractions[static_cast<size_t>(i)].state_grid.covered_box());
  {
    std::vector<Interval> stacked;
    for (const auto& b : covered)
      for (const auto& ax : b.axes) stacked.push_back(ax);
    Box stacked_box(stacked);
    auto w_iv = linear_image_intervals(M, stacked_box);
    int off = 0;
    for (int i = 0; i < N; ++i) {
      const auto& sub = subs[static_cast<size_t>(i)];
      std::vector<Interval> w_axes(w_iv.begin() + off, w_iv.begin() + off + sub.internal_dim());
      /* inputs must admit u = H(x) + u_hat over the covered hull */
      auto hx = linear_image_intervals(pcerts[static_cast<size_t>(i)].K, covered[static_cast<size_t>(i)]);
      Box ubox = sub.input_box();
      const Grid& ug = abstractions[static_cast<size_t>(i)].input_grid;
      for (int a = 0; a < sub.input_dim(); ++a) {
        double ulo = std::numeric_limits<double>::infinity(), uhi = -ulo;
        for (int o = 0; o < ug.size(); ++o) {
          ulo = std::min(ulo, ug.point(o)[a]);
          uhi = std::max(uhi, ug.point(o)[a]);
        }
        ubox.axes[static_cast<size_t>(a)].lo =
            std::min(ubox.axes[static_cast<size_t>(a)].lo, hx[static_cast<size_t>(a)].lo + ulo);
        ubox.axes[static_cast<size_t>(a)].hi =
            std::max(ubox.axes[static_cast<size_t>(a)].hi, hx[static_cast<size_t>(a)].hi + uhi);
      }
      subs[static_cast<size_t>(i)] =
          sub.with_boxes(BoxUnion(covered[static_cast<size_t>(i)]), ubox, Box(std::move(w_axes)));
      off += sub.internal_dim();
    }
  }

  std::vector<StorageCertificate> scerts;
  rep << "[certificates]\n";
  for (int i = 0; i < N; ++i) {
    pcerts[static_cast<size_t>(i)].gamma =
        derive_gamma(pcerts[static_cast<size_t>(i)].Q, covered[static_cast<size_t>(i)], {10000, run.seed});
    double eps = pcerts[static_cast<size_t>(i)].gamma.evaluate(spec.subsystems[static_cast<size_t>(i)].eta / 2.0);
    res.eps_i.push_back(eps);
    scerts.push_back(storage_from_passivity(pcerts[static_cast<size_t>(i)],
                                            subs[static_cast<size_t>(i)].internal_dim(),
                                            subs[static_cast<size_t>(i)].y2_dim(), eps));
    rep << "i=" << i << " gamma=" << pcerts[static_cast<size_t>(i)].gamma.describe()
        << " eps=" << fmt_double(eps) << "\n";
  }
  rep << "\n";

  /* ---- storage checks ---- */
  stage_name = "storage-check";
  rep << "[storage]\n";
  res.storage_worst_margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < N; ++i) {
    StorageCheckOptions sopt;
    sopt.concrete_samples = run.concrete_samples;
    sopt.w_samples = run.w_samples;
    sopt.seed = run.seed + 17;
    sopt.slack = run.slack;
    sopt.threads = run.threads;
    SampledReport srep = check_storage_pointwise(subs[static_cast<size_t>(i)],
                                                 abstractions[static_cast<size_t>(i)],
                                                 pcerts[static_cast<size_t>(i)],
                                                 scerts[static_cast<size_t>(i)], sopt);
    res.storage_violations += static_cast<long>(srep.violations.size());
    res.storage_worst_margin = std::min(res.storage_worst_margin, srep.worst_margin);
    rep << "i=" << i << " worst_margin=" << fmt_double(srep.worst_margin)
        << " violations=" << srep.violations.size() << "\n";
  }
  rep << "\n";

  /* ---- interconnection + composition ---- */
  stage_name = "composition";
  InterconnectedSystem net(subs, InterconnectionMatrix{M});
  CompositionProblem problem;
  problem.certs = scerts;
  problem.mu = spec.weights;
  problem.M = M;
  problem.Mhat = Mhat;
  problem.abstractions = &abstractions;
  BlockAssembly assembly = assemble(problem);
  LmiCheck lmi = check_coupling_lmi(assembly, M);
  MatchCheck match = check_coupling_match(assembly, M, Mhat);
  CoverCheck cover = check_internal_cover(Mhat, abstractions, 1e-9, {run.dedup_tol, 1000000});
  res.lmi_max_eig = lmi.max_eigenvalue;
  res.lmi_pass = lmi.pass;
  res.match_dev = match.deviation;
  res.match_pass = match.pass;
  res.cover_pass = cover.pass;
  rep << "[composition]\n";
  rep << "lmi_max_eig=" << fmt_double(lmi.max_eigenvalue) << " pass=" << (lmi.pass ? 1 : 0) << "\n";
  rep << "coupling_match_dev=" << fmt_double(match.deviation) << " pass=" << (match.pass ? 1 : 0)
      << "\n";
  rep << "internal_cover_worst=" << fmt_double(cover.worst_deviation)
      << " pass=" << (cover.pass ? 1 : 0) << "\n\n";

  bool checks_ok = lmi.pass && match.pass && cover.pass && res.storage_violations == 0 &&
                   res.passivity_violations == 0;

  if (!checks_ok) {
    rep << "[summary]\n";
    rep << "status=fail\n";
    res.report = rep.str();
    res.pass = false;
    res.exit_code = 1;
    std::ofstream os(fs::path(out_dir) / "report.txt");
    os << res.report;
    res.files.push_back("report.txt");
    return res;
  }

  SimulationCertificate cert = compose_certificate(problem, assembly, lmi, match, cover);
  res.epsilon = cert.epsilon;

  /* ---- bound synthesis ---- */
  stage_name = "bound";
  double v = run.input_bound;
  if (v < 0.0) {
    v = 0.0;
    for (const auto& abs : abstractions)
      for (int u = 0; u < abs.input_count(); ++u)
        v = std::max(v, abs.input_point(u).cwiseAbs().maxCoeff());
  }
  SynthesisOptions sopt;
  sopt.psi = ClassKFn::linear(run.psi_slope);
  sopt.delta = run.delta;
  RefinementBound bound = compute_bound(cert, v, sopt);
  res.sigma_desc = cert.sigma.describe();
  res.lambda_desc = bound.lambda.describe();
  res.gamma_ext_desc = bound.gamma_ext.describe();
  res.phi = bound.phi;
  res.eps_hat = bound.eps_hat;
  res.input_bound_v = v;
  rep << "[bound]\n";
  rep << "sigma=" << cert.sigma.describe() << "\n";
  rep << "sigma_closed_form=" << (cert.sigma_closed_form ? 1 : 0) << "\n";
  rep << "rho_ext=" << cert.rho_ext.describe() << "\n";
  rep << "alpha=" << cert.alpha.describe() << "\n";
  rep << "epsilon=" << fmt_double(cert.epsilon) << "\n";
  rep << "lambda=" << bound.lambda.describe() << "\n";
  rep << "gamma_ext=" << bound.gamma_ext.describe() << "\n";
  rep << "phi=" << fmt_double(bound.phi) << "\n";
  rep << "eps_hat=" << fmt_double(bound.eps_hat) << "\n";
  rep << "v=" << fmt_double(v) << "\n\n";

  AbstractNetworkView av{&abstractions, Mhat};

  /* ---- paired traces ---- */
  stage_name = "traces";
  rep << "[traces]\n";
  for (int t = 0; t < run.trace_count; ++t) {
    auto rng = rng_for(run.seed, 7000 + static_cast<uint64_t>(t));
    Eigen::VectorXd x0(net.state_dim());
    int off = 0;
    std::vector<int> ord0;
    for (int i = 0; i < N; ++i) {
      const auto& ss = spec.subsystems[static_cast<size_t>(i)];
      for (int a = 0; a < ss.dims; ++a)
        x0[off + a] = uniform_in(rng, ss.state_box[static_cast<size_t>(a)].lo,
                                 ss.state_box[static_cast<size_t>(a)].hi);
      /* nearest abstract state */
      const Grid& g = abstractions[static_cast<size_t>(i)].state_grid;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int o = 0; o < g.size(); ++o) {
        double d = (g.point(o) - x0.segment(off, ss.dims)).cwiseAbs().maxCoeff();
        if (d < best_d) {
          best_d = d;
          best = o;
        }
      }
      ord0.push_back(best);
      off += ss.dims;
    }
    std::vector<std::vector<int>> useq(static_cast<size_t>(run.horizon), std::vector<int>(static_cast<size_t>(N)));
    for (int k = 0; k < run.horizon; ++k)
      for (int i = 0; i < N; ++i)
        useq[static_cast<size_t>(k)][static_cast<size_t>(i)] = static_cast<int>(
            rng() % static_cast<uint64_t>(abstractions[static_cast<size_t>(i)].input_count()));

    TraceLog log = simulate_pair(net, av, pcerts, cert, bound, x0, ord0, useq, run.horizon,
                                 {run.slack});
    res.trace_violations += static_cast<long>(log.violations.size());
    res.max_trace_out_err = std::max(res.max_trace_out_err, log.max_out_err);
    res.max_snap_deviation = std::max(res.max_snap_deviation, log.max_snap_deviation);
    char name[32];
    std::snprintf(name, sizeof(name), "trace_%03d.csv", t);
    std::ofstream os(fs::path(out_dir) / name);
    log.to_csv(os);
    res.files.push_back(name);
  }
  rep << "count=" << run.trace_count << " horizon=" << run.horizon
      << " violations=" << res.trace_violations << " max_out_err=" << fmt_double(res.max_trace_out_err)
      << " max_snap_dev=" << fmt_double(res.max_snap_deviation) << "\n\n";

  /* ---- relation check (optional) ---- */
  stage_name = "relation";
  if (run.relation_check) {
    auto samples = grid_midpoint_samples(av);
    AltSimOptions aopt;
    aopt.slack = run.slack;
    aopt.threads = run.threads;
    AltSimReport arep = verify_alternating_simulation(net, av, pcerts, cert, bound, samples, aopt);
    res.relation_output_violations = arep.output_violations;
    res.relation_invariance_violations = arep.invariance_violations;
    res.relation_pairs = arep.pairs_in_relation;
    rep << "[relation]\n";
    rep << "pairs=" << arep.pairs_total << " in_relation=" << arep.pairs_in_relation
        << " inputs_checked=" << arep.inputs_checked
        << " output_violations=" << arep.output_violations
        << " invariance_violations=" << arep.invariance_violations << "\n\n";
  }

  bool all_ok = checks_ok && res.trace_violations == 0 && res.relation_output_violations == 0 &&
                res.relation_invariance_violations == 0;

  rep << "[summary]\n";
  rep << "passivity_violations=" << res.passivity_violations << "\n";
  rep << "storage_violations=" << res.storage_violations << "\n";
  rep << "storage_worst_margin=" << fmt_double(res.storage_worst_margin) << "\n";
  for (int i = 0; i < N; ++i) rep << "eps_" << i << "=" << fmt_double(res.eps_i[static_cast<size_t>(i)]) << "\n";
  rep << "epsilon=" << fmt_double(res.epsilon) << "\n";
  rep << "lmi_max_eig=" << fmt_double(res.lmi_max_eig) << "\n";
  rep << "coupling_match_dev=" << fmt_double(res.match_dev) << "\n";
  rep << "internal_cover=" << (res.cover_pass ? "pass" : "fail") << "\n";
  rep << "sigma=" << res.sigma_desc << "\n";
  rep << "phi=" << fmt_double(res.phi) << "\n";
  rep << "eps_hat=" << fmt_double(res.eps_hat) << "\n";
  rep << "trace_violations=" << res.trace_violations << "\n";
  if (run.relation_check) {
    rep << "relation_output_violations=" << res.relation_output_violations << "\n";
    rep << "relation_invariance_violations=" << res.relation_invariance_violations << "\n";
  }
  rep << "status=" << (all_ok ? "pass" : "fail") << "\n";

  res.report = rep.str();
  res.pass = all_ok;
  res.exit_code = all_ok ? 0 : 1;
  res.certificate = cert;
  res.bound = bound;
  {
    std::ofstream os(fs::path(out_dir) / "report.txt");
    os << res.report;
    res.files.push_back("report.txt");
  }
  return res;
}

inline PipelineResult run_pipeline(const NetworkSpec& spec, const std::string& out_dir) {
  std::string stage_name = "setup";
  try {
    return run_pipeline_stages(spec, out_dir, stage_name);
  } catch (const CapacityError& e) {
    throw CapacityError("stage " + stage_name + ": " + e.what());
  } catch (const Error& e) {
    throw Error("stage " + stage_name + ": " + e.what());
  }
}

}  // namespace dissim

#endif  // DISSIM_PIPELINE_HPP_
