#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dissim/composition.hpp"
#include "dissim/system.hpp"

using namespace dissim;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

/* scalar quantization-construction certificate of the coupled-integrator
 * class: identity channels, supply rate [[1, 1-l],[1-l, 0]] */
StorageCertificate scalar_cert(double lambda_fb, double eps) {
  StorageCertificate c;
  c.alpha = ClassKFn::power(1.0, 2.0);
  c.sigma = ClassKFn::linear(lambda_fb);
  c.rho_ext = ClassKFn::zero();
  c.X = MatrixXd(2, 2);
  c.X << 1.0, 1.0 - lambda_fb, 1.0 - lambda_fb, 0.0;
  c.x11_dim = 1;
  c.W = MatrixXd::Identity(1, 1);
  c.What = MatrixXd::Identity(1, 1);
  c.H = MatrixXd::Identity(1, 1);
  c.epsilon = eps;
  c.Q = MatrixXd::Identity(1, 1);
  return c;
}

CompositionProblem pair_problem(double lambda_fb, double eps, const MatrixXd& M) {
  CompositionProblem p;
  p.certs = {scalar_cert(lambda_fb, eps), scalar_cert(lambda_fb, eps)};
  p.mu = VectorXd::Ones(2);
  p.M = M;
  p.Mhat = M;
  return p;
}

MatrixXd desk_coupling() {
  LaplacianNetwork lap = build_laplacian_network(2, {{0, 1}}, std::log(2.0), 0.5);
  return lap.M;
}

/* brute-force lower envelope of sum mu_i sigma_i over the scaled simplex */
double simplex_min_bruteforce(const std::vector<ClassKFn>& sigmas, const VectorXd& mu, double s,
                              int steps) {
  double best = std::numeric_limits<double>::infinity();
  if (sigmas.size() == 2) {
    for (int i = 0; i <= steps; ++i) {
      double s0 = s * i / steps;
      double v = mu[0] * sigmas[0].evaluate(s0 / mu[0]) +
                 mu[1] * sigmas[1].evaluate((s - s0) / mu[1]);
      best = std::min(best, v);
    }
    return best;
  }
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; i + j <= steps; ++j) {
      double s0 = s * i / steps, s1 = s * j / steps;
      double rest = std::max(0.0, s - s0 - s1);
      double v = mu[0] * sigmas[0].evaluate(s0 / mu[0]) +
                 mu[1] * sigmas[1].evaluate(s1 / mu[1]) + mu[2] * sigmas[2].evaluate(rest / mu[2]);
      best = std::min(best, v);
    }
  return best;
}

}  // namespace

TEST_CASE("assemble: a single block is the certificate itself") {
  CompositionProblem p;
  p.certs = {scalar_cert(0.5, 0.1)};
  p.mu = VectorXd::Ones(1);
  p.M = MatrixXd::Zero(1, 1);
  p.Mhat = p.M;
  BlockAssembly a = assemble(p);
  REQUIRE(a.X.rows() == 2);
  REQUIRE((a.X - p.certs[0].X).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.q == 1);
}

TEST_CASE("assemble: interleaved ordering for the scalar pair") {
  CompositionProblem p = pair_problem(0.5, 0.1, desk_coupling());
  BlockAssembly a = assemble(p);
  MatrixXd expect(4, 4);
  /* rows/cols ordered (w-block 1, w-block 2, y-block 1, y-block 2) */
  expect << 1.0, 0.0, 0.5, 0.0,
            0.0, 1.0, 0.0, 0.5,
            0.5, 0.0, 0.0, 0.0,
            0.0, 0.5, 0.0, 0.0;
  REQUIRE((a.X - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assemble: the interleaving permutation identity is exact") {
  CompositionProblem p = pair_problem(0.4, 0.1, desk_coupling());
  p.mu << 2.0, 3.0;
  BlockAssembly a = assemble(p);
  MatrixXd P = interleaving_permutation(a);
  MatrixXd bd = MatrixXd::Zero(4, 4);
  bd.block(0, 0, 2, 2) = 2.0 * p.certs[0].X;
  bd.block(2, 2, 2, 2) = 3.0 * p.certs[1].X;
  REQUIRE((a.X - P.transpose() * bd * P).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assemble: zero weight erases a subsystem's blocks") {
  CompositionProblem p = pair_problem(0.5, 0.1, desk_coupling());
  p.mu << 0.0, 1.0;
  BlockAssembly a = assemble(p);
  REQUIRE(a.X(0, 0) == 0.0);
  REQUIRE(a.X(0, 2) == 0.0);
  REQUIRE(a.X(1, 1) == 1.0);
}

TEST_CASE("coupling LMI: the consensus pair passes with the known spectrum") {
  LaplacianNetwork lap = build_laplacian_network(2, {{0, 1}}, std::log(2.0), 0.5);
  CompositionProblem p = pair_problem(0.5, 0.1, lap.M);
  BlockAssembly a = assemble(p);
  LmiCheck lmi = check_coupling_lmi(a, lap.M);
  REQUIRE(lmi.pass);
  REQUIRE(lmi.max_eigenvalue <= 1e-9);

  /* oracle: eigenvalues of (A-I)(A-I+2(1-l)I) are (a-1)a for eigenvalues a
   * of A, here {1, 0.25} -> {0, -0.1875} */
  MatrixXd T = (lap.A - MatrixXd::Identity(2, 2)) * (lap.A);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
  REQUIRE(es.eigenvalues()[0] == Catch::Approx(-0.1875).margin(1e-12));
  REQUIRE(es.eigenvalues()[1] == Catch::Approx(0.0).margin(1e-12));
  Eigen::SelfAdjointEigenSolver<MatrixXd> check(
      (MatrixXd(4, 2) << a.W * lap.M, MatrixXd::Identity(2, 2)).finished().transpose() * a.X *
      (MatrixXd(4, 2) << a.W * lap.M, MatrixXd::Identity(2, 2)).finished());
  REQUIRE(check.eigenvalues()[0] == Catch::Approx(-0.1875).margin(1e-12));
}

TEST_CASE("coupling LMI: zero coupling is trivially fine, monotone in tolerance") {
  CompositionProblem p = pair_problem(0.5, 0.1, MatrixXd::Zero(2, 2));
  BlockAssembly a = assemble(p);
  LmiCheck lmi = check_coupling_lmi(a, MatrixXd::Zero(2, 2));
  REQUIRE(lmi.pass);
  REQUIRE(std::abs(lmi.max_eigenvalue) <= 1e-15);
  /* pass at tolerance t implies pass at any larger tolerance */
  REQUIRE(check_coupling_lmi(a, MatrixXd::Zero(2, 2), 1e-6).pass);
}

TEST_CASE("coupling LMI: a flipped cross block fails with a positive eigenvalue") {
  LaplacianNetwork lap = build_laplacian_network(2, {{0, 1}}, std::log(2.0), 0.5);
  CompositionProblem p = pair_problem(0.5, 0.1, lap.M);
  for (auto& c : p.certs) {
    c.X(0, 1) = -0.5;
    c.X(1, 0) = -0.5;
  }
  BlockAssembly a = assemble(p);
  LmiCheck lmi = check_coupling_lmi(a, lap.M);
  REQUIRE_FALSE(lmi.pass);
  REQUIRE(lmi.max_eigenvalue > 0.0);
  /* oracle: (A-I)(A-I-2(1-l)I) has eigenvalue (0.25-1)(0.25-2) > 0 */
  REQUIRE(lmi.max_eigenvalue == Catch::Approx(0.75 * 1.75).margin(1e-9));
}

TEST_CASE("coupling consistency: identity channels need M = Mhat") {
  MatrixXd M = desk_coupling();
  CompositionProblem p = pair_problem(0.5, 0.1, M);
  BlockAssembly a = assemble(p);
  REQUIRE(check_coupling_match(a, M, M).pass);

  MatrixXd Mp = M;
  Mp(0, 0) += 1e-3;
  MatchCheck bad = check_coupling_match(a, M, Mp);
  REQUIRE_FALSE(bad.pass);
  REQUIRE(bad.deviation == Catch::Approx(1e-3).margin(1e-12));

  /* zero channel matrices pass vacuously */
  CompositionProblem pz = pair_problem(0.5, 0.1, M);
  for (auto& c : pz.certs) {
    c.W = MatrixXd::Zero(1, 1);
    c.What = MatrixXd::Zero(1, 1);
  }
  BlockAssembly az = assemble(pz);
  REQUIRE(check_coupling_match(az, M, Mp).pass);
}

TEST_CASE("internal cover: constructed sets pass, a deleted point fails") {
  LaplacianNetwork lap = build_laplacian_network(2, {{0, 1}}, std::log(2.0), 0.5);
  Grid g0 = Grid::quantize(lap.subs[0].state_set(), 0.25);
  Grid g1 = Grid::quantize(lap.subs[1].state_set(), 0.25);
  std::vector<MatrixXd> h2{lap.subs[0].h2(), lap.subs[1].h2()};
  auto sets = build_internal_input_sets(lap.M, {g0, g1}, h2, {1, 1});

  std::vector<FiniteAbstraction> abstractions(2);
  for (int i = 0; i < 2; ++i) {
    PassivityCertificate pc = passivity_for_linear(lap.subs[static_cast<size_t>(i)], 0.5);
    abstractions[static_cast<size_t>(i)] =
        build_abstraction(lap.subs[static_cast<size_t>(i)], pc, VectorXd::Constant(1, 0.25),
                          VectorXd::Constant(1, 0.1), sets[static_cast<size_t>(i)]);
  }
  CoverCheck ok = check_internal_cover(lap.M, abstractions);
  REQUIRE(ok.pass);

  /* delete one member of the first internal set */
  auto vals = sets[0].coordinate_values(0);
  vals.erase(vals.begin());
  abstractions[0].internal_inputs = FiniteSet(std::vector<std::vector<double>>{vals});
  CoverCheck bad = check_internal_cover(lap.M, abstractions);
  REQUIRE_FALSE(bad.pass);
  REQUIRE(bad.worst_coordinate == 0);
  REQUIRE(bad.worst_deviation > 1e-9);

  /* zero coupling with 0 in the set passes */
  std::vector<FiniteAbstraction> zeroed = abstractions;
  zeroed[0].internal_inputs = FiniteSet::singleton_zero(1);
  zeroed[1].internal_inputs = FiniteSet::singleton_zero(1);
  REQUIRE(check_internal_cover(MatrixXd::Zero(2, 2), zeroed).pass);
}

TEST_CASE("composition: offsets add up weighted") {
  /* three blocks with gamma = Linear(2), eta = 0.1: eps_i = gamma(0.05) */
  double eps_i = 2.0 * 0.05;
  CompositionProblem p;
  p.certs = {scalar_cert(0.5, eps_i), scalar_cert(0.5, eps_i), scalar_cert(0.5, eps_i)};
  p.mu = VectorXd::Ones(3);
  p.M = MatrixXd::Zero(3, 3);
  p.Mhat = p.M;
  BlockAssembly a = assemble(p);
  LmiCheck lmi = check_coupling_lmi(a, p.M);
  MatchCheck match = check_coupling_match(a, p.M, p.Mhat);
  CoverCheck cover;  // vacuous for this algebra-only exercise
  SimulationCertificate cert = compose_certificate(p, a, lmi, match, cover);
  REQUIRE(cert.epsilon == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(cert.sigma.linear_slope() == 0.5);
  REQUIRE(cert.rho_ext.is_zero());
}

TEST_CASE("composition: equal linear rates give the common slope") {
  CompositionProblem p = pair_problem(0.5, 0.1, MatrixXd::Zero(2, 2));
  BlockAssembly a = assemble(p);
  LmiCheck lmi = check_coupling_lmi(a, p.M);
  MatchCheck match = check_coupling_match(a, p.M, p.Mhat);
  SimulationCertificate cert = compose_certificate(p, a, lmi, match, CoverCheck{});
  REQUIRE(cert.sigma.kind() == ClassKFn::Kind::kLinear);
  REQUIRE(cert.sigma.linear_slope() == 0.5);
  /* brute-force envelope agrees */
  std::vector<ClassKFn> sigmas{p.certs[0].sigma, p.certs[1].sigma};
  for (double s : {0.5, 1.0, 3.0})
    REQUIRE(simplex_min_bruteforce(sigmas, p.mu, s, 1000) ==
            Catch::Approx(cert.sigma.evaluate(s)).margin(1e-6));
}

TEST_CASE("composition: mixed linear rates take the minimum slope") {
  CompositionProblem p;
  p.certs = {scalar_cert(0.3, 0.0), scalar_cert(0.4, 0.0), scalar_cert(0.5, 0.0)};
  p.mu = VectorXd::Ones(3);
  p.M = MatrixXd::Zero(3, 3);
  p.Mhat = p.M;
  BlockAssembly a = assemble(p);
  SimulationCertificate cert =
      compose_certificate(p, a, check_coupling_lmi(a, p.M),
                          check_coupling_match(a, p.M, p.Mhat), CoverCheck{});
  REQUIRE(cert.sigma.linear_slope() == Catch::Approx(0.3).margin(1e-15));
  std::vector<ClassKFn> sigmas{p.certs[0].sigma, p.certs[1].sigma, p.certs[2].sigma};
  for (double s : {0.5, 1.0, 3.0})
    REQUIRE(simplex_min_bruteforce(sigmas, p.mu, s, 1000) ==
            Catch::Approx(cert.sigma.evaluate(s)).margin(1e-6));
}

TEST_CASE("composition: the quadratic output bound scales with the block count") {
  CompositionProblem p = pair_problem(0.5, 0.1, MatrixXd::Zero(2, 2));
  BlockAssembly a = assemble(p);
  SimulationCertificate cert =
      compose_certificate(p, a, check_coupling_lmi(a, p.M),
                          check_coupling_match(a, p.M, p.Mhat), CoverCheck{});
  /* alpha_bar(s) = sqrt(2 s) for two unit quadratics, so alpha(s) = s^2/2 */
  REQUIRE(cert.alpha.kind() == ClassKFn::Kind::kPower);
  REQUIRE(cert.alpha.power_exponent() == Catch::Approx(2.0));
  REQUIRE(cert.alpha.evaluate(1.0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(cert.alpha.evaluate(2.0) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("composition: refused when a condition failed") {
  CompositionProblem p = pair_problem(0.5, 0.1, MatrixXd::Zero(2, 2));
  BlockAssembly a = assemble(p);
  LmiCheck lmi = check_coupling_lmi(a, p.M);
  MatchCheck match = check_coupling_match(a, p.M, p.Mhat);
  LmiCheck bad_lmi = lmi;
  bad_lmi.pass = false;
  bad_lmi.max_eigenvalue = 0.25;
  REQUIRE_THROWS_WITH(compose_certificate(p, a, bad_lmi, match, CoverCheck{}),
                      Catch::Matchers::ContainsSubstring("LMI"));
  MatchCheck bad_match = match;
  bad_match.pass = false;
  REQUIRE_THROWS_WITH(compose_certificate(p, a, lmi, bad_match, CoverCheck{}),
                      Catch::Matchers::ContainsSubstring("consistency"));
  CoverCheck bad_cover;
  bad_cover.pass = false;
  REQUIRE_THROWS_WITH(compose_certificate(p, a, lmi, match, bad_cover),
                      Catch::Matchers::ContainsSubstring("cover"));
}

TEST_CASE("composition: dimension mismatches name the offending subsystem") {
  CompositionProblem p = pair_problem(0.5, 0.1, desk_coupling());
  p.certs[1].x11_dim = 2;  // inconsistent with W
  REQUIRE_THROWS_WITH(assemble(p), Catch::Matchers::ContainsSubstring("subsystem 1"));
}

TEST_CASE("composition: scale-free feasibility across network sizes") {
  for (int N : {2, 5, 20}) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i + 1 < N; ++i) edges.push_back({i, i + 1});
    LaplacianNetwork lap = build_laplacian_network(N, edges, std::log(2.0), 0.5);
    CompositionProblem p;
    for (int i = 0; i < N; ++i) p.certs.push_back(scalar_cert(0.5, 0.1));
    p.mu = VectorXd::Ones(N);
    p.M = lap.M;
    p.Mhat = lap.M;
    BlockAssembly a = assemble(p);
    LmiCheck lmi = check_coupling_lmi(a, lap.M);
    REQUIRE(lmi.pass);
    REQUIRE(lmi.max_eigenvalue <= 1e-9);
  }
}
