#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dissim/classk.hpp"

using namespace dissim;

namespace {

/* log-spaced verification grid over (lo, hi] */
std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g;
  double ratio = std::pow(hi / lo, 1.0 / (n - 1));
  double x = lo;
  for (int i = 0; i < n; ++i) {
    g.push_back(x);
    x *= ratio;
  }
  return g;
}

ClassKFn random_pwl(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nseg(2, 10);
  std::uniform_real_distribution<double> dx(0.1, 1.0);
  std::uniform_real_distribution<double> slope(0.05, 3.0);
  int n = nseg(rng);
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (int i = 0; i < n; ++i) {
    double w = dx(rng);
    pts.push_back({pts.back().first + w, pts.back().second + slope(rng) * w});
  }
  return ClassKFn::pwl(std::move(pts), slope(rng));
}

}  // namespace

TEST_CASE("evaluation of the closed-form families") {
  REQUIRE(ClassKFn::linear(0.5).evaluate(2.0) == 1.0);
  REQUIRE(ClassKFn::power(1.0, 2.0).evaluate(3.0) == 9.0);
  REQUIRE(ClassKFn::zero().evaluate(7.0) == 0.0);
  REQUIRE_THROWS_AS(ClassKFn::linear(1.0).evaluate(-0.1), DomainError);
  REQUIRE(ClassKFn::zero().evaluate(0.0) == 0.0);
  REQUIRE(ClassKFn::linear(3.0).evaluate(0.0) == 0.0);
}

TEST_CASE("strict monotonicity on a 1000-point log grid") {
  auto grid = log_grid(1e-6, 1e3, 1000);
  std::mt19937_64 rng(7);
  std::vector<ClassKFn> fns{ClassKFn::linear(0.37), ClassKFn::power(2.0, 1.7),
                            ClassKFn::power(0.5, 0.5), random_pwl(rng), random_pwl(rng)};
  for (const auto& f : fns) {
    double prev = f.evaluate(0.0);
    REQUIRE(prev == 0.0);
    for (double s : grid) {
      double v = f.evaluate(s);
      REQUIRE(v > prev);
      prev = v;
    }
  }
}

TEST_CASE("inversion: closed forms") {
  ClassKFn inv = ClassKFn::linear(0.5).inverse();
  REQUIRE(inv.kind() == ClassKFn::Kind::kLinear);
  REQUIRE(inv.linear_slope() == 2.0);

  ClassKFn sqrt_fn = ClassKFn::power(1.0, 2.0).inverse();
  REQUIRE(sqrt_fn.power_exponent() == 0.5);
  REQUIRE(sqrt_fn.evaluate(9.0) == Catch::Approx(3.0).margin(1e-12));

  REQUIRE_THROWS_AS(ClassKFn::zero().inverse(), InvalidCertificate);
  /* bounded pwl (zero tail) is not K-inf */
  REQUIRE_THROWS_AS(ClassKFn::pwl({{0.0, 0.0}, {1.0, 1.0}}, 0.0).inverse(), InvalidCertificate);
}

TEST_CASE("inversion: pwl breakpoint swap, verified by round-trip") {
  ClassKFn f = ClassKFn::pwl({{0.0, 0.0}, {1.0, 3.0}}, 3.0);
  ClassKFn g = f.inverse();
  REQUIRE(g.pwl_xs() == std::vector<double>{0.0, 3.0});
  REQUIRE(g.pwl_ys() == std::vector<double>{0.0, 1.0});
  REQUIRE(g.pwl_tail() == Catch::Approx(1.0 / 3.0));
  for (int i = 0; i <= 100; ++i) {
    double s = 5.0 * i / 100.0;
    REQUIRE(g.evaluate(f.evaluate(s)) == Catch::Approx(s).margin(1e-6));
  }
}

TEST_CASE("invert round-trip within 1e-6 on 1000-point grids") {
  auto grid = log_grid(1e-4, 1e2, 1000);
  std::mt19937_64 rng(11);
  std::vector<ClassKFn> fns{ClassKFn::linear(1.7), ClassKFn::power(0.3, 2.0),
                            ClassKFn::power(2.0, 0.7), random_pwl(rng), random_pwl(rng),
                            random_pwl(rng)};
  for (const auto& f : fns) {
    ClassKFn finv = f.inverse();
    for (double s : grid) {
      double rt = finv.evaluate(f.evaluate(s));
      REQUIRE(std::abs(rt - s) <= 1e-6 * std::max(1.0, s));
    }
  }
}

TEST_CASE("composition: closed forms and zero short-circuits") {
  ClassKFn c1 = compose(ClassKFn::linear(2.0), ClassKFn::linear(0.5));
  REQUIRE(c1.kind() == ClassKFn::Kind::kLinear);
  REQUIRE(c1.linear_slope() == 1.0);

  /* (3s)^2 = 9 s^2, checked pointwise against direct evaluation */
  ClassKFn c2 = compose(ClassKFn::power(1.0, 2.0), ClassKFn::linear(3.0));
  REQUIRE(c2.kind() == ClassKFn::Kind::kPower);
  REQUIRE(c2.power_coeff() == Catch::Approx(9.0));
  for (double s : {0.1, 0.7, 2.0, 31.0})
    REQUIRE(c2.evaluate(s) == Catch::Approx(std::pow(3.0 * s, 2.0)).epsilon(1e-12));

  REQUIRE(compose(ClassKFn::linear(2.0), ClassKFn::zero()).is_zero());
  REQUIRE(compose(ClassKFn::zero(), ClassKFn::linear(2.0)).is_zero());

  ClassKFn c3 = compose(ClassKFn::power(2.0, 2.0), ClassKFn::power(3.0, 0.5));
  for (double s : {0.2, 1.0, 9.0})
    REQUIRE(c3.evaluate(s) == Catch::Approx(2.0 * std::pow(3.0 * std::sqrt(s), 2.0)).epsilon(1e-12));
}

TEST_CASE("composition: pwl paths stay exact or record their error") {
  std::mt19937_64 rng(3);
  ClassKFn f = random_pwl(rng);
  ClassKFn g = random_pwl(rng);
  ClassKFn fg = compose(f, g);
  REQUIRE(fg.interp_error() == 0.0);  // pwl-pwl composes exactly on merged breakpoints
  for (int i = 0; i <= 500; ++i) {
    double s = 8.0 * i / 500.0;
    REQUIRE(fg.evaluate(s) == Catch::Approx(f.evaluate(g.evaluate(s))).margin(1e-12));
  }

  /* pwl after linear rescales breakpoints exactly */
  ClassKFn fl = compose(f, ClassKFn::linear(2.5));
  for (int i = 0; i <= 100; ++i) {
    double s = 3.0 * i / 100.0;
    REQUIRE(fl.evaluate(s) == Catch::Approx(f.evaluate(2.5 * s)).margin(1e-12));
  }

  /* power with pwl needs resampling; the error bound is recorded and honest */
  ComposeOptions opt;
  opt.range = 4.0;
  ClassKFn pf = compose(ClassKFn::power(1.0, 2.0), g, opt);
  double measured = 0.0;
  for (int i = 0; i <= 997; ++i) {
    double s = 4.0 * i / 997.0;
    measured = std::max(measured, std::abs(pf.evaluate(s) - std::pow(g.evaluate(s), 2.0)));
  }
  REQUIRE(measured <= pf.interp_error() + 1e-9);
}

TEST_CASE("contractive minorant: linear clamp rule") {
  MinorantOptions opt;
  ClassKFn a = contractive_minorant(ClassKFn::linear(0.5), opt);
  REQUIRE(a.linear_slope() == 0.5);  // already below 1 - delta

  ClassKFn b = contractive_minorant(ClassKFn::linear(2.0), opt);
  REQUIRE(b.linear_slope() == Catch::Approx(0.95));

  REQUIRE_THROWS_AS(contractive_minorant(ClassKFn::zero(), opt), InvalidCertificate);
}

namespace {

/* the two defining properties, checked by sampling */
void check_minorant(const ClassKFn& sigma, const ClassKFn& hat, double lo, double hi) {
  auto grid = log_grid(lo, hi, 1000);
  double prev_gap = 0.0;
  double prev_s = 0.0;
  for (double s : grid) {
    REQUIRE(hat.evaluate(s) <= sigma.evaluate(s) + 1e-12 * std::max(1.0, sigma.evaluate(s)));
    double gap = s - hat.evaluate(s);
    if (prev_s > 0.0) REQUIRE(gap > prev_gap);
    prev_gap = gap;
    prev_s = s;
  }
}

}  // namespace

TEST_CASE("contractive minorant: pwl per-segment clamp") {
  ClassKFn sigma = ClassKFn::pwl({{0.0, 0.0}, {1.0, 0.3}, {2.0, 4.3}}, 4.0);  // slopes 0.3, 4.0
  ClassKFn hat = contractive_minorant(sigma, {});
  const auto& ys = hat.pwl_ys();
  REQUIRE(ys[1] == Catch::Approx(0.3));
  REQUIRE(ys[2] == Catch::Approx(0.3 + 0.95));
  REQUIRE(hat.pwl_tail() == Catch::Approx(0.95));
  check_minorant(sigma, hat, 1e-6, 50.0);
}

TEST_CASE("contractive minorant: 20 randomized pwl inputs") {
  std::mt19937_64 rng(2025);
  for (int t = 0; t < 20; ++t) {
    ClassKFn sigma = random_pwl(rng);
    ClassKFn hat = contractive_minorant(sigma, {});
    check_minorant(sigma, hat, 1e-6, 2.0 * sigma.pwl_hull_max());
    REQUIRE(hat.is_kinf());
  }
}

TEST_CASE("contractive minorant: power converts then clamps") {
  ClassKFn sigma = ClassKFn::power(1.0, 2.0);
  MinorantOptions opt;
  opt.range = 100.0;
  ClassKFn hat = contractive_minorant(sigma, opt);
  REQUIRE(hat.kind() == ClassKFn::Kind::kPwl);
  /* sampling floor: the minorant property is guaranteed from the first
   * breakpoint on */
  check_minorant(sigma, hat, 2e-6 * 100.0, 100.0);
  REQUIRE(hat.max_slope() <= 0.95 + 1e-12);
}

TEST_CASE("bound synthesis: the worked linear case") {
  BoundSynthesis syn = synthesize_bound(ClassKFn::linear(0.5), ClassKFn::zero(), 0.3, {});
  REQUIRE(syn.lambda.kind() == ClassKFn::Kind::kLinear);
  REQUIRE(syn.lambda.linear_slope() == Catch::Approx(0.75).epsilon(1e-12));
  REQUIRE(syn.gamma_ext.is_zero());
  /* psi^-1(2 * 0.3) = 1.2, sigma_hat^-1(1.2) = 2.4 */
  REQUIRE(syn.phi == Catch::Approx(2.4).epsilon(1e-12));
}

TEST_CASE("bound synthesis: zero offset propagates") {
  BoundSynthesis syn = synthesize_bound(ClassKFn::linear(0.5), ClassKFn::zero(), 0.0, {});
  REQUIRE(syn.phi == 0.0);
  REQUIRE(syn.gamma_ext.is_zero());
}

TEST_CASE("bound synthesis: external gain chain") {
  BoundSynthesis syn = synthesize_bound(ClassKFn::linear(0.5), ClassKFn::linear(1.0), 0.0, {});
  REQUIRE(syn.gamma_ext.kind() == ClassKFn::Kind::kLinear);
  REQUIRE(syn.gamma_ext.linear_slope() == Catch::Approx(8.0).epsilon(1e-12));
  /* oracle: evaluate the chain sigma_hat^-1(psi^-1(2 rho(s))) directly */
  ClassKFn sigma_hat_inv = syn.sigma_hat.inverse();
  ClassKFn psi_inv = ClassKFn::linear(0.5).inverse();
  for (double s : {0.1, 1.0, 10.0})
    REQUIRE(syn.gamma_ext.evaluate(s) ==
            Catch::Approx(sigma_hat_inv.evaluate(psi_inv.evaluate(2.0 * s))).epsilon(1e-12));
}

TEST_CASE("bound synthesis: invalid split function is a configuration error") {
  SynthesisOptions opt;
  opt.psi = ClassKFn::linear(1.5);  // Id - psi decreasing
  REQUIRE_THROWS_AS(synthesize_bound(ClassKFn::linear(0.5), ClassKFn::zero(), 0.1, opt),
                    ConfigError);
  SynthesisOptions opt2;
  opt2.psi = ClassKFn::power(1.0, 2.0);  // slope crosses 1
  REQUIRE_THROWS_AS(synthesize_bound(ClassKFn::linear(0.5), ClassKFn::zero(), 0.1, opt2),
                    ConfigError);
}

TEST_CASE("bound synthesis: lambda contracts and outputs are monotone") {
  std::mt19937_64 rng(99);
  auto grid = log_grid(1e-4, 1e2, 200);
  for (int t = 0; t < 10; ++t) {
    ClassKFn sigma = random_pwl(rng);
    BoundSynthesis syn = synthesize_bound(sigma, ClassKFn::linear(0.3), 0.2, {});
    double prev_l = 0.0, prev_g = 0.0;
    for (double s : grid) {
      double l = syn.lambda.evaluate(s);
      REQUIRE(l < s);
      REQUIRE(l >= prev_l);
      double g = syn.gamma_ext.evaluate(s);
      REQUIRE(g >= prev_g);
      prev_l = l;
      prev_g = g;
    }
  }
}

TEST_CASE("output scaling") {
  REQUIRE(ClassKFn::linear(0.5).scale_output(2.0).linear_slope() == 1.0);
  REQUIRE(ClassKFn::power(1.0, 2.0).scale_output(3.0).evaluate(2.0) == Catch::Approx(12.0));
  REQUIRE(ClassKFn::zero().scale_output(5.0).is_zero());
}
