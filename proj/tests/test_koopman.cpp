#include <cmath>
#include <random>

#include "conefield/error.hpp"
#include "conefield/koopman.hpp"
#include "doctest.h"

using namespace conefield;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

const LimitCycleModel& vdp_cycle() {
  static const LimitCycleModel lc = find_limit_cycle(builtin("vanderpol"), vec2(2, 0));
  return lc;
}

const EigenpairSet& vdp_pairs() {
  static const EigenpairSet set = eigenpairs_limit_cycle(builtin("vanderpol"), vdp_cycle());
  return set;
}

const EigenpairSet& fp_pairs() {
  static const SystemSpec s = builtin("fixedpoint-example");
  static const EigenpairSet set = eigenpairs_fixed_point(s, find_fixed_point(s, vec2(0.1, 0.1)));
  return set;
}

double wrap(double a) {
  const double pi = std::acos(-1.0);
  a = std::fmod(a + pi, 2 * pi);
  if (a <= 0) a += 2 * pi;
  return a - pi;
}

}  // namespace

TEST_CASE("observables") {
  const Observable g = Observable::coordinate(1);
  CHECK(g(vec2(3, 4)) == Complex(4, 0));
  const Observable r = Observable::coordinate_row(0, 2);
  CHECK(r(vec2(3, 4), vec2(2, 5)) == Complex(2, 0));
  CHECK(r(vec2(3, 4), vec2(4, 10)) == 2.0 * r(vec2(3, 4), vec2(2, 5)));
  CHECK_THROWS_AS(g(vec2(1, 1), vec2(1, 1)), Error);
  AverageConfig bad;
  bad.window = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("laplace_average on the diagonal linear system") {
  const SystemSpec s = builtin("linear-diag(-1,-2)");
  const Vec x = vec2(0.7, -0.4);
  const AverageResult a1 = laplace_average(s, Observable::coordinate(0), -1.0, x);
  CHECK(std::abs(a1.value[0] - 0.7) < 1e-6);
  CHECK(a1.converged);
  const AverageResult a2 = laplace_average(s, Observable::coordinate(1), -2.0, x);
  CHECK(std::abs(a2.value[0] + 0.4) < 1e-6);
  const AverageResult p = laplace_average_prolonged(s, Observable::coordinate_row(0, 2), -1.0, x, vec2(0.3, 5));
  CHECK(std::abs(p.value[0] - 0.3) < 1e-6);
  const AverageResult p2 = laplace_average_prolonged(s, Observable::coordinate_row(0, 2), -1.0, x, vec2(0.6, 10));
  CHECK(std::abs(p2.value[0] - 2.0 * p.value[0]) <= 1e-10 * std::abs(p.value[0]));
}

TEST_CASE("laplace_average reports non-convergence") {
  // λ that is not an eigenvalue: e^{t} x1(t) = const * e^{0}? use λ = -0.5: e^{0.5t} e^{-t} decays to 0,
  // while λ = -1.5 makes the integrand grow like e^{0.5 t}.
  const SystemSpec s = builtin("linear-diag(-1,-2)");
  AverageConfig cfg;
  cfg.max_horizon = 40.0;
  CHECK_THROWS_AS(laplace_average(s, Observable::coordinate(0), -1.5, vec2(1, 1), cfg), Error);
}

TEST_CASE("vanderpol angle average at the anchor has unit-scale modulus") {
  const LimitCycleModel& lc = vdp_cycle();
  AverageConfig cfg;
  cfg.window = lc.period;
  cfg.skip = 5 * lc.period;
  cfg.max_horizon = 40 * lc.period;
  const SystemSpec s = builtin("vanderpol");
  const Complex lambda(0.0, lc.omega);
  const AverageResult a = laplace_average(s, Observable::coordinate(0), lambda, lc.anchor, cfg);
  const double mod = std::abs(a.value[0]);
  CHECK(mod > 0.1);
  CHECK(mod < 10.0);
  // U^t invariance: the average from ψ^t(x) is e^{λt} times the average from x.
  const double t = 1.3;
  const AverageResult b = laplace_average(s, Observable::coordinate(0), lambda, flow_map(s, lc.anchor, t), cfg);
  CHECK(std::abs(b.value[0] - std::exp(lambda * t) * a.value[0]) < 1e-6);
}

TEST_CASE("fixed-point eigenpairs: linear system is exact") {
  const SystemSpec s = builtin("linear-diag(-1,-2)");
  const EigenpairSet set = eigenpairs_fixed_point(s, find_fixed_point(s, vec2(1, 1)));
  REQUIRE(set.size() == 2);
  CHECK(set[0].lambda() == Complex(-1, 0));
  CHECK(set[1].lambda() == Complex(-2, 0));
  for (const Vec& x : {vec2(0.5, 0.5), vec2(-0.9, 0.2), vec2(0, 0)}) {
    CHECK(std::abs(set[0].phi(x) - x[0]) < 1e-6);
    CHECK(std::abs(set[1].phi(x) - x[1]) < 1e-6);
    CHECK((set[0].gradient(x) - CRowVec(vec2(1, 0).transpose().cast<Complex>())).norm() < 1e-6);
    CHECK((set[1].gradient(x) - CRowVec(vec2(0, 1).transpose().cast<Complex>())).norm() < 1e-6);
  }
  CHECK(generator_residual(s, set[0], vec2(0.5, 0.5)) < 1e-8);
  // 2λ1 = λ2 sits on the resonance boundary.
  CHECK(set.warnings.size() == 1);
}

TEST_CASE("fixed-point eigenpairs on the example system") {
  const SystemSpec s = builtin("fixedpoint-example");
  const EigenpairSet& set = fp_pairs();
  REQUIRE(set.size() == 2);
  CHECK(std::abs(set[0].lambda() - Complex(-1, 0)) < 1e-12);
  CHECK(std::abs(set[1].lambda() - Complex(-1.5, 0)) < 1e-12);
  CHECK(set.warnings.empty());
  // Linearization oracle at the fixed point.
  const CRowVec g1 = set[0].gradient(vec2(0, 0));
  const CRowVec g2 = set[1].gradient(vec2(0, 0));
  CHECK(std::abs(std::abs(g1[0]) - 1.0) < 1e-6);
  CHECK(std::abs(g1[1]) < 1e-6);
  CHECK(std::abs(g2[0]) < 1e-6);
  CHECK(std::abs(std::abs(g2[1]) - 1.0) < 1e-6);

  // Residuals on a 5x5 grid in [-1,1]^2 and continuity of gradient rows.
  CRowVec prev;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const Vec x = vec2(-1 + 0.5 * i, -1 + 0.5 * j);
      for (std::size_t k = 0; k < 2; ++k) {
        const double r = generator_residual(s, set[k], x);
        INFO("x=" << x.transpose() << " mode " << k << " residual " << r);
        CHECK(r < 1e-3);
      }
      const CRowVec g = set[0].gradient(x);
      CHECK(g.allFinite());
      CHECK(g.norm() > 0.0);
      if (j > 0) CHECK((g - prev).norm() < 1.0);
      prev = g;
    }
  }
  // Wrong λ is detected.
  KoopmanEigenpair wrong(set[0].engine(), 0, set[0].lambda() + 0.5, ModeKind::FixedPoint, "wrong", 1.0);
  CHECK(generator_residual(s, wrong, vec2(0.6, -0.4)) > 0.1);
}

TEST_CASE("fixed-point eigenpairs refuse complex or unstable dominant modes") {
  const SystemSpec v = builtin("vanderpol");
  try {
    eigenpairs_fixed_point(v, find_fixed_point(v, vec2(0.1, -0.1)));
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Refusal);
  }
  const SystemSpec u = builtin("linear-diag(1,-2)");
  CHECK_THROWS_AS(eigenpairs_fixed_point(u, find_fixed_point(u, vec2(1, 1))), Error);
}

TEST_CASE("eigenfunction evolution and the prolonged invariant") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::uniform_real_distribution<double> ang(0, 2 * std::acos(-1.0));
  const SystemSpec s = builtin("fixedpoint-example");
  const EigenpairSet& set = fp_pairs();
  for (int k = 0; k < 6; ++k) {
    const Vec x = vec2(u(rng), u(rng));
    const double a = ang(rng);
    const Vec dx = vec2(std::cos(a), std::sin(a));
    for (double t : {0.5, 1.0, 2.0}) {
      const auto [y, m] = flow_differential(s, x, t);
      for (std::size_t j = 0; j < 2; ++j) {
        const Complex lam = set[j].lambda();
        const Complex px = set[j].phi(x);
        CHECK(std::abs(set[j].phi(y) - std::exp(lam * t) * px) <= 1e-3 * (1 + std::abs(px)));
        const Complex gx = (set[j].gradient(x) * dx.cast<Complex>())(0, 0);
        const Complex gy = (set[j].gradient(y) * (m * dx).cast<Complex>())(0, 0);
        CHECK(std::abs(gy - std::exp(lam * t) * gx) <= 1e-3 * (1 + std::abs(gx)));
      }
    }
  }
}

TEST_CASE("vanderpol cycle eigenpairs") {
  const SystemSpec s = builtin("vanderpol");
  const LimitCycleModel& lc = vdp_cycle();
  const EigenpairSet& set = vdp_pairs();
  REQUIRE(set.size() == 2);
  CHECK(set.angle_dominant());
  CHECK(std::abs(set[0].lambda() - Complex(0, lc.omega)) < 1e-15);
  CHECK(std::abs(set[0].phi(lc.anchor) - 1.0) < 1e-9);

  for (std::size_t k : {0u, 300u, 777u, 1500u}) {
    const Vec x = lc.samples[k].point;
    const Vec f = s.eval(x);
    const ModeValue a = set[0].evaluate(x);
    INFO("sample " << k);
    // Angle advances at rate ω.
    CHECK(std::abs(a.angle_gradient.dot(f) - lc.omega) < 1e-3);
    // Oracle: direct phase differencing along the cycle.
    const Complex ahead = set[0].phi(lc.samples[k + 10].point);
    const double dphase = wrap(std::arg(ahead) - std::arg(a.value));
    CHECK(std::abs(dphase - lc.omega * (lc.samples[k + 10].time - lc.samples[k].time)) < 1e-3);
    CHECK(std::abs(std::abs(a.value) - 1.0) < 1e-12);
    // Transverse gradient annihilates the tangent.
    const CRowVec g2 = set[1].gradient(x);
    CHECK(std::abs((g2 * f.cast<Complex>())(0, 0)) / (g2.norm() * f.norm()) < 1e-3);
    // Oracle: the transverse gradient is parallel to the monodromy left eigenvector field,
    // i.e. orthogonal to f on the cycle; the left Floquet row at the anchor.
    if (k == 0) {
      const RowVec left = lc.floquet.left.row(1).real();
      const RowVec g = g2.real();
      CHECK(std::abs(std::abs(left.normalized().dot(g.normalized())) - 1.0) < 1e-4);
    }
    // Angle identity.
    const Vec dx = vec2(0.6, -0.8);
    const Complex lhs = (a.gradient * dx.cast<Complex>())(0, 0);
    const Complex rhs = Complex(0, 1) * a.value * a.angle_gradient.dot(dx);
    CHECK(std::abs(lhs - rhs) <= 1e-3);
  }
  // Off the cycle.
  for (const Vec& x : {vec2(0.5, 0.5), vec2(2.5, -2.5), vec2(-1.0, 2.9)}) {
    INFO("x=" << x.transpose());
    CHECK(generator_residual(s, set[0], x) < 1e-3);
    CHECK(generator_residual(s, set[1], x) < 1e-3);
    const double t = 1.0;
    const auto [y, m] = flow_differential(s, x, t);
    for (std::size_t j = 0; j < 2; ++j) {
      const Complex lam = set[j].lambda();
      const Complex px = set[j].phi(x);
      CHECK(std::abs(set[j].phi(y) - std::exp(lam * t) * px) <= 1e-3 * (1 + std::abs(px)));
      const Vec dx = vec2(0.28, 0.96);
      const Complex gx = (set[j].gradient(x) * dx.cast<Complex>())(0, 0);
      const Complex gy = (set[j].gradient(y) * (m * dx).cast<Complex>())(0, 0);
      CHECK(std::abs(gy - std::exp(lam * t) * gx) <= 1e-3 * (1 + std::abs(gx)));
    }
  }
  try {
    set[0].phi(vec2(0, 0));
    FAIL("expected angle-undefined");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AngleUndefined);
  }
}

TEST_CASE("memoization returns identical values") {
  const EigenpairSet& set = fp_pairs();
  const Vec x = vec2(0.3, 0.2);
  const Complex a = set[0].phi(x);
  const std::size_t n = set[0].engine()->cache_size();
  const Complex b = set[0].phi(x);
  CHECK(a == b);
  CHECK(set[0].engine()->cache_size() == n);
}
