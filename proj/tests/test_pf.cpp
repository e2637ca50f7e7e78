#include <cmath>
#include <random>
#include <sstream>

#include "conefield/error.hpp"
#include "conefield/pf.hpp"
#include "doctest.h"

using namespace conefield;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

EigenpairSet pairs_for(const SystemSpec& s) { return eigenpairs_fixed_point(s, find_fixed_point(s, vec2(0.1, 0.1))); }

const SystemSpec& fp_spec() {
  static const SystemSpec s = builtin("fixedpoint-example");
  return s;
}

const EigenpairSet& fp_pairs() {
  static const EigenpairSet set = pairs_for(fp_spec());
  return set;
}

const LimitCycleModel& vdp_cycle() {
  static const LimitCycleModel lc = find_limit_cycle(builtin("vanderpol"), vec2(2, 0));
  return lc;
}

const EigenpairSet& vdp_pairs() {
  static const EigenpairSet set = eigenpairs_limit_cycle(builtin("vanderpol"), vdp_cycle());
  return set;
}

}  // namespace

TEST_CASE("pf_vector examples") {
  const SystemSpec lin = builtin("linear-diag(-1,-2)");
  const EigenpairSet lp = pairs_for(lin);
  for (const Vec& x : {vec2(0, 0), vec2(0.7, -0.3), vec2(-1, 1)}) {
    const PFVector p = pf_vector(lp, x);
    CHECK((p.w - vec2(1, 0)).norm() < 1e-8);
    CHECK(p.margin > 0);
  }

  const PFVector p0 = pf_vector(fp_pairs(), vec2(0, 0));
  CHECK((p0.w - vec2(1, 0)).norm() < 1e-8);

  const SystemSpec vdp = builtin("vanderpol");
  for (double frac : {0.0, 0.2, 0.45, 0.7}) {
    const Vec x = vdp_cycle().point_at(frac * vdp_cycle().period);
    const PFVector p = pf_vector(vdp_pairs(), x);
    CHECK(angle_between(p.w, vdp.eval(x)) < 1e-2);
  }

  // Explicit rows: kernel of a complex row with non-parallel real and
  // imaginary parts is trivial.
  CMat sub(1, 2);
  sub << Complex(0, 1), Complex(1, 0);
  RowVec d(2);
  d << 1, 0;
  CHECK_THROWS_AS(pf_vector(make_cone(vec2(0, 0), d, sub, ConeMode::RealDominant)), Error);
}

TEST_CASE("pf_limit_check") {
  const SystemSpec lin = builtin("linear-diag(-1,-2)");
  const EigenpairSet lp = pairs_for(lin);
  const PFLimitResult r = pf_limit_check(lin, lp, vec2(0.5, 0.5), 5.0, vec2(1, 0.1));
  CHECK(r.angle < 1e-2);
  // Closed form: ∂ψ^5 (1, 0.1) = (e^{-5}, 0.1 e^{-10}).
  CHECK(std::abs(r.angle - std::atan(0.1 * std::exp(-5.0))) < 1e-9);
  CHECK(r.invariance_angle < 1e-12);
  CHECK(r.expected_rate == doctest::Approx(std::exp(-5.0)));
  CHECK((r.start - vec2(0.5 * std::exp(5.0), 0.5 * std::exp(10.0))).norm() < 1e-6 * std::exp(10.0));

  const PFVector w = pf_vector(lp, vec2(0.5, 0.5));
  CHECK(pf_limit_check(lin, lp, vec2(0.5, 0.5), 0.0, w.w).angle < 1e-15);
  CHECK_THROWS_AS(pf_limit_check(lin, lp, vec2(0.5, 0.5), 1.0, vec2(0.1, 1)), Error);

  const PFLimitResult f8 = pf_limit_check(fp_spec(), fp_pairs(), vec2(0.3, -0.2), 8.0);
  CHECK(f8.angle < 1e-2);
  const PFLimitResult f4 = pf_limit_check(fp_spec(), fp_pairs(), vec2(0.3, -0.2), 4.0);
  CHECK(f8.angle <= 0.3 * f4.angle);
  MESSAGE("fixedpoint-example limit angles: t=4 " << f4.angle << ", t=8 " << f8.angle);
}

TEST_CASE("forward invariance, residuals and margins on fixedpoint-example") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int k = 0; k < 20; ++k) {
    const Vec x = vec2(u(rng), u(rng));
    const PFVector p = pf_vector(fp_pairs(), x);
    CHECK(p.margin > 0);
    const CRowVec g2 = fp_pairs()[1].gradient(x);
    CHECK(p.residuals[0] <= 1e-4 * g2.norm());
    for (double t : {0.5, 1.0}) {
      const auto [y, m] = flow_differential(fp_spec(), x, t);
      CHECK(angle_between(m * p.w, pf_vector(fp_pairs(), y).w) <= 1e-3);
    }
  }
}

TEST_CASE("pf_curve") {
  const SystemSpec lin = builtin("linear-diag(-1,-2)");
  const EigenpairSet lp = pairs_for(lin);
  const PFCurve c = pf_curve(lp, vec2(0, 0.5), 1.0, 0.1);
  CHECK(c.complete);
  REQUIRE(c.points.size() == 11);
  CHECK((c.points.back() - vec2(1, 0.5)).norm() < 1e-8);
  for (std::size_t k = 0; k < c.points.size(); ++k) {
    CHECK(std::abs(c.points[k][1] - 0.5) < 1e-8);
    CHECK(std::abs(c.phi[k][0] - Complex(0.5, 0)) < 1e-6);
  }

  const PFCurve single = pf_curve(lp, vec2(0.2, 0.3), 0.0, 0.1);
  REQUIRE(single.points.size() == 1);
  CHECK(single.points[0] == vec2(0.2, 0.3));

  const PFCurve back = pf_curve(lp, vec2(0, 0.5), -0.5, 0.1);
  CHECK((back.points.back() - vec2(-0.5, 0.5)).norm() < 1e-8);

  const PFCurve f = pf_curve(fp_pairs(), vec2(0, 0.4), 1.0, 0.05);
  CHECK(f.complete);
  for (const CVec& v : f.phi) CHECK(std::abs(v[0] - f.phi[0][0]) < 1e-3 * (1 + std::abs(f.phi[0][0])));

  std::ostringstream out;
  write_pf_curve_csv(out, c);
  CHECK(out.str().rfind("s,x1,x2,phi_2_re,phi_2_im\n", 0) == 0);
}

TEST_CASE("level_grid") {
  const SystemSpec lin = builtin("linear-diag(-1,-2)");
  const EigenpairSet lp = pairs_for(lin);
  std::vector<Vec> grid;
  for (double a : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    for (double b : {-1.0, 0.0, 1.0}) grid.push_back(vec2(a, b));
  }
  const auto mag = level_grid(lp, grid, LevelKind::DominantMagnitude);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    REQUIRE(mag[i]);
    CHECK(std::abs(mag[i]->real() - std::abs(grid[i][0])) < 1e-6);
  }

  // Winding oracle: the phase increases by 2π around a loop enclosing Γ's interior.
  std::vector<Vec> loop;
  const int m = 24;
  for (int k = 0; k <= m; ++k) {
    const double a = 2 * std::acos(-1.0) * k / m;
    loop.push_back(vec2(2.2 * std::cos(a), 2.2 * std::sin(a)));
  }
  const auto ang = level_grid(vdp_pairs(), loop, LevelKind::DominantAngle, 2, 2);
  double total = 0;
  for (int k = 0; k < m; ++k) {
    REQUIRE(ang[k]);
    double d = ang[k + 1]->real() - ang[k]->real();
    d = std::remainder(d, 2 * std::acos(-1.0));
    total += d;
  }
  CHECK(std::abs(std::abs(total) - 2 * std::acos(-1.0)) < 1e-6);

  // φ2 = x2 + O(|x|²): on the x1-axis only the quadratic term survives.
  const auto sub = level_grid(fp_pairs(), {vec2(0.01, 0), vec2(-0.01, 0), vec2(0, 0.01)}, LevelKind::Subordinate, 2);
  REQUIRE(sub[0]);
  CHECK(std::abs(*sub[0]) < 0.02 * std::abs(*sub[2]));
  CHECK(std::abs(*sub[1]) < 0.02 * std::abs(*sub[2]));
  CHECK_THROWS_AS(level_grid(fp_pairs(), grid, LevelKind::Subordinate, 3), Error);

  CHECK_FALSE(level_grid(vdp_pairs(), {vec2(0, 0)}, LevelKind::DominantAngle)[0].has_value());
}

TEST_CASE("pf field export and continuity") {
  std::vector<Vec> grid;
  const int res = 11;
  for (int j = 0; j < res; ++j) {
    for (int i = 0; i < res; ++i) grid.push_back(vec2(-0.5 + 0.1 * i, -0.5 + 0.1 * j));
  }
  const auto field = pf_field(fp_pairs(), grid, 2);
  for (const auto& p : field) CHECK(p.has_value());
  CHECK(max_adjacent_angle(field, res, res) < 0.2);
  std::ostringstream out;
  write_pf_field_csv(out, field);
  const std::string s = out.str();
  CHECK(s.rfind("x1,x2,w1,w2,margin,res_2\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 122);
}
