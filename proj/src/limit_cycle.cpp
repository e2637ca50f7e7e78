#include "conefield/limit_cycle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "conefield/error.hpp"

namespace conefield {

namespace {

Vec rk4_flow(const SystemSpec& spec, Vec x, double tau, double max_h) {
  if (tau == 0.0) return x;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(tau) / max_h)));
  const double h = tau / steps;
  for (int i = 0; i < steps; ++i) {
    const Vec k1 = spec.eval(x);
    const Vec k2 = spec.eval(x + 0.5 * h * k1);
    const Vec k3 = spec.eval(x + 0.5 * h * k2);
    const Vec k4 = spec.eval(x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

double cross2(const Vec& a, const Vec& b) { return a[0] * b[1] - a[1] * b[0]; }

}  // namespace

Vec planar_normal(const Vec& tangent) {
  Vec xi(2);
  xi << tangent[1], -tangent[0];
  const double norm = xi.norm();
  if (norm == 0.0) throw Error(ErrorKind::InvalidArgument, "normal undefined at an equilibrium");
  return xi / norm;
}

std::size_t LimitCycleModel::sample_before(double s) const {
  double r = std::fmod(s, period);
  if (r < 0.0) r += period;
  const double dt = period / static_cast<double>(samples.size());
  auto k = static_cast<std::size_t>(std::floor(r / dt));
  return std::min(k, samples.size() - 1);
}

Vec LimitCycleModel::point_at(double s) const {
  double r = std::fmod(s, period);
  if (r < 0.0) r += period;
  const std::size_t k = sample_before(r);
  const double dt = period / static_cast<double>(samples.size());
  return rk4_flow(system, samples[k].point, r - samples[k].time, dt / 4.0);
}

Vec LimitCycleModel::normal_at(double s) const { return planar_normal(system.eval(point_at(s))); }

LimitCycleModel find_limit_cycle(const SystemSpec& spec, const Vec& x0, const LimitCycleConfig& cfg) {
  if (cfg.samples < 512) throw Error(ErrorKind::InvalidArgument, "at least 512 cycle samples are required");
  const int n = spec.dimension();

  Propagator p(spec, cfg.integrator, x0);
  p.advance_to(cfg.transient);
  const Vec start = p.state();
  const Vec f0 = spec.eval(start);
  if (f0.norm() <= 1e-10 * (1.0 + start.norm())) {
    throw Error(ErrorKind::NotOscillating, "orbit converged to an equilibrium; no oscillation to detect");
  }
  const Vec normal = f0.normalized();
  auto section = [&](const Vec& x) { return normal.dot(x - start); };

  // Successive same-direction crossings of the hyperplane through `start`
  // orthogonal to the flow.
  double prev_cross_time = p.time();
  Vec prev_point = start;
  double last_crossing_time = p.time();
  double period = 0.0;
  Vec anchor;
  int returns = 0;
  bool left_section = false;
  for (;;) {
    Propagator before = p;
    const double s_before = section(p.state());
    p.advance(std::numeric_limits<double>::infinity());
    const double s_after = section(p.state());
    if (s_after < 0.0) left_section = true;
    if (p.time() - last_crossing_time > cfg.max_return_time) {
      throw Error(ErrorKind::NotOscillating, "no return to the Poincare section within " +
                                                 std::to_string(cfg.max_return_time) + " time units");
    }
    if (!(left_section && s_before < 0.0 && s_after >= 0.0)) continue;

    // Bisection on the step: states inside come from re-stepping the node.
    double lo = 0.0;
    double hi = p.time() - before.time();
    Vec x_mid;
    for (int it = 0; it < 200 && (it < 10 || hi - lo > cfg.crossing_time_tol); ++it) {
      const double mid = 0.5 * (lo + hi);
      before.peek(mid, x_mid, nullptr);
      if (section(x_mid) < 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double t_cross = before.time() + 0.5 * (lo + hi);
    Vec q;
    before.peek(0.5 * (lo + hi), q, nullptr);
    q -= section(q) * normal;  // project onto the section
    left_section = false;
    last_crossing_time = t_cross;

    if ((q - prev_point).norm() < cfg.closure_tol) {
      period = t_cross - prev_cross_time;
      anchor = q;
      break;
    }
    if (++returns > cfg.max_returns) {
      throw Error(ErrorKind::NoConvergence, "return map did not contract to the closure tolerance after " +
                                                std::to_string(cfg.max_returns) + " returns");
    }
    prev_point = q;
    prev_cross_time = t_cross;
  }

  LimitCycleModel lc(spec);
  lc.period = period;
  lc.omega = 2.0 * std::numbers::pi / period;
  lc.anchor = anchor;
  lc.section_normal = normal;

  // Dense samples at uniform phases.
  const int count = cfg.samples;
  lc.samples.reserve(static_cast<std::size_t>(count));
  Propagator sp(spec, cfg.integrator, anchor);
  for (int k = 0; k < count; ++k) {
    const double s = period * k / count;
    sp.advance_to(s);
    CycleSample cs;
    cs.time = s;
    cs.phase = lc.omega * s;
    cs.point = sp.state();
    cs.tangent = sp.state_rate();
    if (n == 2) cs.normal = planar_normal(cs.tangent);
    lc.samples.push_back(std::move(cs));
  }
  sp.advance_to(period);
  lc.closure_error = (sp.state() - anchor).norm();

  if (n == 2) {
    // Polar angles: strictly monotone with one full turn => star-shaped.
    std::vector<double> offsets(static_cast<std::size_t>(count));
    double acc = 0.0;
    for (int k = 1; k < count; ++k) {
      const Vec& a = lc.samples[static_cast<std::size_t>(k - 1)].point;
      const Vec& b = lc.samples[static_cast<std::size_t>(k)].point;
      acc += std::atan2(cross2(a, b), a.dot(b));
      offsets[static_cast<std::size_t>(k)] = acc;
    }
    const Vec& last = lc.samples.back().point;
    const double total = acc + std::atan2(cross2(last, anchor), last.dot(anchor));
    const double sign = total > 0 ? 1.0 : -1.0;
    bool monotone = std::abs(std::abs(total) - 2.0 * std::numbers::pi) < 1e-6;
    for (int k = 1; k < count && monotone; ++k) {
      monotone = sign * (offsets[static_cast<std::size_t>(k)] - offsets[static_cast<std::size_t>(k - 1)]) > 0.0;
    }
    if (monotone) {
      for (double& o : offsets) o *= sign;
      lc.polar_offsets = std::move(offsets);
      lc.winding = static_cast<int>(sign);
    }
  }

  // Monodromy and Floquet data.
  Propagator mp(spec, cfg.integrator, anchor, Mat::Identity(n, n));
  mp.advance_to(period);
  lc.monodromy = mp.frame();
  EigenData eig = sorted_eigen(lc.monodromy);
  Eigen::Index trivial = 0;
  (eig.values.array() - Complex(1.0, 0.0)).abs().minCoeff(&trivial);
  if (std::abs(eig.values[trivial] - 1.0) > cfg.multiplier_tol) {
    throw Error(ErrorKind::NoConvergence, "monodromy has no multiplier within " +
                                              std::to_string(cfg.multiplier_tol) + " of 1");
  }
  // Reorder: trivial multiplier first, the rest by descending exponent real part.
  std::vector<Eigen::Index> rest;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j != trivial) rest.push_back(j);
  }
  auto exponent = [&](Eigen::Index j) { return std::log(eig.values[j]) / period; };
  std::stable_sort(rest.begin(), rest.end(), [&](Eigen::Index a, Eigen::Index b) {
    return exponent(a).real() > exponent(b).real();
  });
  EigenData ordered;
  ordered.values.resize(n);
  ordered.right.resize(n, n);
  ordered.left.resize(n, n);
  ordered.condition = eig.condition;
  std::vector<Eigen::Index> order{trivial};
  order.insert(order.end(), rest.begin(), rest.end());
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    ordered.values[k] = eig.values[src];
    ordered.right.col(k) = eig.right.col(src);
    ordered.left.row(k) = eig.left.row(src);
  }
  lc.floquet = ordered;
  lc.exponents.resize(n - 1);
  lc.exponent_left.resize(n - 1, n);
  for (Eigen::Index k = 1; k < n; ++k) {
    lc.exponents[k - 1] = std::log(ordered.values[k]) / period;
    lc.exponent_left.row(k - 1) = ordered.left.row(k);
  }
  return lc;
}

RadialProjection radial_projection(const LimitCycleModel& lc, const Vec& x) {
  if (lc.dimension() != 2) throw Error(ErrorKind::InvalidArgument, "radial projection needs a planar cycle");
  if (x.norm() < 1e-14) throw Error(ErrorKind::AngleUndefined, "radial projection undefined at the origin");

  const std::size_t count = lc.samples.size();
  const double dt = lc.period / static_cast<double>(count);
  // Bracket [k, k+1] where cross(x, Γ) changes sign with Γ on x's side.
  std::size_t best = count;
  if (!lc.polar_offsets.empty()) {
    const Vec& a0 = lc.samples[0].point;
    double d = lc.winding * std::atan2(cross2(a0, x), a0.dot(x));
    if (d < 0.0) d += 2.0 * std::numbers::pi;
    auto it = std::upper_bound(lc.polar_offsets.begin(), lc.polar_offsets.end(), d);
    best = static_cast<std::size_t>(it - lc.polar_offsets.begin()) - 1;
  } else {
    for (std::size_t k = 0; k < count; ++k) {
      const Vec& a = lc.samples[k].point;
      const Vec& b = lc.samples[(k + 1) % count].point;
      const double fa = cross2(x, a);
      const double fb = cross2(x, b);
      if ((fa == 0.0 && x.dot(a) > 0.0) ||
          ((fa < 0.0) != (fb < 0.0) && fb != 0.0 && (x.dot(a) > 0.0 || x.dot(b) > 0.0))) {
        best = k;
        break;
      }
    }
  }
  if (best >= count) throw Error(ErrorKind::NoIntersection, "ray from the origin does not meet the cycle");

  // Root of cross(x, H(τ)) on the Hermite cubic through the bracket samples.
  const CycleSample& sa = lc.samples[best];
  const CycleSample& sb = lc.samples[(best + 1) % count];
  const double t0 = sa.time;
  const double t1 = t0 + dt;
  auto cubic = [&](double t) { return hermite(t0, t1, sa.point, sb.point, sa.tangent, sb.tangent, t); };
  double lo = t0;
  double hi = t1;
  double flo = cross2(x, sa.point);
  double fhi = cross2(x, sb.point);
  double s = (flo == fhi) ? t0 : t0 - flo * dt / (fhi - flo);
  if ((flo < 0.0) != (fhi < 0.0)) {
    for (int it = 0; it < 60; ++it) {
      // Regula falsi (Illinois) on the cubic.
      const double fs = cross2(x, cubic(s));
      if (fs == 0.0) break;
      if ((fs < 0.0) == (flo < 0.0)) {
        lo = s;
        flo = fs;
        fhi *= 0.5;
      } else {
        hi = s;
        fhi = fs;
        flo *= 0.5;
      }
      const double next = lo - flo * (hi - lo) / (fhi - flo);
      if (std::abs(next - s) <= 1e-15 * lc.period) {
        s = next;
        break;
      }
      s = next;
    }
  }

  // Newton on F(s) = cross(x, Γ(s)) against the exact cycle.
  Vec point = lc.point_at(s);
  for (int it = 0; it < 8; ++it) {
    const Vec f = lc.system.eval(point);
    const double slope = cross2(x, f);
    if (slope == 0.0) break;
    const double step = cross2(x, point) / slope;
    s -= step;
    point = lc.point_at(s);
    if (std::abs(step) <= 1e-14 * lc.period) break;
  }
  s = std::fmod(s, lc.period);
  if (s < 0.0) s += lc.period;
  if (point.dot(x) <= 0.0) throw Error(ErrorKind::NoIntersection, "ray from the origin does not meet the cycle");
  return {s, point};
}

}  // namespace conefield
