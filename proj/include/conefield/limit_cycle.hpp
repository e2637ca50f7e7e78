#pragma once

#include <vector>

#include "conefield/fixed_point.hpp"
#include "conefield/integrator.hpp"
#include "conefield/types.hpp"
#include "conefield/vectorfield.hpp"

namespace conefield {

struct LimitCycleConfig {
  IntegratorConfig integrator{Method::DormandPrince45, 1e-2, 1e-13, 1e-13};
  double transient = 100.0;        // time integrated before the section is placed
  double closure_tol = 1e-9;       // successive return points must agree to this
  int max_returns = 200;
  double max_return_time = 1e3;    // no crossing within this time => not oscillating
  int samples = 2048;              // dense cycle samples (at least 512)
  double multiplier_tol = 1e-5;    // trivial Floquet multiplier tolerance
  double crossing_time_tol = 1e-13;
};

struct CycleSample {
  double phase = 0.0;  // θ in [0, 2π)
  double time = 0.0;   // θ / ω
  Vec point;
  Vec tangent;  // f(point)
  Vec normal;   // unit, orthogonal to tangent (planar cycles only)
};

/// A stable periodic orbit with its Floquet data. Immutable after
/// construction; it keeps its own copy of the system so exact points on the
/// cycle can be generated on demand.
struct LimitCycleModel {
  explicit LimitCycleModel(SystemSpec spec) : system(std::move(spec)) {}

  SystemSpec system;
  double period = 0.0;
  double omega = 0.0;
  Vec anchor;
  Vec section_normal;
  std::vector<CycleSample> samples;
  double closure_error = 0.0;  // |ψ^T(anchor) - anchor|
  Mat monodromy;
  EigenData floquet;           // multipliers, trivial one first
  CVec exponents;              // nontrivial, log(μ)/T, descending real part
  CMat exponent_left;          // rows: left eigenvectors matching `exponents`
  // Unwrapped polar angle of each sample relative to the first, times the
  // winding sign; empty unless the cycle is star-shaped about the origin.
  std::vector<double> polar_offsets;
  int winding = 0;  // +1 counter-clockwise, -1 clockwise about the origin

  int dimension() const { return system.dimension(); }
  /// Exact cycle point at phase-time s (taken modulo the period), obtained by
  /// integrating from the nearest stored sample.
  Vec point_at(double s) const;
  /// Unit normal ξ at phase-time s (planar only).
  Vec normal_at(double s) const;
  /// Sample index whose time is the largest not exceeding s (mod T).
  std::size_t sample_before(double s) const;
};

LimitCycleModel find_limit_cycle(const SystemSpec& spec, const Vec& x0, const LimitCycleConfig& cfg = {});

/// Unit normal ξ = rot(-90°) f / |f| used for planar cycles.
Vec planar_normal(const Vec& tangent);

struct RadialProjection {
  double time = 0.0;  // phase-time on the cycle
  Vec point;
};

/// Intersection of the cycle with the ray from the origin through x (planar
/// cycles). Bracketing on the samples, linear interpolation, then Newton
/// refinement against the exact cycle.
RadialProjection radial_projection(const LimitCycleModel& lc, const Vec& x);

}  // namespace conefield
