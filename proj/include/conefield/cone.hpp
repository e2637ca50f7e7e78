#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "conefield/koopman.hpp"
#include "conefield/types.hpp"

namespace conefield {

enum class ConeMode { RealDominant, AngleDominant };

/// K(x) = {δx : dominant·δx - |sub_j·δx| >= 0 for all j}.
struct ConeSample {
  Vec point;
  RowVec dominant;
  CMat subordinate;  // (n-1) × n
  ConeMode mode = ConeMode::RealDominant;
  double condition = 1.0;  // of the real-ified row stack

  int dimension() const { return static_cast<int>(dominant.size()); }
  /// Raw functionals k_j(δx), one per subordinate row.
  Vec functionals(const Vec& dx) const;
  /// min_j k_j(δx/|δx|); 0 for δx = 0.
  double margin(const Vec& dx) const;
};

struct Membership {
  bool inside = true;
  double margin = 0.0;
};

Membership membership(const ConeSample& cone, const Vec& dx);

/// Cone from eigenpairs at x. Throws AngleUndefined / NoConvergence when the
/// eigenfunctions are unresolved, NotInjective when the stack is singular
/// (condition number >= 1e10), InvalidArgument when a real dominant mode has a
/// non-negligible imaginary gradient.
ConeSample cone_at(const EigenpairSet& pairs, const Vec& x);

/// Builds a cone from explicit rows, computing the condition number; throws
/// NotInjective unless `allow_singular`.
ConeSample make_cone(Vec point, RowVec dominant, CMat subordinate, ConeMode mode, bool allow_singular = false);

/// Source of cones along trajectories.
class ConeField {
 public:
  virtual ~ConeField() = default;
  virtual ConeSample at(const Vec& x) const = 0;
};

class EigenConeField final : public ConeField {
 public:
  explicit EigenConeField(EigenpairSet pairs) : pairs_(std::move(pairs)) {}
  ConeSample at(const Vec& x) const override { return cone_at(pairs_, x); }
  const EigenpairSet& pairs() const { return pairs_; }

 private:
  EigenpairSet pairs_;
};

class FunctionConeField final : public ConeField {
 public:
  explicit FunctionConeField(std::function<ConeSample(const Vec&)> fn) : fn_(std::move(fn)) {}
  ConeSample at(const Vec& x) const override { return fn_(x); }

 private:
  std::function<ConeSample(const Vec&)> fn_;
};

/// Planar rows tabulated on a rectangular grid, bilinearly interpolated.
/// Points outside the grid raise Unresolved.
class TabulatedConeField final : public ConeField {
 public:
  struct Row {
    double x1, x2;
    RowVec dominant;
    CRowVec subordinate;
  };
  TabulatedConeField(std::vector<Row> rows, ConeMode mode);
  /// CSV with header; columns x1,x2,dom_1,dom_2,sub_re_1,sub_re_2,sub_im_1,sub_im_2
  /// (extra trailing columns ignored). Grid nodes may be missing.
  static TabulatedConeField parse_csv(const std::string& text, ConeMode mode = ConeMode::RealDominant);
  ConeSample at(const Vec& x) const override;

 private:
  std::vector<double> xs_, ys_;
  std::vector<std::optional<Row>> table_;  // row-major over (ys, xs); missing cells are Unresolved
  ConeMode mode_;
};

struct AxiomsReport {
  int trials = 0;
  int convexity_violations = 0;
  int scaling_violations = 0;
  int pointedness_violations = 0;
  bool solid = false;
  bool ok() const { return convexity_violations == 0 && scaling_violations == 0 && pointedness_violations == 0 && solid; }
};

AxiomsReport cone_axioms_check(const ConeSample& cone, int trials, std::uint64_t seed = 1);

/// Exact boundary rays of a planar cone (unit vectors, k = 0, dominant > 0);
/// `lo` turns counter-clockwise through the interior to `hi`. Throws
/// InvalidArgument when the cone has no interior or is not planar.
struct PlanarBoundary {
  Vec lo, hi;
  double angle_lo = 0.0, angle_hi = 0.0;  // atan2 of lo / hi
};
PlanarBoundary planar_boundary(const ConeSample& cone);

struct RaySet {
  std::vector<Vec> rays;  // unit vectors
  std::vector<bool> boundary;
};

/// Planar: the two exact boundary rays plus an interior fan (count total).
/// n > 2: half boundary rays found by bisection between interior and exterior
/// samples, half interior rays; deterministic given seed.
RaySet sample_rays(const ConeSample& cone, int count, std::uint64_t seed = 1);

struct VerifyOptions {
  int rays = 16;
  std::vector<double> horizons{0.5, 1.0, 2.0};
  double slack = 1e-6;
  int workers = 1;
  std::uint64_t seed = 1;
  std::size_t max_counterexamples = 100;
  IntegratorConfig integrator{Method::DormandPrince45, 1e-2, 1e-14, 1e-11};
};

struct Counterexample {
  Vec point;
  Vec ray;
  double time = 0.0;
  double margin = 0.0;
};

struct PointMargins {
  Vec point;
  bool resolved = false;
  std::string skip_reason;
  std::vector<double> margins;  // worst margin per horizon (unit tangents)
  double worst = std::numeric_limits<double>::infinity();
};

enum class Verdict { StrictlyPositive, Positive, Counterexamples, Unresolved };
const char* to_string(Verdict v);

struct PositivityReport {
  std::vector<double> horizons;
  double slack = 0.0;
  int rays = 0;
  std::vector<PointMargins> points;
  std::size_t resolved = 0;
  std::size_t skipped = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::size_t counterexample_count = 0;
  std::vector<Counterexample> counterexamples;  // first max_counterexamples
  // Strictness (filled by verify_strictness / certify).
  bool strictness_evaluated = false;
  double strict_T = 0.0;
  double eps_min = 0.0;
  double epsilon_hat = std::numeric_limits<double>::quiet_NaN();
  std::size_t strict_resolved = 0;
  std::size_t strict_skipped = 0;
  Verdict verdict = Verdict::Unresolved;
};

/// Samples rays of K(x) at every grid point, propagates them with the
/// prolonged flow to each horizon and measures membership in K(ψ^t(x)).
PositivityReport verify_positivity(const SystemSpec& spec, const ConeField& field, const std::vector<Vec>& grid,
                                   const VerifyOptions& opts = {});

struct StrictnessResult {
  double epsilon_hat = std::numeric_limits<double>::infinity();
  std::vector<double> per_point;  // NaN where skipped
  std::size_t resolved = 0;
  std::size_t skipped = 0;
  bool strict = false;
};

/// ε̂ = min over grid points and propagated boundary rays at time T of the
/// unit-tangent margin in K(ψ^T(x)).
StrictnessResult verify_strictness(const SystemSpec& spec, const ConeField& field, const std::vector<Vec>& grid,
                                   double T, double eps_min, const VerifyOptions& opts = {});

/// Positivity plus strictness with the verdict filled in.
PositivityReport certify(const SystemSpec& spec, const ConeField& field, const std::vector<Vec>& grid,
                         double strict_T, double eps_min, const VerifyOptions& opts = {});

/// x1 ≺ x2 iff Δφ1 - |Δφj| > 0 for all j >= 2, where Δφ1 is the real part of
/// the dominant difference (or the wrapped phase difference in (-π, π]).
bool conal_order(const EigenpairSet& pairs, const Vec& x1, const Vec& x2);

/// Cone-grid CSV for planar fields. Unresolved points are omitted.
void write_cone_grid_csv(std::ostream& out, const ConeField& field, const std::vector<Vec>& grid, int workers = 1);

}  // namespace conefield
