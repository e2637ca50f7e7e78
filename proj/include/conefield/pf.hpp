#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "conefield/cone.hpp"
#include "conefield/koopman.hpp"
#include "conefield/types.hpp"

namespace conefield {

/// Unit Perron–Frobenius direction: spans the common kernel of the
/// subordinate differentials, oriented into the interior of K(x).
struct PFVector {
  Vec point;
  Vec w;
  bool flipped = false;          // sign reversed relative to the raw singular vector
  double margin = 0.0;           // membership margin of w in K(x)
  std::vector<double> residuals;           // |∂φ_j(x)·w|, j >= 2
  std::vector<double> relative_residuals;  // residuals[j] / |∂φ_j(x)|
};

/// From explicit cone rows. Throws NullSpace when the kernel is not
/// one-dimensional (σ_min >= 1e-6 σ_max or σ_next <= 1e-3 σ_max) and
/// NotInjective when neither sign lies inside the cone.
PFVector pf_vector(const ConeSample& cone);
PFVector pf_vector(const EigenpairSet& pairs, const Vec& x);

/// Angle in [0, π] between two nonzero vectors.
double angle_between(const Vec& a, const Vec& b);

struct PFLimitResult {
  double angle = 0.0;             // between normalized ∂ψ^t(ψ^{-t}x)δx and w(x)
  double invariance_angle = 0.0;  // between normalized ∂ψ^t(x)w(x) and w(ψ^t x)
  double expected_rate = 0.0;     // e^{(Re λ2 - Re λ1) t}
  Vec start;                      // ψ^{-t}(x)
  Vec seed;                       // tangent used at ψ^{-t}(x)
};

/// Backward-limit cross-check. `seed` empty picks an interior ray of
/// K(ψ^{-t}(x)); a given seed must lie in that cone. Backward divergence
/// propagates as an error.
PFLimitResult pf_limit_check(const SystemSpec& spec, const EigenpairSet& pairs, const Vec& x, double t,
                             const Vec& seed = Vec(), const IntegratorConfig& cfg = {
                                 Method::DormandPrince45, 1e-2, 1e-14, 1e-12});

struct PFCurve {
  std::vector<double> s;
  std::vector<Vec> points;
  std::vector<CVec> phi;  // subordinate values φ_j(γ(s)), j >= 2
  bool complete = true;
  std::string status;     // reason for early termination
};

/// RK4 integral curve of w from x0 over arc length [0, s_end] (s_end < 0
/// follows -w). Stops early with complete = false when w is unresolved.
PFCurve pf_curve(const EigenpairSet& pairs, const Vec& x0, double s_end, double step);

enum class LevelKind { DominantMagnitude, DominantAngle, Subordinate };

/// Eigenfunction samples for contouring. `mode` is the 1-based mode index for
/// LevelKind::Subordinate. Unresolved points are std::nullopt.
std::vector<std::optional<Complex>> level_grid(const EigenpairSet& pairs, const std::vector<Vec>& grid,
                                               LevelKind kind, int mode = 2, int workers = 1);

/// PF vectors over a grid; unresolved points are std::nullopt.
std::vector<std::optional<PFVector>> pf_field(const EigenpairSet& pairs, const std::vector<Vec>& grid,
                                              int workers = 1);

/// Largest angle between horizontally/vertically adjacent resolved samples of
/// an nx × ny row-major grid (0 if none).
double max_adjacent_angle(const std::vector<std::optional<PFVector>>& field, int nx, int ny);

/// Columns x1..xn, w1..wn, margin, res_2..res_n; unresolved points omitted.
void write_pf_field_csv(std::ostream& out, const std::vector<std::optional<PFVector>>& field);
/// Columns s, x1..xn, phi_j_re, phi_j_im for j = 2..n.
void write_pf_curve_csv(std::ostream& out, const PFCurve& curve);

}  // namespace conefield
