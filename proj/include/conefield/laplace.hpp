#pragma once

#include <functional>
#include <string>
#include <vector>

#include "conefield/integrator.hpp"
#include "conefield/types.hpp"
#include "conefield/vectorfield.hpp"

namespace conefield {

/// Observable on the state space. Plain observables are g(x); prolonged ones
/// are g̃(x, δx) = r(x)·δx, stored as the row r(x) so linearity in δx is
/// structural.
struct Observable {
  enum class Kind { Plain, Prolonged };

  Kind kind = Kind::Plain;
  std::string name;
  std::function<Complex(const Vec&)> value;  // plain
  std::function<CRowVec(const Vec&)> row;    // prolonged

  static Observable plain(std::string name, std::function<Complex(const Vec&)> g);
  static Observable prolonged(std::string name, std::function<CRowVec(const Vec&)> r);
  /// x_i (plain) and e_iᵀ δx (prolonged), 0-based index.
  static Observable coordinate(int i);
  static Observable coordinate_row(int i, int n);
  /// cᵀ(x - x0) and cᵀ δx.
  static Observable linear(std::string name, CRowVec c, Vec x0);
  static Observable linear_row(std::string name, CRowVec c);

  Complex operator()(const Vec& x) const;
  Complex operator()(const Vec& x, const Vec& dx) const;
};

struct AverageConfig {
  double window = 1.0;         // ΔT
  double max_horizon = 200.0;  // T_max
  double tol = 1e-6;           // relative change between successive windows
  double skip = 0.0;           // transient discarded before the first window
  // When the change never reaches `tol` (rounding amplified by e^{-λt}), the
  // best window is accepted if its change is below this.
  double accept_tol = 1e-4;
  int patience = 4;  // windows past the best one before giving up
  // Known rate μ (Re μ < 0) of the leading contamination e^{μt}: successive
  // windows are combined as (A_k - e^{μΔT} A_{k-1}) / (1 - e^{μΔT}). One entry
  // applies to every component, otherwise one per component; empty disables.
  std::vector<Complex> decay;
  IntegratorConfig integrator{Method::DormandPrince45, 1e-2, 1e-20, 1e-12};

  void validate() const;
};

struct AverageResult {
  CVec value;
  double residual = 0.0;  // relative change over the accepted window
  double horizon = 0.0;   // end time of the accepted window
  int windows = 0;
  bool converged = false;  // residual <= tol
};

/// h(t, x(t), M(t)); M is empty along plain trajectories.
using Integrand = std::function<CVec(double, const Vec&, const Mat&)>;

/// Successive window means (1/ΔT)∫ h dt along a (prolonged) trajectory.
/// Window boundaries are integrator nodes; inside each step the integrand is
/// sampled at three Gauss–Legendre points of the Hermite dense output.
class WindowAverager {
 public:
  WindowAverager(const SystemSpec& spec, const AverageConfig& cfg, Vec x0, Mat m0, Integrand h);

  /// Mean over [window_start(), window_start() + ΔT], then moves on.
  CVec next();
  double window_start() const { return start_; }
  const Propagator& propagator() const { return prop_; }

 private:
  CVec integrate_to(double t_end);

  AverageConfig cfg_;
  Propagator prop_;
  Integrand h_;
  double start_;
};

/// Runs windows until the relative change drops below tol. Throws
/// NoConvergence (with the last residual) when no window is acceptable.
AverageResult converge_average(WindowAverager& averager, const AverageConfig& cfg);

/// Truncated Laplace average lim (1/T)∫_0^T e^{-λt} g(ψ^t x) dt, estimated by
/// the mean over the latest converged window.
AverageResult laplace_average(const SystemSpec& spec, const Observable& g, Complex lambda, const Vec& x,
                              const AverageConfig& cfg = {});

/// Same along the prolonged flow from (x, δx) with a prolonged observable.
AverageResult laplace_average_prolonged(const SystemSpec& spec, const Observable& g, Complex lambda,
                                        const Vec& x, const Vec& dx, const AverageConfig& cfg = {});

}  // namespace conefield
