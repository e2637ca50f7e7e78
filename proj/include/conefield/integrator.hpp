#pragma once

#include <limits>
#include <vector>

#include "conefield/types.hpp"
#include "conefield/vectorfield.hpp"

namespace conefield {

enum class Method { RK4, DormandPrince45 };

struct IntegratorConfig {
  Method method = Method::DormandPrince45;
  double initial_step = 1e-2;  // also the fixed step for RK4
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 2'000'000;
  double divergence_radius = 1e6;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

/// Cubic Hermite interpolant through (t0, y0, d0) and (t1, y1, d1).
template <typename T>
T hermite(double t0, double t1, const T& y0, const T& y1, const T& d0, const T& d1, double t) {
  const double h = t1 - t0;
  const double s = (t - t0) / h;
  const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
  const double h10 = s * (1 - s) * (1 - s);
  const double h01 = s * s * (3 - 2 * s);
  const double h11 = s * s * (s - 1);
  return h00 * y0 + (h10 * h) * d0 + h01 * y1 + (h11 * h) * d1;
}

/// Stored nodes of a trajectory with cubic Hermite dense output.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> rates;  // f(x) at each node

  Vec at(double t) const;
  const Vec& back() const { return states.back(); }
};

/// Joint trajectory of (x, M) for the prolonged system; `frames[k]` is the
/// image of the initial frame under ∂ψ^{t_k - t_0}.
struct TangentTrajectory : Trajectory {
  std::vector<Mat> frames;
  std::vector<Mat> frame_rates;  // ∂f(x) M at each node

  Mat frame_at(double t) const;
};

/// Step-by-step integrator for x' = f(x) and optionally M' = ∂f(x) M.
///
/// The frame M is n×k; k = 0 integrates the plain flow. Error control is
/// block-relative: the state and every frame column are scaled by their own
/// sup-norm, so exponentially shrinking frames keep full relative accuracy.
class Propagator {
 public:
  Propagator(const SystemSpec& spec, const IntegratorConfig& cfg, Vec x0, Mat m0 = Mat(),
             double t0 = 0.0);

  /// Takes one accepted step toward `t_stop` without passing it. Returns true
  /// once `t_stop` is reached. Throws DivergenceError / Error(MaxSteps).
  bool advance(double t_stop);
  /// Advances until `t_stop`.
  void advance_to(double t_stop);

  /// State and frame at `time() + dt` from a single untested step of the
  /// underlying scheme (|dt| no larger than the last accepted step).
  void peek(double dt, Vec& x, Mat* m) const;

  double time() const { return t_; }
  const Vec& state() const { return x_; }
  const Mat& frame() const { return m_; }
  const Vec& state_rate() const { return fx_; }
  const Mat& frame_rate() const { return fm_; }
  long steps() const { return steps_; }
  double last_step() const { return last_h_; }
  bool has_frame() const { return m_.cols() > 0; }

 private:
  void rhs(const Vec& x, const Mat& m, Vec& fx, Mat& fm) const;
  void check_state(const Vec& x) const;
  double error_norm(const Vec& x0, const Mat& m0, const Vec& x1, const Mat& m1, const Vec& ex,
                    const Mat& em) const;
  void dp_step(double h, Vec& x1, Mat& m1, Vec& fx1, Mat& fm1, Vec* ex, Mat* em) const;
  void rk4_step(double h, Vec& x1, Mat& m1) const;

  const SystemSpec* spec_;
  IntegratorConfig cfg_;
  double t_;
  Vec x_;
  Mat m_;
  Vec fx_;
  Mat fm_;
  double h_;
  double last_h_ = 0.0;
  long steps_ = 0;
};

/// Flow ψ^t from x0 up to t_end (negative t_end integrates backward).
Trajectory integrate(const SystemSpec& spec, const Vec& x0, double t_end,
                     const IntegratorConfig& cfg = {});

/// Prolonged flow (ψ^t(x0), ∂ψ^t(x0) M0).
TangentTrajectory integrate_prolonged(const SystemSpec& spec, const Vec& x0, const Mat& m0,
                                      double t_end, const IntegratorConfig& cfg = {});

/// Endpoint-only conveniences.
Vec flow_map(const SystemSpec& spec, const Vec& x0, double t, const IntegratorConfig& cfg = {});
/// Returns (ψ^t(x0), ∂ψ^t(x0)).
std::pair<Vec, Mat> flow_differential(const SystemSpec& spec, const Vec& x0, double t,
                                      const IntegratorConfig& cfg = {});

}  // namespace conefield
