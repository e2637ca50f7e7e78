#include "conefield/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conefield/error.hpp"

namespace conefield {

void IntegratorConfig::validate() const {
  if (!(initial_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "initial step must be positive");
  if (!(abs_tol >= 0.0) || !(rel_tol > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "tolerances must be positive");
  }
  if (!(divergence_radius > 0.0)) throw Error(ErrorKind::InvalidArgument, "divergence radius must be positive");
  if (max_steps <= 0) throw Error(ErrorKind::InvalidArgument, "max steps must be positive");
  if (!(max_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "max step must be positive");
}

namespace {

// Dormand–Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

template <typename V>
double sup(const V& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

std::size_t locate(const std::vector<double>& times, double t) {
  // Index i such that t lies in [times[i], times[i+1]] (either direction).
  const bool forward = times.back() >= times.front();
  std::size_t lo = 0;
  std::size_t hi = times.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if ((times[mid] <= t) == forward) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}


}  // namespace

Vec Trajectory::at(double t) const {
  if (times.size() == 1) return states.front();
  const std::size_t i = locate(times, t);
  return hermite(times[i], times[i + 1], states[i], states[i + 1], rates[i], rates[i + 1], t);
}

Mat TangentTrajectory::frame_at(double t) const {
  if (times.size() == 1) return frames.front();
  const std::size_t i = locate(times, t);
  return hermite(times[i], times[i + 1], frames[i], frames[i + 1], frame_rates[i],
                 frame_rates[i + 1], t);
}

Propagator::Propagator(const SystemSpec& spec, const IntegratorConfig& cfg, Vec x0, Mat m0,
                       double t0)
    : spec_(&spec), cfg_(cfg), t_(t0), x_(std::move(x0)), m_(std::move(m0)) {
  cfg_.validate();
  if (x_.size() != spec.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "initial state has wrong length");
  }
  if (m_.size() == 0) m_.resize(spec.dimension(), 0);
  if (m_.rows() != spec.dimension()) throw Error(ErrorKind::DimensionMismatch, "frame has wrong row count");
  if (!x_.allFinite() || !m_.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite initial data");
  check_state(x_);
  rhs(x_, m_, fx_, fm_);
  h_ = std::min(cfg_.initial_step, cfg_.max_step);
}

void Propagator::rhs(const Vec& x, const Mat& m, Vec& fx, Mat& fm) const {
  if (m.cols() == 0) {
    fx = spec_->eval(x);
    fm.resize(x.size(), 0);
    return;
  }
  Mat jac;
  spec_->eval_with_jacobian(x, fx, jac);
  fm.noalias() = jac * m;
}

void Propagator::check_state(const Vec& x) const {
  if (!x.allFinite() || x.norm() > cfg_.divergence_radius) {
    throw DivergenceError(t_, x,
                          "trajectory left the divergence radius " +
                              std::to_string(cfg_.divergence_radius) + " at t=" + std::to_string(t_));
  }
}

double Propagator::error_norm(const Vec& x0, const Mat& m0, const Vec& x1, const Mat& m1,
                              const Vec& ex, const Mat& em) const {
  constexpr double kFloor = std::numeric_limits<double>::min();
  double err = sup(ex) / std::max(kFloor, cfg_.abs_tol + cfg_.rel_tol * std::max(sup(x0), sup(x1)));
  for (Eigen::Index c = 0; c < m0.cols(); ++c) {
    const double scale = cfg_.abs_tol + cfg_.rel_tol * std::max(sup(m0.col(c)), sup(m1.col(c)));
    err = std::max(err, sup(em.col(c)) / std::max(kFloor, scale));
  }
  return err;
}

void Propagator::dp_step(double h, Vec& x1, Mat& m1, Vec& fx1, Mat& fm1, Vec* ex, Mat* em) const {
  const Vec& k1x = fx_;
  const Mat& k1m = fm_;
  Vec k2x, k3x, k4x, k5x, k6x;
  Mat k2m, k3m, k4m, k5m, k6m;
  rhs(x_ + h * (a21 * k1x), m_ + h * (a21 * k1m), k2x, k2m);
  rhs(x_ + h * (a31 * k1x + a32 * k2x), m_ + h * (a31 * k1m + a32 * k2m), k3x, k3m);
  rhs(x_ + h * (a41 * k1x + a42 * k2x + a43 * k3x), m_ + h * (a41 * k1m + a42 * k2m + a43 * k3m),
      k4x, k4m);
  rhs(x_ + h * (a51 * k1x + a52 * k2x + a53 * k3x + a54 * k4x),
      m_ + h * (a51 * k1m + a52 * k2m + a53 * k3m + a54 * k4m), k5x, k5m);
  rhs(x_ + h * (a61 * k1x + a62 * k2x + a63 * k3x + a64 * k4x + a65 * k5x),
      m_ + h * (a61 * k1m + a62 * k2m + a63 * k3m + a64 * k4m + a65 * k5m), k6x, k6m);
  x1 = x_ + h * (b1 * k1x + b3 * k3x + b4 * k4x + b5 * k5x + b6 * k6x);
  m1 = m_ + h * (b1 * k1m + b3 * k3m + b4 * k4m + b5 * k5m + b6 * k6m);
  rhs(x1, m1, fx1, fm1);
  if (ex != nullptr) {
    *ex = h * (e1 * k1x + e3 * k3x + e4 * k4x + e5 * k5x + e6 * k6x + e7 * fx1);
    *em = h * (e1 * k1m + e3 * k3m + e4 * k4m + e5 * k5m + e6 * k6m + e7 * fm1);
  }
}

void Propagator::rk4_step(double h, Vec& x1, Mat& m1) const {
  Vec k2x, k3x, k4x;
  Mat k2m, k3m, k4m;
  rhs(x_ + 0.5 * h * fx_, m_ + 0.5 * h * fm_, k2x, k2m);
  rhs(x_ + 0.5 * h * k2x, m_ + 0.5 * h * k2m, k3x, k3m);
  rhs(x_ + h * k3x, m_ + h * k3m, k4x, k4m);
  x1 = x_ + (h / 6.0) * (fx_ + 2.0 * k2x + 2.0 * k3x + k4x);
  m1 = m_ + (h / 6.0) * (fm_ + 2.0 * k2m + 2.0 * k3m + k4m);
}

void Propagator::peek(double dt, Vec& x, Mat* m) const {
  Mat m1;
  if (dt == 0.0) {
    x = x_;
    if (m != nullptr) *m = m_;
    return;
  }
  if (cfg_.method == Method::RK4) {
    rk4_step(dt, x, m1);
  } else {
    Vec fx1;
    Mat fm1;
    dp_step(dt, x, m1, fx1, fm1, nullptr, nullptr);
  }
  if (m != nullptr) *m = std::move(m1);
}

bool Propagator::advance(double t_stop) {
  const double remaining = t_stop - t_;
  if (remaining == 0.0) return true;
  const double dir = remaining > 0.0 ? 1.0 : -1.0;
  // Snap onto t_stop when within a rounding-level sliver of it.
  const bool bounded = std::isfinite(t_stop);
  const double snap =
      bounded ? 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t_stop)) : 0.0;

  for (;;) {
    if (++steps_ > cfg_.max_steps) {
      throw Error(ErrorKind::MaxSteps, "max steps (" + std::to_string(cfg_.max_steps) +
                                           ") exceeded at t=" + std::to_string(t_));
    }
    double h = std::min({h_, cfg_.max_step, std::abs(t_stop - t_)});
    bool last = false;
    if (bounded && std::abs(t_stop - t_) - h <= snap) {
      h = std::abs(t_stop - t_);
      last = true;
    }
    const double hs = dir * h;

    Vec x1, fx1;
    Mat m1, fm1;
    if (cfg_.method == Method::RK4) {
      rk4_step(hs, x1, m1);
      rhs(x1, m1, fx1, fm1);
    } else {
      Vec ex;
      Mat em;
      dp_step(hs, x1, m1, fx1, fm1, &ex, &em);
      const double err = error_norm(x_, m_, x1, m1, ex, em);
      if (!std::isfinite(err) || err > 1.0) {
        const double factor = std::isfinite(err) ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.2;
        h_ = h * factor;
        if (h_ < 1e-14 * std::max(1.0, std::abs(t_))) {
          throw Error(ErrorKind::MaxSteps, "step size underflow at t=" + std::to_string(t_));
        }
        continue;
      }
      const double factor = err == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(err, -0.2)));
      // Keep the previous step size when the last step was only shortened to hit t_stop.
      h_ = last ? std::max(h_, h * factor) : h * factor;
    }
    t_ = last ? t_stop : t_ + hs;
    last_h_ = h;
    check_state(x1);
    x_ = std::move(x1);
    m_ = std::move(m1);
    fx_ = std::move(fx1);
    fm_ = std::move(fm1);
    return last;
  }
}

void Propagator::advance_to(double t_stop) {
  while (!advance(t_stop)) {
  }
}

Trajectory integrate(const SystemSpec& spec, const Vec& x0, double t_end, const IntegratorConfig& cfg) {
  Propagator p(spec, cfg, x0);
  Trajectory traj;
  auto record = [&] {
    traj.times.push_back(p.time());
    traj.states.push_back(p.state());
    traj.rates.push_back(p.state_rate());
  };
  record();
  if (t_end == 0.0) return traj;
  bool done = false;
  while (!done) {
    done = p.advance(t_end);
    record();
  }
  return traj;
}

TangentTrajectory integrate_prolonged(const SystemSpec& spec, const Vec& x0, const Mat& m0,
                                      double t_end, const IntegratorConfig& cfg) {
  if (m0.rows() != spec.dimension() || m0.cols() == 0) {
    throw Error(ErrorKind::DimensionMismatch, "initial frame must have n rows and at least one column");
  }
  Propagator p(spec, cfg, x0, m0);
  TangentTrajectory traj;
  auto record = [&] {
    traj.times.push_back(p.time());
    traj.states.push_back(p.state());
    traj.rates.push_back(p.state_rate());
    traj.frames.push_back(p.frame());
    traj.frame_rates.push_back(p.frame_rate());
  };
  record();
  if (t_end == 0.0) return traj;
  bool done = false;
  while (!done) {
    done = p.advance(t_end);
    record();
  }
  return traj;
}

Vec flow_map(const SystemSpec& spec, const Vec& x0, double t, const IntegratorConfig& cfg) {
  Propagator p(spec, cfg, x0);
  p.advance_to(t);
  return p.state();
}

std::pair<Vec, Mat> flow_differential(const SystemSpec& spec, const Vec& x0, double t,
                                      const IntegratorConfig& cfg) {
  const int n = spec.dimension();
  Propagator p(spec, cfg, x0, Mat::Identity(n, n));
  p.advance_to(t);
  return {p.state(), p.frame()};
}

}  // namespace conefield
