#include "conefield/laplace.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "conefield/error.hpp"

namespace conefield {

Observable Observable::plain(std::string name, std::function<Complex(const Vec&)> g) {
  Observable o;
  o.kind = Kind::Plain;
  o.name = std::move(name);
  o.value = std::move(g);
  return o;
}

Observable Observable::prolonged(std::string name, std::function<CRowVec(const Vec&)> r) {
  Observable o;
  o.kind = Kind::Prolonged;
  o.name = std::move(name);
  o.row = std::move(r);
  return o;
}

Observable Observable::coordinate(int i) {
  return plain("x" + std::to_string(i + 1), [i](const Vec& x) { return Complex(x[i], 0.0); });
}

Observable Observable::coordinate_row(int i, int n) {
  CRowVec e = CRowVec::Zero(n);
  e[i] = 1.0;
  return linear_row("dx" + std::to_string(i + 1), e);
}

Observable Observable::linear(std::string name, CRowVec c, Vec x0) {
  return plain(std::move(name), [c = std::move(c), x0 = std::move(x0)](const Vec& x) {
    return (c * (x - x0).cast<Complex>())(0, 0);
  });
}

Observable Observable::linear_row(std::string name, CRowVec c) {
  return prolonged(std::move(name), [c = std::move(c)](const Vec&) { return c; });
}

Complex Observable::operator()(const Vec& x) const {
  if (kind != Kind::Plain) throw Error(ErrorKind::InvalidArgument, "observable '" + name + "' is prolonged");
  return value(x);
}

Complex Observable::operator()(const Vec& x, const Vec& dx) const {
  if (kind != Kind::Prolonged) throw Error(ErrorKind::InvalidArgument, "observable '" + name + "' is plain");
  return (row(x) * dx.cast<Complex>())(0, 0);
}

void AverageConfig::validate() const {
  if (!(window > 0.0)) throw Error(ErrorKind::InvalidArgument, "averaging window must be positive");
  if (!(max_horizon > window)) throw Error(ErrorKind::InvalidArgument, "max horizon must exceed the window");
  if (!(tol > 0.0) || !(accept_tol >= tol)) {
    throw Error(ErrorKind::InvalidArgument, "averaging tolerances must satisfy 0 < tol <= accept_tol");
  }
  if (skip < 0.0) throw Error(ErrorKind::InvalidArgument, "transient skip must be non-negative");
  integrator.validate();
}

namespace {

// Three-point Gauss–Legendre on [0, 1].
constexpr double kGaussNode = 0.3872983346207416885;  // sqrt(15) / 10
constexpr double kGaussOuter = 5.0 / 18.0;
constexpr double kGaussInner = 8.0 / 18.0;

double rel_change(const CVec& a, const CVec& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

WindowAverager::WindowAverager(const SystemSpec& spec, const AverageConfig& cfg, Vec x0, Mat m0, Integrand h)
    : cfg_(cfg), prop_(spec, cfg.integrator, std::move(x0), std::move(m0)), h_(std::move(h)), start_(0.0) {
  cfg_.validate();
  if (cfg_.skip > 0.0) prop_.advance_to(cfg_.skip);
  start_ = cfg_.skip;
}

CVec WindowAverager::integrate_to(double t_end) {
  CVec acc;
  const bool frames = prop_.has_frame();
  const Mat empty;
  while (prop_.time() < t_end) {
    const double t0 = prop_.time();
    const Vec x0 = prop_.state();
    const Vec f0 = prop_.state_rate();
    const Mat m0 = prop_.frame();
    const Mat dm0 = prop_.frame_rate();
    prop_.advance(t_end);
    const double t1 = prop_.time();
    const double h = t1 - t0;
    const double nodes[3] = {0.5 - kGaussNode, 0.5, 0.5 + kGaussNode};
    const double weights[3] = {kGaussOuter, kGaussInner, kGaussOuter};
    for (int q = 0; q < 3; ++q) {
      const double t = t0 + nodes[q] * h;
      const Vec x = hermite(t0, t1, x0, prop_.state(), f0, prop_.state_rate(), t);
      CVec v;
      if (frames) {
        const Mat m = hermite(t0, t1, m0, prop_.frame(), dm0, prop_.frame_rate(), t);
        v = h_(t, x, m);
      } else {
        v = h_(t, x, empty);
      }
      if (acc.size() == 0) acc = CVec::Zero(v.size());
      acc += (weights[q] * h) * v;
    }
  }
  return acc;
}

CVec WindowAverager::next() {
  const double end = start_ + cfg_.window;
  CVec sum = integrate_to(end);
  start_ = end;
  return sum / cfg_.window;
}

AverageResult converge_average(WindowAverager& averager, const AverageConfig& cfg) {
  CVec prev_raw = averager.next();
  const Eigen::Index size = prev_raw.size();
  CVec ratio;
  if (!cfg.decay.empty()) {
    if (cfg.decay.size() != 1 && static_cast<Eigen::Index>(cfg.decay.size()) != size) {
      throw Error(ErrorKind::InvalidArgument, "decay rates do not match the integrand size");
    }
    ratio = CVec::Zero(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      const Complex mu = cfg.decay[cfg.decay.size() == 1 ? 0 : static_cast<std::size_t>(i)];
      ratio[i] = mu.real() < -1e-3 ? std::exp(mu * cfg.window) : Complex(0.0);
    }
  }
  auto estimate = [&](const CVec& cur, const CVec& prev) -> CVec {
    if (ratio.size() == 0) return cur;
    return (cur - ratio.cwiseProduct(prev)).cwiseQuotient((CVec::Ones(size) - ratio));
  };

  AverageResult best;
  best.residual = std::numeric_limits<double>::infinity();
  CVec prev_est = prev_raw;
  int windows = 1;
  int since_best = 0;
  double last = std::numeric_limits<double>::infinity();
  while (averager.window_start() + cfg.window <= cfg.max_horizon * (1.0 + 1e-12)) {
    const CVec cur = averager.next();
    ++windows;
    if (!cur.allFinite()) break;
    const CVec est = estimate(cur, prev_raw);
    prev_raw = cur;
    if (windows == 2 && ratio.size() != 0) {
      prev_est = est;  // first extrapolated value has no predecessor
      continue;
    }
    last = rel_change(est, prev_est);
    prev_est = est;
    if (last < best.residual) {
      best.value = est;
      best.residual = last;
      best.horizon = averager.window_start();
      best.windows = windows;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (last <= cfg.tol) {
      best.converged = true;
      return best;
    }
    if (since_best >= cfg.patience && best.residual <= cfg.accept_tol) break;
  }
  if (best.residual <= cfg.accept_tol) return best;
  std::ostringstream msg;
  msg << "Laplace average did not converge by t=" << averager.window_start() << " (last relative change "
      << last << ", best " << best.residual << ")";
  throw Error(ErrorKind::NoConvergence, msg.str());
}

AverageResult laplace_average(const SystemSpec& spec, const Observable& g, Complex lambda, const Vec& x,
                              const AverageConfig& cfg) {
  if (g.kind != Observable::Kind::Plain) {
    throw Error(ErrorKind::InvalidArgument, "laplace_average needs a plain observable");
  }
  WindowAverager avg(spec, cfg, x, Mat(), [&](double t, const Vec& y, const Mat&) {
    CVec v(1);
    v[0] = std::exp(-lambda * t) * g.value(y);
    return v;
  });
  return converge_average(avg, cfg);
}

AverageResult laplace_average_prolonged(const SystemSpec& spec, const Observable& g, Complex lambda,
                                        const Vec& x, const Vec& dx, const AverageConfig& cfg) {
  if (g.kind != Observable::Kind::Prolonged) {
    throw Error(ErrorKind::InvalidArgument, "laplace_average_prolonged needs a prolonged observable");
  }
  if (!x.allFinite() || !dx.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite (x, dx)");
  Mat m0 = dx;
  WindowAverager avg(spec, cfg, x, m0, [&](double t, const Vec& y, const Mat& m) {
    CVec v(1);
    v[0] = std::exp(-lambda * t) * (g.row(y) * m.col(0).cast<Complex>())(0, 0);
    return v;
  });
  return converge_average(avg, cfg);
}

}  // namespace conefield
