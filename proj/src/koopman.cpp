#include "conefield/koopman.hpp"

#include <cfloat>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "conefield/csv.hpp"
#include "conefield/error.hpp"

namespace conefield {

const char* to_string(ModeKind kind) {
  switch (kind) {
    case ModeKind::FixedPoint: return "fixed-point";
    case ModeKind::CycleAngle: return "cycle-angle";
    case ModeKind::CycleTransverse: return "cycle-transverse";
  }
  return "?";
}

namespace {

std::string point_key(const Vec& x) {
  std::string key(static_cast<std::size_t>(x.size()) * sizeof(double), '\0');
  std::memcpy(key.data(), x.data(), key.size());
  return key;
}

}  // namespace

std::shared_ptr<const std::vector<ModeValue>> KoopmanEngine::evaluate(const Vec& x) const {
  if (x.size() != dimension()) throw Error(ErrorKind::DimensionMismatch, "point has the wrong dimension");
  const std::string key = memoize_ ? point_key(x) : std::string();
  if (memoize_) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      if (it->second.error) std::rethrow_exception(it->second.error);
      return it->second.values;
    }
  }
  // Computed outside the lock; concurrent duplicates agree, last write wins.
  Entry entry;
  try {
    entry.values = std::make_shared<const std::vector<ModeValue>>(compute(x));
  } catch (const Error&) {
    entry.error = std::current_exception();
  }
  if (memoize_) {
    std::lock_guard<std::mutex> lock(mutex_);
    cache_[key] = entry;
  }
  if (entry.error) std::rethrow_exception(entry.error);
  return entry.values;
}

std::size_t KoopmanEngine::cache_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

KoopmanEigenpair::KoopmanEigenpair(std::shared_ptr<const KoopmanEngine> engine, int index, Complex lambda,
                                   ModeKind kind, std::string observable, double scale)
    : engine_(std::move(engine)),
      index_(index),
      lambda_(lambda),
      kind_(kind),
      observable_(std::move(observable)),
      scale_(scale) {}

ModeValue KoopmanEigenpair::evaluate(const Vec& x) const {
  return (*engine_->evaluate(x))[static_cast<std::size_t>(index_)];
}

RowVec KoopmanEigenpair::angle_gradient(const Vec& x) const {
  if (kind_ != ModeKind::CycleAngle) throw Error(ErrorKind::InvalidArgument, "not an angle mode");
  return evaluate(x).angle_gradient;
}

namespace {

// ---------------------------------------------------------------------------
// Fixed point: all n modes from one prolonged trajectory with M0 = I.

class FixedPointEngine final : public KoopmanEngine {
 public:
  FixedPointEngine(std::shared_ptr<const SystemSpec> spec, const FixedPointModel& fp, const KoopmanConfig& cfg)
      : KoopmanEngine(std::move(spec), cfg.memoize), fp_(fp), cfg_(cfg.fixed_point) {
    // Leading contamination of mode j comes from quadratic terms: e^{(2λ1 - λj)t}.
    const int n = dimension();
    const CVec& lambda = fp_.eigen.values;
    if (cfg_.decay.empty()) {
      for (int j = 0; j < n; ++j) {
        const Complex mu = 2.0 * lambda[0] - lambda[j];
        for (int k = 0; k <= n; ++k) cfg_.decay.push_back(mu);
      }
    }
  }

 private:
  std::vector<ModeValue> compute(const Vec& x) const override {
    const int n = dimension();
    const CVec& lambda = fp_.eigen.values;
    const CMat& left = fp_.eigen.left;
    const Vec& xs = fp_.point;
    WindowAverager avg(*spec_, cfg_, x, Mat::Identity(n, n), [&](double t, const Vec& y, const Mat& m) {
      CVec v(n * (n + 1));
      const CVec d = (y - xs).cast<Complex>();
      const CMat lm = left * m.cast<Complex>();
      for (int j = 0; j < n; ++j) {
        const Complex w = std::exp(-lambda[j] * t);
        v[j * (n + 1)] = w * (left.row(j) * d)(0, 0);
        v.segment(j * (n + 1) + 1, n) = w * lm.row(j).transpose();
      }
      return v;
    });
    const AverageResult r = converge_average(avg, cfg_);
    std::vector<ModeValue> out(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      ModeValue& mv = out[static_cast<std::size_t>(j)];
      mv.value = r.value[j * (n + 1)];
      mv.gradient = r.value.segment(j * (n + 1) + 1, n).transpose();
      mv.residual = r.residual;
      mv.horizon = r.horizon;
    }
    return out;
  }

  FixedPointModel fp_;
  AverageConfig cfg_;
};

// ---------------------------------------------------------------------------
// Planar limit cycle: angle mode from g = x1, transverse mode from the signed
// normal distance to the cycle along rays from the origin.

struct Transverse {
  double g = 0.0;
  RowVec dg;
};

class CycleEngine final : public KoopmanEngine {
 public:
  CycleEngine(std::shared_ptr<const SystemSpec> spec, const LimitCycleModel& lc, const KoopmanConfig& cfg)
      : KoopmanEngine(std::move(spec), cfg.memoize), lc_(lc), cfg_(cfg) {
    lambda2_ = lc_.exponents[0];
    // Normalization at the anchor: φ1(anchor) = 1; |∂φ2(anchor)| = |∂∠φ1(anchor)|.
    CRowVec grad;
    const Complex raw = angle_raw(lc_.anchor, grad, nullptr, nullptr);
    anchor_raw_abs_ = std::abs(raw);
    unit_ = raw / anchor_raw_abs_;
    const RowVec angle_grad = (grad / raw).imag();
    double residual = 0.0;
    const CVec t = transverse_raw(lc_.anchor, residual);
    const double gnorm = t.tail(2).norm();
    if (!(gnorm > 0.0)) throw Error(ErrorKind::NoConvergence, "transverse mode has a vanishing gradient on the cycle");
    scale_ = angle_grad.norm() / gnorm;
  }

  double transverse_scale() const { return scale_; }

 private:
  Complex angle_raw(const Vec& x, CRowVec& grad, double* residual, double* horizon) const {
    const double period = lc_.period;
    const Complex i_omega(0.0, lc_.omega);
    AverageConfig ac;
    ac.window = period;
    ac.skip = cfg_.angle_skip_periods * period;
    ac.max_horizon = cfg_.angle_max_periods * period;
    ac.tol = cfg_.angle_tol;
    ac.accept_tol = cfg_.angle_accept_tol;
    ac.decay = {lambda2_};  // φ2 φ1^k terms shrink by e^{λ2 T} per period
    ac.integrator = cfg_.angle_integrator;
    WindowAverager avg(*spec_, ac, x, Mat::Identity(2, 2), [&](double t, const Vec& y, const Mat& m) {
      const Complex w = std::exp(-i_omega * t);
      CVec v(3);
      v[0] = w * y[0];
      v[1] = w * m(0, 0);
      v[2] = w * m(0, 1);
      return v;
    });
    const AverageResult r = converge_average(avg, ac);
    grad = r.value.tail(2).transpose();
    if (residual) *residual = r.residual;
    if (horizon) *horizon = r.horizon;
    return r.value[0];
  }

  Transverse observable(const Vec& x) const {
    const RadialProjection rp = radial_projection(lc_, x);
    const Vec& p = rp.point;
    const Vec f = spec_->eval(p);
    const Mat jac = spec_->jacobian(p);
    const double nf = f.norm();
    const Vec fh = f / nf;
    const Vec fs = jac * f;
    const Vec dfh = (fs - fh.dot(fs) * fh) / nf;
    Vec xi(2), xi_s(2);
    xi << fh[1], -fh[0];
    xi_s << dfh[1], -dfh[0];
    const Vec d = x - p;
    const double denom = x[0] * f[1] - x[1] * f[0];
    RowVec ds(2);
    ds << -p[1] / denom, p[0] / denom;
    Transverse out;
    out.g = xi.dot(d);
    out.dg = xi.transpose() + d.dot(xi_s) * ds;
    return out;
  }

  // Two whole-period windows; the e^{λ2 t} contamination (ratio e^{λ2 T}
  // between windows) is removed by extrapolation.
  CVec transverse_raw(const Vec& x, double& residual) const {
    const double period = lc_.period;
    AverageConfig ac;
    ac.window = period;
    ac.skip = cfg_.transverse_skip_periods * period;
    ac.max_horizon = ac.skip + 3.0 * period;
    ac.integrator = cfg_.transverse_integrator;
    const Complex lambda = lambda2_;
    WindowAverager avg(*spec_, ac, x, Mat::Identity(2, 2), [&](double t, const Vec& y, const Mat& m) {
      const Transverse o = observable(y);
      const Complex w = std::exp(-lambda * t);
      CVec v(3);
      v[0] = w * o.g;
      const RowVec row = o.dg * m;
      v[1] = w * row[0];
      v[2] = w * row[1];
      return v;
    });
    const CVec a1 = avg.next();
    const CVec a2 = avg.next();
    const Complex q = std::exp(lambda * period);
    const CVec extrapolated = (a2 - q * a1) / (1.0 - q);
    residual = (extrapolated - a2).cwiseAbs().maxCoeff() / std::max(1.0, extrapolated.cwiseAbs().maxCoeff());
    return extrapolated;
  }

  std::vector<ModeValue> compute(const Vec& x) const override {
    if (spec_->eval(x).norm() <= 1e-14 * (1.0 + x.norm())) {
      throw Error(ErrorKind::AngleUndefined, "angle undefined: the point is an equilibrium");
    }
    std::vector<ModeValue> out(2);
    // Angle mode.
    CRowVec grad;
    ModeValue& a = out[0];
    const Complex raw = angle_raw(x, grad, &a.residual, &a.horizon);
    if (!(std::abs(raw) >= cfg_.min_modulus * anchor_raw_abs_)) {
      throw Error(ErrorKind::AngleUndefined, "angle undefined: the cycle mode average vanishes at this point");
    }
    a.value = raw / std::abs(raw) / unit_;
    a.angle_gradient = (grad / raw).imag();
    a.gradient = Complex(0.0, 1.0) * a.value * a.angle_gradient.cast<Complex>();

    // Transverse mode.
    ModeValue& b = out[1];
    double residual = 0.0;
    const CVec t = transverse_raw(x, residual);
    if (!(residual <= cfg_.transverse_accept_tol)) {
      std::ostringstream msg;
      msg << "transverse average unresolved (extrapolation correction " << residual << ")";
      throw Error(ErrorKind::NoConvergence, msg.str());
    }
    b.value = scale_ * t[0];
    b.gradient = scale_ * t.tail(2).transpose();
    b.residual = residual;
    b.horizon = (cfg_.transverse_skip_periods + 2.0) * lc_.period;
    return out;
  }

  LimitCycleModel lc_;
  KoopmanConfig cfg_;
  Complex lambda2_;
  double anchor_raw_abs_ = 1.0;
  Complex unit_ = 1.0;
  double scale_ = 1.0;
};

}  // namespace

EigenpairSet eigenpairs_fixed_point(const SystemSpec& spec, const FixedPointModel& fp, const KoopmanConfig& cfg) {
  const CVec& lambda = fp.eigen.values;
  const int n = spec.dimension();
  if (!fp.dominant_is_real()) {
    std::ostringstream msg;
    msg << "refused: dominant eigenvalue " << lambda[0].real() << (lambda[0].imag() < 0 ? "-" : "+")
        << std::abs(lambda[0].imag())
        << "i is complex; a fixed point admits a dominant real eigenfunction (and the system is differentially "
           "positive near it) only if the dominant eigenvalue is real";
    throw Error(ErrorKind::Refusal, msg.str());
  }
  if (!fp.is_stable()) {
    throw Error(ErrorKind::Refusal, "refused: the fixed point is not asymptotically stable (max Re lambda = " +
                                        std::to_string(lambda.real().maxCoeff()) + ")");
  }
  EigenpairSet set;
  const double l1 = lambda[0].real();
  for (int j = 1; j < n; ++j) {
    const double lj = lambda[j].real();
    if (!(2.0 * l1 < lj && lj < l1)) {
      std::ostringstream msg;
      msg << "resonance warning: mode " << j + 1 << " has Re lambda = " << lj << " outside (2 Re lambda1, Re lambda1) = ("
          << 2.0 * l1 << ", " << l1 << "); averages may converge slowly or not at all";
      set.warnings.push_back(msg.str());
    }
  }
  auto spec_ptr = std::make_shared<const SystemSpec>(spec);
  auto engine = std::make_shared<const FixedPointEngine>(spec_ptr, fp, cfg);
  for (int j = 0; j < n; ++j) {
    Complex lj = lambda[j];
    if (j == 0) lj = Complex(lj.real(), 0.0);
    set.pairs.emplace_back(engine, j, lj, ModeKind::FixedPoint, "v" + std::to_string(j + 1) + "^T (x - x*)", 1.0);
  }
  return set;
}

EigenpairSet eigenpairs_limit_cycle(const SystemSpec& spec, const LimitCycleModel& lc, const KoopmanConfig& cfg) {
  if (spec.dimension() != 2 || lc.dimension() != 2) {
    throw Error(ErrorKind::InvalidArgument, "cycle eigenpairs are implemented for planar systems only");
  }
  if (lc.exponents.size() != 1 || !(lc.exponents[0].real() < 0.0)) {
    throw Error(ErrorKind::Refusal, "refused: the limit cycle is not hyperbolically stable");
  }
  auto spec_ptr = std::make_shared<const SystemSpec>(spec);
  auto engine = std::make_shared<const CycleEngine>(spec_ptr, lc, cfg);
  EigenpairSet set;
  set.pairs.emplace_back(engine, 0, Complex(0.0, lc.omega), ModeKind::CycleAngle, "x1", 1.0);
  set.pairs.emplace_back(engine, 1, lc.exponents[0], ModeKind::CycleTransverse, "xi(rho(x))^T (x - rho(x))",
                         engine->transverse_scale());
  return set;
}

double generator_residual(const SystemSpec& spec, const KoopmanEigenpair& pair, const Vec& x) {
  try {
    const ModeValue mv = pair.evaluate(x);
    const Vec f = spec.eval(x);
    const Complex lhs = (mv.gradient * f.cast<Complex>())(0, 0);
    const Complex rhs = pair.lambda() * mv.value;
    // Absolute accuracy of the averages; keeps 0/0 at equilibria finite.
    const double floor = 1e-10 * (1.0 + mv.gradient.norm());
    return std::abs(lhs - rhs) / (std::abs(pair.lambda()) * std::abs(mv.value) + floor);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

void write_eigenpair_csv(std::ostream& out, const KoopmanEigenpair& pair, const std::vector<Vec>& points) {
  const int n = pair.dimension();
  std::vector<std::string> header;
  for (int i = 0; i < n; ++i) header.push_back("x" + std::to_string(i + 1));
  header.insert(header.end(), {"re_phi", "im_phi"});
  for (int i = 0; i < n; ++i) {
    header.push_back("re_dphi_" + std::to_string(i + 1));
    header.push_back("im_dphi_" + std::to_string(i + 1));
  }
  header.insert(header.end(), {"residual", "horizon"});
  csv_header(out, header);
  for (const Vec& x : points) {
    ModeValue mv;
    try {
      mv = pair.evaluate(x);
    } catch (const Error&) {
      continue;
    }
    std::vector<double> row(x.data(), x.data() + n);
    row.push_back(mv.value.real());
    row.push_back(mv.value.imag());
    for (int i = 0; i < n; ++i) {
      row.push_back(mv.gradient[i].real());
      row.push_back(mv.gradient[i].imag());
    }
    row.push_back(generator_residual(pair.system(), pair, x));
    row.push_back(mv.horizon);
    csv_line(out, row);
  }
}

}  // namespace conefield
