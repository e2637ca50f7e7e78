#include "conefield/cone.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "conefield/csv.hpp"
#include "conefield/error.hpp"
#include "conefield/parallel.hpp"

namespace conefield {

namespace {

constexpr double kMaxCondition = 1e10;

double cross2(const Vec& a, const Vec& b) { return a[0] * b[1] - a[1] * b[0]; }

double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Mat realified(const RowVec* dominant, const CMat& sub) {
  const int n = static_cast<int>(sub.cols());
  const int extra = dominant ? 1 : 0;
  Mat stack(2 * sub.rows() + extra, n);
  if (dominant) stack.row(0) = *dominant;
  stack.middleRows(extra, sub.rows()) = sub.real();
  stack.middleRows(extra + sub.rows(), sub.rows()) = sub.imag();
  return stack;
}

Vec random_unit(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(n);
  do {
    for (int i = 0; i < n; ++i) v[i] = g(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

}  // namespace

Vec ConeSample::functionals(const Vec& dx) const {
  const double d = dominant.dot(dx);
  Vec k(subordinate.rows());
  const CVec s = subordinate * dx.cast<Complex>();
  for (Eigen::Index j = 0; j < k.size(); ++j) k[j] = d - std::abs(s[j]);
  return k;
}

double ConeSample::margin(const Vec& dx) const {
  const double norm = dx.norm();
  if (norm == 0.0) return 0.0;
  const Vec u = dx / norm;
  if (subordinate.rows() == 0) return dominant.dot(u);
  return functionals(u).minCoeff();
}

Membership membership(const ConeSample& cone, const Vec& dx) {
  Membership m;
  m.margin = cone.margin(dx);
  m.inside = m.margin >= 0.0;
  return m;
}

ConeSample make_cone(Vec point, RowVec dominant, CMat subordinate, ConeMode mode, bool allow_singular) {
  ConeSample c;
  c.point = std::move(point);
  c.dominant = std::move(dominant);
  c.subordinate = std::move(subordinate);
  c.mode = mode;
  const Mat stack = realified(&c.dominant, c.subordinate);
  Eigen::JacobiSVD<Mat> svd(stack);
  const Vec sv = svd.singularValues();
  const double smin = sv[sv.size() - 1];
  c.condition = smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
  if (!allow_singular && !(c.condition < kMaxCondition)) {
    std::ostringstream msg;
    msg << "cone rows are not injective at x (condition number " << c.condition << ")";
    throw Error(ErrorKind::NotInjective, msg.str());
  }
  return c;
}

ConeSample cone_at(const EigenpairSet& pairs, const Vec& x) {
  if (pairs.size() == 0) throw Error(ErrorKind::InvalidArgument, "no eigenpairs");
  const int n = pairs[0].dimension();
  if (static_cast<int>(pairs.size()) != n) throw Error(ErrorKind::DimensionMismatch, "need n eigenpairs for a cone");
  const ModeValue m1 = pairs[0].evaluate(x);
  RowVec dominant;
  ConeMode mode;
  if (pairs.angle_dominant()) {
    dominant = m1.angle_gradient;
    mode = ConeMode::AngleDominant;
  } else {
    dominant = m1.gradient.real();
    mode = ConeMode::RealDominant;
    if (m1.gradient.imag().norm() > 1e-6 * m1.gradient.norm()) {
      throw Error(ErrorKind::InvalidArgument, "dominant gradient has a non-negligible imaginary part");
    }
  }
  CMat sub(n - 1, n);
  for (int j = 1; j < n; ++j) sub.row(j - 1) = pairs[static_cast<std::size_t>(j)].evaluate(x).gradient;
  return make_cone(x, dominant, sub, mode);
}

// ---------------------------------------------------------------------------

TabulatedConeField::TabulatedConeField(std::vector<Row> rows, ConeMode mode) : mode_(mode) {
  if (rows.empty()) throw Error(ErrorKind::InvalidArgument, "empty cone table");
  for (const Row& r : rows) {
    if (r.dominant.size() != 2 || r.subordinate.size() != 2) {
      throw Error(ErrorKind::InvalidArgument, "tabulated cones must be planar");
    }
    xs_.push_back(r.x1);
    ys_.push_back(r.x2);
  }
  auto uniq = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(xs_);
  uniq(ys_);
  if (xs_.size() < 2 || ys_.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "cone rows do not span a rectangular grid");
  }
  table_.resize(xs_.size() * ys_.size());
  std::vector<bool> seen(table_.size(), false);
  for (Row& r : rows) {
    const auto i = static_cast<std::size_t>(std::lower_bound(xs_.begin(), xs_.end(), r.x1) - xs_.begin());
    const auto j = static_cast<std::size_t>(std::lower_bound(ys_.begin(), ys_.end(), r.x2) - ys_.begin());
    const std::size_t idx = j * xs_.size() + i;
    if (seen[idx]) throw Error(ErrorKind::InvalidArgument, "duplicate grid point in cone rows");
    seen[idx] = true;
    table_[idx] = std::move(r);
  }
}

TabulatedConeField TabulatedConeField::parse_csv(const std::string& text, ConeMode mode) {
  std::istringstream in(text);
  std::string line;
  std::vector<Row> rows;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("x1", 0) == 0) continue;
    }
    std::vector<double> v;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        const auto rest = cell.find_first_not_of(" \t\r", used);
        if (rest != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidArgument,
                    "malformed cone rows file: line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (v.size() < 8) {
      throw Error(ErrorKind::InvalidArgument,
                  "malformed cone rows file: line " + std::to_string(lineno) + ": expected at least 8 columns");
    }
    Row r;
    r.x1 = v[0];
    r.x2 = v[1];
    r.dominant = RowVec(2);
    r.dominant << v[2], v[3];
    r.subordinate = CRowVec(2);
    r.subordinate << Complex(v[4], v[6]), Complex(v[5], v[7]);
    rows.push_back(std::move(r));
  }
  return TabulatedConeField(std::move(rows), mode);
}

ConeSample TabulatedConeField::at(const Vec& x) const {
  if (x.size() != 2) throw Error(ErrorKind::DimensionMismatch, "tabulated cone field is planar");
  auto locate = [](const std::vector<double>& g, double v, std::size_t& i, double& w) {
    if (!(v >= g.front() && v <= g.back())) return false;
    auto it = std::upper_bound(g.begin(), g.end(), v);
    i = static_cast<std::size_t>(it - g.begin());
    i = i == 0 ? 0 : i - 1;
    if (i >= g.size() - 1) i = g.size() - 2;
    w = (v - g[i]) / (g[i + 1] - g[i]);
    return true;
  };
  std::size_t i = 0, j = 0;
  double wx = 0.0, wy = 0.0;
  if (!locate(xs_, x[0], i, wx) || !locate(ys_, x[1], j, wy)) {
    throw Error(ErrorKind::Unresolved, "point outside the tabulated cone grid");
  }
  const std::size_t nx = xs_.size();
  const auto& oa = table_[j * nx + i];
  const auto& ob = table_[j * nx + i + 1];
  const auto& oc = table_[(j + 1) * nx + i];
  const auto& od = table_[(j + 1) * nx + i + 1];
  if (!oa || !ob || !oc || !od) throw Error(ErrorKind::Unresolved, "tabulated cell has a missing corner");
  const Row &a = *oa, &b = *ob, &c = *oc, &d = *od;
  const double w00 = (1 - wx) * (1 - wy), w10 = wx * (1 - wy), w01 = (1 - wx) * wy, w11 = wx * wy;
  const RowVec dom = w00 * a.dominant + w10 * b.dominant + w01 * c.dominant + w11 * d.dominant;
  const CRowVec sub = w00 * a.subordinate + w10 * b.subordinate + w01 * c.subordinate + w11 * d.subordinate;
  return make_cone(x, dom, CMat(sub), mode_, true);
}

// ---------------------------------------------------------------------------

AxiomsReport cone_axioms_check(const ConeSample& cone, int trials, std::uint64_t seed) {
  AxiomsReport rep;
  rep.trials = trials;
  const int n = cone.dimension();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  const double tol = 1e-12;
  std::vector<Vec> members;
  for (int t = 0; t < trials; ++t) {
    const Vec u = random_unit(rng, n);
    const double m = cone.margin(u);
    if (m > 0.0) rep.solid = true;
    if (m >= 0.0) {
      members.push_back(u);
      // (ii) positive scaling
      const Vec s = scale(rng) * u;
      if (cone.functionals(s).minCoeff() < -tol * s.norm()) ++rep.scaling_violations;
      // (iii) pointedness on sampled directions
      if (cone.margin(-u) >= 0.0) ++rep.pointedness_violations;
    }
  }
  // (i) convexity on pairs of sampled members
  std::uniform_int_distribution<std::size_t> pick(0, members.empty() ? 0 : members.size() - 1);
  for (int t = 0; t < trials && members.size() > 1; ++t) {
    const Vec a = scale(rng) * members[pick(rng)];
    const Vec b = scale(rng) * members[pick(rng)];
    const Vec sum = a + b;
    if (sum.norm() == 0.0) continue;
    if (cone.functionals(sum).minCoeff() < -tol * (a.norm() + b.norm())) ++rep.convexity_violations;
  }
  // Pointedness on the kernel of the row stack: k(±v) = 0 there.
  const Mat stack = realified(&cone.dominant, cone.subordinate);
  Eigen::JacobiSVD<Mat> svd(stack, Eigen::ComputeFullV);
  const Vec sv = svd.singularValues();
  if (sv[sv.size() - 1] <= 1e-12 * std::max(1.0, sv[0])) {
    const Vec v = svd.matrixV().col(n - 1);
    if (cone.functionals(v).minCoeff() >= -1e-12 && cone.functionals(-v).minCoeff() >= -1e-12) {
      ++rep.pointedness_violations;
    }
  }
  return rep;
}

PlanarBoundary planar_boundary(const ConeSample& cone) {
  if (cone.dimension() != 2 || cone.subordinate.rows() != 1) {
    throw Error(ErrorKind::InvalidArgument, "exact boundary rays need a planar cone");
  }
  const RowVec d = cone.dominant;
  const RowVec sr = cone.subordinate.row(0).real();
  const RowVec si = cone.subordinate.row(0).imag();
  const Mat q = d.transpose() * d - sr.transpose() * sr - si.transpose() * si;
  Eigen::SelfAdjointEigenSolver<Mat> es(q);
  const double mu_a = es.eigenvalues()[0];
  const double mu_b = es.eigenvalues()[1];
  if (!(mu_a < 0.0 && mu_b > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "planar cone has no interior or is not pointed");
  }
  const Vec ea = es.eigenvectors().col(0);
  const Vec eb = es.eigenvectors().col(1);
  Vec u1 = (std::sqrt(-mu_a) * eb + std::sqrt(mu_b) * ea).normalized();
  Vec u2 = (std::sqrt(-mu_a) * eb - std::sqrt(mu_b) * ea).normalized();
  if (d.dot(u1) < 0.0) u1 = -u1;
  if (d.dot(u2) < 0.0) u2 = -u2;
  PlanarBoundary b;
  if (cross2(u1, u2) >= 0.0) {
    b.lo = u1;
    b.hi = u2;
  } else {
    b.lo = u2;
    b.hi = u1;
  }
  b.angle_lo = std::atan2(b.lo[1], b.lo[0]);
  b.angle_hi = std::atan2(b.hi[1], b.hi[0]);
  return b;
}

RaySet sample_rays(const ConeSample& cone, int count, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::InvalidArgument, "ray count must be positive");
  const int n = cone.dimension();
  RaySet rs;
  if (n == 1) {
    Vec u(1);
    u[0] = cone.dominant[0] >= 0.0 ? 1.0 : -1.0;
    rs.rays.push_back(u);
    rs.boundary.push_back(true);
    return rs;
  }
  if (n == 2) {
    const PlanarBoundary b = planar_boundary(cone);
    rs.rays.push_back(b.lo);
    rs.boundary.push_back(true);
    if (count >= 2) {
      rs.rays.push_back(b.hi);
      rs.boundary.push_back(true);
    }
    const double span = std::atan2(cross2(b.lo, b.hi), b.lo.dot(b.hi));
    for (int i = 1; i <= count - 2; ++i) {
      const double a = b.angle_lo + span * i / (count - 1);
      Vec u(2);
      u << std::cos(a), std::sin(a);
      rs.rays.push_back(u);
      rs.boundary.push_back(false);
    }
    return rs;
  }
  // n > 2: an interior direction spans the kernel of the subordinate stack.
  Eigen::JacobiSVD<Mat> svd(realified(nullptr, cone.subordinate), Eigen::ComputeFullV);
  Vec w = svd.matrixV().col(n - 1);
  if (cone.dominant.dot(w) < 0.0) w = -w;
  std::mt19937_64 rng(seed);
  if (!(cone.margin(w) > 0.0)) {
    double best = cone.margin(w);
    for (int t = 0; t < 10000 && best <= 0.0; ++t) {
      const Vec u = random_unit(rng, n);
      if (cone.margin(u) > best) {
        best = cone.margin(u);
        w = u;
      }
    }
    if (!(best > 0.0)) throw Error(ErrorKind::InvalidArgument, "cone has no interior direction");
  }
  const int n_boundary = std::max(1, count / 2);
  int attempts = 0;
  while (static_cast<int>(rs.rays.size()) < n_boundary && attempts++ < 100 * count) {
    Vec r = random_unit(rng, n);
    if (cone.margin(r) >= 0.0) r = -r;
    if (cone.margin(r) >= 0.0) continue;
    double lo = 0.0, hi = 1.0;  // margin(lo) > 0 > margin(hi)
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (cone.margin((1 - mid) * w + mid * r) >= 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    rs.rays.push_back(((1 - lo) * w + lo * r).normalized());
    rs.boundary.push_back(true);
  }
  rs.rays.push_back(w.normalized());
  rs.boundary.push_back(false);
  while (static_cast<int>(rs.rays.size()) < count) {
    Vec u = (w + 0.5 * random_unit(rng, n)).normalized();
    for (int it = 0; it < 60 && !(cone.margin(u) > 0.0); ++it) u = (u + w).normalized();
    rs.rays.push_back(u);
    rs.boundary.push_back(false);
  }
  return rs;
}

// ---------------------------------------------------------------------------

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::StrictlyPositive: return "strictly positive";
    case Verdict::Positive: return "positive";
    case Verdict::Counterexamples: return "counterexamples";
    case Verdict::Unresolved: return "unresolved";
  }
  return "?";
}

namespace {

struct PropagationOutcome {
  bool resolved = false;
  std::string reason;
  std::vector<Vec> rays;
  std::vector<bool> boundary;
  std::vector<std::vector<double>> margins;  // [time][ray]
};

PropagationOutcome propagate_point(const SystemSpec& spec, const ConeField& field, const Vec& x,
                                   const std::vector<double>& times, const VerifyOptions& opts,
                                   std::uint64_t seed) {
  PropagationOutcome out;
  try {
    const ConeSample kx = field.at(x);
    const RaySet rs = sample_rays(kx, opts.rays, seed);
    out.rays = rs.rays;
    out.boundary = rs.boundary;
    const int n = spec.dimension();
    Mat m0(n, static_cast<Eigen::Index>(rs.rays.size()));
    for (std::size_t c = 0; c < rs.rays.size(); ++c) m0.col(static_cast<Eigen::Index>(c)) = rs.rays[c];
    Propagator p(spec, opts.integrator, x, m0);
    for (double t : times) {
      p.advance_to(t);
      ConeSample ky;
      try {
        ky = field.at(p.state());
      } catch (const Error& e) {
        out.reason = std::string(to_string(e.kind())) + ": at psi^t(x), t=" + fmt17(t) + ": " + e.what();
        return out;
      }
      std::vector<double> row;
      for (Eigen::Index c = 0; c < p.frame().cols(); ++c) row.push_back(ky.margin(p.frame().col(c)));
      out.margins.push_back(std::move(row));
    }
    out.resolved = true;
  } catch (const Error& e) {
    out.reason = std::string(to_string(e.kind())) + ": " + e.what();
  }
  return out;
}

std::vector<double> sorted_times(std::vector<double> t) {
  for (double v : t) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "horizons must be positive");
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

}  // namespace

PositivityReport verify_positivity(const SystemSpec& spec, const ConeField& field, const std::vector<Vec>& grid,
                                   const VerifyOptions& opts) {
  PositivityReport rep;
  rep.horizons = sorted_times(opts.horizons);
  if (rep.horizons.empty()) throw Error(ErrorKind::InvalidArgument, "at least one horizon is required");
  rep.slack = opts.slack;
  rep.rays = opts.rays;
  std::vector<PropagationOutcome> outcomes(grid.size());
  parallel_for(grid.size(), opts.workers, [&](std::size_t i) {
    outcomes[i] = propagate_point(spec, field, grid[i], rep.horizons, opts, opts.seed + i);
  });
  rep.points.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    PointMargins& pm = rep.points[i];
    const PropagationOutcome& o = outcomes[i];
    pm.point = grid[i];
    pm.resolved = o.resolved;
    pm.skip_reason = o.reason;
    if (!o.resolved) {
      ++rep.skipped;
      continue;
    }
    ++rep.resolved;
    for (std::size_t h = 0; h < rep.horizons.size(); ++h) {
      double worst = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < o.rays.size(); ++r) {
        const double m = o.margins[h][r];
        worst = std::min(worst, m);
        if (m < -opts.slack) {
          ++rep.counterexample_count;
          if (rep.counterexamples.size() < opts.max_counterexamples) {
            rep.counterexamples.push_back({grid[i], o.rays[r], rep.horizons[h], m});
          }
        }
      }
      pm.margins.push_back(worst);
      pm.worst = std::min(pm.worst, worst);
    }
    rep.worst_margin = std::min(rep.worst_margin, pm.worst);
  }
  if (rep.resolved == 0) {
    rep.verdict = Verdict::Unresolved;
  } else if (rep.counterexample_count > 0) {
    rep.verdict = Verdict::Counterexamples;
  } else {
    rep.verdict = Verdict::Positive;
  }
  return rep;
}

StrictnessResult verify_strictness(const SystemSpec& spec, const ConeField& field, const std::vector<Vec>& grid,
                                   double T, double eps_min, const VerifyOptions& opts) {
  if (!(T > 0.0)) throw Error(ErrorKind::InvalidArgument, "strictness horizon must be positive");
  StrictnessResult res;
  std::vector<PropagationOutcome> outcomes(grid.size());
  parallel_for(grid.size(), opts.workers, [&](std::size_t i) {
    outcomes[i] = propagate_point(spec, field, grid[i], {T}, opts, opts.seed + i);
  });
  res.per_point.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const PropagationOutcome& o = outcomes[i];
    if (!o.resolved) {
      ++res.skipped;
      continue;
    }
    ++res.resolved;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < o.rays.size(); ++r) {
      if (o.boundary[r]) worst = std::min(worst, o.margins[0][r]);
    }
    res.per_point[i] = worst;
    res.epsilon_hat = std::min(res.epsilon_hat, worst);
  }
  res.strict = res.resolved > 0 && res.epsilon_hat >= eps_min;
  return res;
}

PositivityReport certify(const SystemSpec& spec, const ConeField& field, const std::vector<Vec>& grid,
                         double strict_T, double eps_min, const VerifyOptions& opts) {
  PositivityReport rep = verify_positivity(spec, field, grid, opts);
  const StrictnessResult s = verify_strictness(spec, field, grid, strict_T, eps_min, opts);
  rep.strictness_evaluated = true;
  rep.strict_T = strict_T;
  rep.eps_min = eps_min;
  rep.epsilon_hat = s.epsilon_hat;
  rep.strict_resolved = s.resolved;
  rep.strict_skipped = s.skipped;
  if (rep.verdict == Verdict::Positive && s.strict) rep.verdict = Verdict::StrictlyPositive;
  return rep;
}

bool conal_order(const EigenpairSet& pairs, const Vec& x1, const Vec& x2) {
  const ModeValue a = pairs[0].evaluate(x1);
  const ModeValue b = pairs[0].evaluate(x2);
  const double d1 = pairs.angle_dominant() ? wrap_angle(std::arg(b.value) - std::arg(a.value))
                                           : (b.value - a.value).real();
  for (std::size_t j = 1; j < pairs.size(); ++j) {
    const Complex dj = pairs[j].phi(x2) - pairs[j].phi(x1);
    if (!(d1 - std::abs(dj) > 0.0)) return false;
  }
  return pairs.size() > 1 || d1 > 0.0;
}

void write_cone_grid_csv(std::ostream& out, const ConeField& field, const std::vector<Vec>& grid, int workers) {
  std::vector<std::optional<std::pair<ConeSample, PlanarBoundary>>> rows(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    try {
      ConeSample c = field.at(grid[i]);
      PlanarBoundary b = planar_boundary(c);
      rows[i].emplace(std::move(c), std::move(b));
    } catch (const Error&) {
    }
  });
  csv_header(out, {"x1", "x2", "dom_1", "dom_2", "sub_re_1", "sub_re_2", "sub_im_1", "sub_im_2",
                   "boundary_angle_lo", "boundary_angle_hi"});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!rows[i]) continue;
    const ConeSample& c = rows[i]->first;
    const PlanarBoundary& b = rows[i]->second;
    const CRowVec s = c.subordinate.row(0);
    csv_line(out, {grid[i][0], grid[i][1], c.dominant[0], c.dominant[1], s[0].real(), s[1].real(), s[0].imag(),
                   s[1].imag(), b.angle_lo, b.angle_hi});
  }
}

}  // namespace conefield
