#include "conefield/pf.hpp"

#include <cmath>
#include <sstream>

#include "conefield/csv.hpp"
#include "conefield/error.hpp"
#include "conefield/integrator.hpp"
#include "conefield/parallel.hpp"

namespace conefield {

double angle_between(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::InvalidArgument, "angle of a zero vector");
  const Vec ua = a / na, ub = b / nb;
  return std::atan2((ua - ua.dot(ub) * ub).norm(), ua.dot(ub));
}

PFVector pf_vector(const ConeSample& cone) {
  const int n = cone.dimension();
  PFVector p;
  p.point = cone.point;
  if (n == 1) {
    p.w = Vec::Constant(1, cone.dominant[0] >= 0.0 ? 1.0 : -1.0);
    p.flipped = cone.dominant[0] < 0.0;
    p.margin = cone.margin(p.w);
    return p;
  }
  Mat stack(2 * cone.subordinate.rows(), n);
  stack << cone.subordinate.real(), cone.subordinate.imag();
  Eigen::JacobiSVD<Mat> svd(stack, Eigen::ComputeFullV);
  const Vec sv = svd.singularValues();
  const double smax = sv[0];
  if (!(smax > 0.0) || !(sv[n - 1] < 1e-6 * smax) || !(sv[n - 2] > 1e-3 * smax)) {
    std::ostringstream msg;
    msg << "subordinate rows do not have a one-dimensional kernel (singular values";
    for (Eigen::Index i = 0; i < sv.size(); ++i) msg << ' ' << sv[i];
    msg << ")";
    throw Error(ErrorKind::NullSpace, msg.str());
  }
  Vec w = svd.matrixV().col(n - 1).normalized();
  p.flipped = cone.dominant.dot(w) < 0.0;
  if (p.flipped) w = -w;
  double m = cone.margin(w);
  if (!(m > 0.0)) {
    if (cone.margin(-w) > 0.0) {
      w = -w;
      p.flipped = !p.flipped;
      m = cone.margin(w);
    } else {
      throw Error(ErrorKind::NotInjective, "Perron-Frobenius direction is not interior to the cone for either sign");
    }
  }
  p.w = w;
  p.margin = m;
  const CVec r = cone.subordinate * w.cast<Complex>();
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    p.residuals.push_back(std::abs(r[j]));
    const double g = cone.subordinate.row(j).norm();
    p.relative_residuals.push_back(g > 0.0 ? std::abs(r[j]) / g : 0.0);
  }
  return p;
}

PFVector pf_vector(const EigenpairSet& pairs, const Vec& x) { return pf_vector(cone_at(pairs, x)); }

PFLimitResult pf_limit_check(const SystemSpec& spec, const EigenpairSet& pairs, const Vec& x, double t,
                             const Vec& seed, const IntegratorConfig& cfg) {
  if (!(t >= 0.0)) throw Error(ErrorKind::InvalidArgument, "pf_limit_check needs t >= 0");
  PFLimitResult res;
  const PFVector wx = pf_vector(pairs, x);
  res.expected_rate = pairs.size() > 1 ? std::exp((pairs[1].lambda().real() - pairs[0].lambda().real()) * t) : 0.0;
  res.start = t > 0.0 ? flow_map(spec, x, -t, cfg) : x;
  const ConeSample k0 = cone_at(pairs, res.start);
  if (seed.size() == 0) {
    const RaySet rs = sample_rays(k0, 3);
    for (std::size_t i = 0; i < rs.rays.size(); ++i) {
      if (!rs.boundary[i]) res.seed = rs.rays[i];
    }
  } else {
    if (seed.size() != x.size()) throw Error(ErrorKind::DimensionMismatch, "seed dimension");
    if (k0.margin(seed) < 0.0) throw Error(ErrorKind::InvalidArgument, "seed tangent is outside K(psi^{-t}(x))");
    res.seed = seed;
  }
  {
    Propagator p(spec, cfg, res.start, Mat(res.seed));
    p.advance_to(t);
    res.angle = angle_between(p.frame().col(0), wx.w);
  }
  {
    Propagator p(spec, cfg, x, Mat(wx.w));
    p.advance_to(t);
    res.invariance_angle = angle_between(p.frame().col(0), pf_vector(pairs, p.state()).w);
  }
  return res;
}

PFCurve pf_curve(const EigenpairSet& pairs, const Vec& x0, double s_end, double step) {
  if (!(step > 0.0)) throw Error(ErrorKind::InvalidArgument, "curve step must be positive");
  PFCurve c;
  const double sign = s_end < 0.0 ? -1.0 : 1.0;
  auto record = [&](double s, const Vec& x) {
    CVec phi(static_cast<Eigen::Index>(pairs.size()) - 1);
    for (std::size_t j = 1; j < pairs.size(); ++j) phi[static_cast<Eigen::Index>(j) - 1] = pairs[j].phi(x);
    c.s.push_back(s);
    c.points.push_back(x);
    c.phi.push_back(phi);
  };
  auto field = [&](const Vec& x) -> Vec { return sign * pf_vector(pairs, x).w; };
  try {
    record(0.0, x0);
    const int n_steps = s_end == 0.0 ? 0 : static_cast<int>(std::ceil(std::abs(s_end) / step - 1e-12));
    const double h = n_steps ? std::abs(s_end) / n_steps : 0.0;
    Vec x = x0;
    for (int i = 1; i <= n_steps; ++i) {
      const Vec k1 = field(x);
      const Vec k2 = field(x + 0.5 * h * k1);
      const Vec k3 = field(x + 0.5 * h * k2);
      const Vec k4 = field(x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      record(sign * h * i, x);
    }
  } catch (const Error& e) {
    c.complete = false;
    c.status = e.what();
  }
  return c;
}

std::vector<std::optional<Complex>> level_grid(const EigenpairSet& pairs, const std::vector<Vec>& grid,
                                               LevelKind kind, int mode, int workers) {
  if (kind == LevelKind::Subordinate && (mode < 2 || mode > static_cast<int>(pairs.size()))) {
    throw Error(ErrorKind::InvalidArgument, "subordinate mode index out of range");
  }
  std::vector<std::optional<Complex>> out(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    try {
      switch (kind) {
        case LevelKind::DominantMagnitude:
          out[i] = Complex(std::abs(pairs[0].phi(grid[i])), 0.0);
          break;
        case LevelKind::DominantAngle:
          out[i] = Complex(std::arg(pairs[0].phi(grid[i])), 0.0);
          break;
        case LevelKind::Subordinate:
          out[i] = pairs[static_cast<std::size_t>(mode - 1)].phi(grid[i]);
          break;
      }
    } catch (const Error&) {
    }
  });
  return out;
}

std::vector<std::optional<PFVector>> pf_field(const EigenpairSet& pairs, const std::vector<Vec>& grid,
                                              int workers) {
  std::vector<std::optional<PFVector>> out(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    try {
      out[i] = pf_vector(pairs, grid[i]);
    } catch (const Error&) {
    }
  });
  return out;
}

double max_adjacent_angle(const std::vector<std::optional<PFVector>>& field, int nx, int ny) {
  if (static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) != field.size()) {
    throw Error(ErrorKind::DimensionMismatch, "field size does not match the grid shape");
  }
  double worst = 0.0;
  auto at = [&](int i, int j) -> const std::optional<PFVector>& { return field[static_cast<std::size_t>(j * nx + i)]; };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      if (!at(i, j)) continue;
      if (i + 1 < nx && at(i + 1, j)) worst = std::max(worst, angle_between(at(i, j)->w, at(i + 1, j)->w));
      if (j + 1 < ny && at(i, j + 1)) worst = std::max(worst, angle_between(at(i, j)->w, at(i, j + 1)->w));
    }
  }
  return worst;
}

void write_pf_field_csv(std::ostream& out, const std::vector<std::optional<PFVector>>& field) {
  int n = 0;
  for (const auto& p : field) {
    if (p) {
      n = static_cast<int>(p->w.size());
      break;
    }
  }
  if (n == 0) n = 2;
  std::vector<std::string> header;
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (int i = 1; i <= n; ++i) header.push_back("w" + std::to_string(i));
  header.push_back("margin");
  for (int j = 2; j <= n; ++j) header.push_back("res_" + std::to_string(j));
  csv_header(out, header);
  for (const auto& p : field) {
    if (!p) continue;
    std::vector<double> row(p->point.data(), p->point.data() + p->point.size());
    row.insert(row.end(), p->w.data(), p->w.data() + p->w.size());
    row.push_back(p->margin);
    row.insert(row.end(), p->residuals.begin(), p->residuals.end());
    csv_line(out, row);
  }
}

void write_pf_curve_csv(std::ostream& out, const PFCurve& curve) {
  const int n = curve.points.empty() ? 2 : static_cast<int>(curve.points.front().size());
  std::vector<std::string> header{"s"};
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (int j = 2; j <= n; ++j) {
    header.push_back("phi_" + std::to_string(j) + "_re");
    header.push_back("phi_" + std::to_string(j) + "_im");
  }
  csv_header(out, header);
  for (std::size_t k = 0; k < curve.points.size(); ++k) {
    std::vector<double> row{curve.s[k]};
    row.insert(row.end(), curve.points[k].data(), curve.points[k].data() + curve.points[k].size());
    for (Eigen::Index j = 0; j < curve.phi[k].size(); ++j) {
      row.push_back(curve.phi[k][j].real());
      row.push_back(curve.phi[k][j].imag());
    }
    csv_line(out, row);
  }
}

}  // namespace conefield
