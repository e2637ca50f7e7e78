#include "conefield/grid.hpp"

#include <cmath>
#include <sstream>

#include "conefield/csv.hpp"
#include "conefield/error.hpp"

namespace conefield {

GridSpec GridSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 5) {
    throw Error(ErrorKind::InvalidArgument, "grid must be lo1:hi1:lo2:hi2:res, got '" + text + "'");
  }
  GridSpec g;
  try {
    std::size_t used = 0;
    double* fields[4] = {&g.lo1, &g.hi1, &g.lo2, &g.hi2};
    for (int i = 0; i < 4; ++i) {
      *fields[i] = std::stod(parts[static_cast<std::size_t>(i)], &used);
      if (used != parts[static_cast<std::size_t>(i)].size()) throw std::invalid_argument(parts[static_cast<std::size_t>(i)]);
    }
    g.res = std::stoi(parts[4], &used);
    if (used != parts[4].size()) throw std::invalid_argument(parts[4]);
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, "malformed grid '" + text + "'");
  }
  g.validate();
  return g;
}

std::string GridSpec::to_string() const {
  return fmt17(lo1) + ":" + fmt17(hi1) + ":" + fmt17(lo2) + ":" + fmt17(hi2) + ":" + std::to_string(res);
}

void GridSpec::validate() const {
  if (!(std::isfinite(lo1) && std::isfinite(hi1) && std::isfinite(lo2) && std::isfinite(hi2))) {
    throw Error(ErrorKind::InvalidArgument, "grid bounds must be finite");
  }
  if (!(lo1 < hi1) || !(lo2 < hi2)) throw Error(ErrorKind::InvalidArgument, "grid bounds must satisfy lo < hi");
  if (res < 2) throw Error(ErrorKind::InvalidArgument, "grid resolution must be at least 2");
  if (!(exclude_disk >= 0.0)) throw Error(ErrorKind::InvalidArgument, "exclusion radius must be non-negative");
}

Vec GridSpec::center(int n) const {
  Vec c = Vec::Zero(n);
  c[0] = 0.5 * (lo1 + hi1);
  if (n > 1) c[1] = 0.5 * (lo2 + hi2);
  return c;
}

Grid make_grid(const GridSpec& spec, int n, const Vec& base) {
  spec.validate();
  if (n < 2) throw Error(ErrorKind::DimensionMismatch, "grids need at least two state coordinates");
  Grid g;
  g.spec = spec;
  g.nx = g.ny = spec.res;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      Vec x = base.size() == n ? base : Vec(Vec::Zero(n));
      x[0] = spec.lo1 + (spec.hi1 - spec.lo1) * i / (g.nx - 1);
      x[1] = spec.lo2 + (spec.hi2 - spec.lo2) * j / (g.ny - 1);
      if (spec.exclude_disk > 0.0 && std::hypot(x[0], x[1]) < spec.exclude_disk) {
        ++g.excluded;
        continue;
      }
      g.points.push_back(x);
      g.full_index.push_back(j * g.nx + i);
    }
  }
  return g;
}

}  // namespace conefield
