#pragma once

#include <string>
#include <vector>

#include "conefield/types.hpp"

namespace conefield {

/// Rectangular res × res grid over [lo1, hi1] × [lo2, hi2] in the first two
/// coordinates, optionally without the open disk |(x1, x2)| < exclude_disk.
struct GridSpec {
  double lo1 = -2.0, hi1 = 2.0, lo2 = -2.0, hi2 = 2.0;
  int res = 15;
  double exclude_disk = 0.0;

  /// "lo1:hi1:lo2:hi2:res"; throws InvalidArgument.
  static GridSpec parse(const std::string& text);
  std::string to_string() const;
  void validate() const;
  Vec center(int n) const;
};

struct Grid {
  GridSpec spec;
  int nx = 0, ny = 0;
  std::vector<Vec> points;       // kept points, row-major order (x1 fastest)
  std::vector<int> full_index;   // index of each kept point in the full nx·ny grid
  int excluded = 0;
};

/// Points in R^n: coordinates beyond the second are taken from `base`
/// (zero when empty).
Grid make_grid(const GridSpec& spec, int n, const Vec& base = Vec());

}  // namespace conefield
