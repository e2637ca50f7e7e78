#pragma once

#include "conefield/types.hpp"
#include "conefield/vectorfield.hpp"

namespace conefield {

/// Eigen-decomposition of a real square matrix with eigenvalues sorted by
/// descending real part (ties: descending imaginary part).
struct EigenData {
  CVec values;
  CMat right;  // columns, unit norm
  CMat left;   // rows, left(j) * right(j) == 1
  double condition = 0.0;  // condition number of `right`
};

/// Throws IllConditioned when the eigenvector matrix is numerically singular
/// (condition number above `max_condition`).
EigenData sorted_eigen(const Mat& a, double max_condition = 1e12);

struct NewtonConfig {
  int max_iterations = 50;
  double tolerance = 1e-12;  // relative to (1 + |guess|)
};

struct FixedPointModel {
  Vec point;
  Mat jacobian;
  EigenData eigen;
  int iterations = 0;
  double residual = 0.0;  // |f(x*)|

  const CVec& eigenvalues() const { return eigen.values; }
  bool is_stable() const { return eigen.values.real().maxCoeff() < 0.0; }
  /// Real dominant eigenvalue (its imaginary part vanishes to rounding).
  bool dominant_is_real() const;
};

FixedPointModel find_fixed_point(const SystemSpec& spec, const Vec& guess, const NewtonConfig& cfg = {});

}  // namespace conefield
