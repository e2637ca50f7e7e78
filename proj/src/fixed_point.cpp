#include "conefield/fixed_point.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "conefield/error.hpp"

namespace conefield {

EigenData sorted_eigen(const Mat& a, double max_condition) {
  const Eigen::Index n = a.rows();
  Eigen::EigenSolver<Mat> solver(a, true);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::NoConvergence, "eigen-decomposition failed");

  const CVec vals = solver.eigenvalues();
  const CMat vecs = solver.eigenvectors();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    if (vals[i].real() != vals[j].real()) return vals[i].real() > vals[j].real();
    return vals[i].imag() > vals[j].imag();
  });

  EigenData out;
  out.values.resize(n);
  out.right.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.values[k] = vals[src];
    CVec v = vecs.col(src);
    v.normalize();
    // Deterministic phase: the largest-modulus entry is real and positive.
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    v *= std::abs(v[big]) / v[big];
    // Snap the imaginary part of eigenvectors of real eigenvalues.
    if (std::abs(out.values[k].imag()) <= 1e-14 * std::max(1.0, std::abs(out.values[k]))) {
      out.values[k] = Complex(out.values[k].real(), 0.0);
      v = CVec(v.real().cast<Complex>());
      v.normalize();
    }
    out.right.col(k) = v;
  }

  Eigen::JacobiSVD<CMat> svd(out.right);
  const auto& sv = svd.singularValues();
  out.condition = sv[n - 1] > 0.0 ? sv[0] / sv[n - 1] : std::numeric_limits<double>::infinity();
  if (!(out.condition <= max_condition)) {
    throw Error(ErrorKind::IllConditioned,
                "eigenvectors are not independent (condition number " + std::to_string(out.condition) + ")");
  }
  out.left = out.right.inverse();
  return out;
}

bool FixedPointModel::dominant_is_real() const {
  const Complex l1 = eigen.values[0];
  return std::abs(l1.imag()) <= 1e-12 * std::max(1.0, std::abs(l1));
}

FixedPointModel find_fixed_point(const SystemSpec& spec, const Vec& guess, const NewtonConfig& cfg) {
  if (guess.size() != spec.dimension()) throw Error(ErrorKind::DimensionMismatch, "guess has wrong length");
  const double target = cfg.tolerance * (1.0 + guess.norm());
  Vec x = guess;
  Vec f;
  Mat jac;
  int it = 0;
  for (;; ++it) {
    spec.eval_with_jacobian(x, f, jac);
    if (f.norm() <= target) break;
    if (it >= cfg.max_iterations) {
      throw Error(ErrorKind::NoConvergence, "Newton iteration did not converge in " +
                                                std::to_string(cfg.max_iterations) +
                                                " iterations (|f| = " + std::to_string(f.norm()) + ")");
    }
    Eigen::FullPivLU<Mat> lu(jac);
    if (!lu.isInvertible()) throw Error(ErrorKind::NoConvergence, "singular Jacobian during Newton iteration");
    x -= lu.solve(f);
    if (!x.allFinite()) throw Error(ErrorKind::NoConvergence, "Newton iteration diverged");
  }
  // Polish toward the floating-point equilibrium while the residual drops.
  for (int k = 0; k < 3 && f.norm() > 0.0; ++k) {
    Eigen::FullPivLU<Mat> lu(jac);
    if (!lu.isInvertible()) break;
    const Vec y = x - lu.solve(f);
    Vec fy;
    Mat jy;
    spec.eval_with_jacobian(y, fy, jy);
    if (!(fy.norm() < f.norm())) break;
    x = y;
    f = fy;
    jac = jy;
  }
  FixedPointModel fp;
  fp.point = x;
  fp.jacobian = jac;
  fp.eigen = sorted_eigen(jac);
  fp.iterations = it;
  fp.residual = f.norm();
  return fp;
}

}  // namespace conefield
