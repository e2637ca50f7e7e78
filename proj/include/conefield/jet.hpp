#pragma once

#include <cmath>

#include "conefield/types.hpp"

namespace conefield {

/// Forward-mode dual number with a full gradient of length n.
///
/// The gradient uses fixed-capacity storage so arithmetic never touches the
/// heap; the active length is set by the seeding variable.
struct Jet {
  using Gradient = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;

  double value = 0.0;
  Gradient grad;

  Jet() = default;
  Jet(double v, Gradient g) : value(v), grad(std::move(g)) {}

  static Jet constant(double v, int n) { return Jet(v, Gradient::Zero(n)); }
  static Jet variable(double v, int i, int n) {
    Gradient g = Gradient::Zero(n);
    g[i] = 1.0;
    return Jet(v, std::move(g));
  }
};

inline double value_of(double x) { return x; }
inline double value_of(const Jet& x) { return x.value; }

inline Jet operator-(const Jet& a) { return {-a.value, -a.grad}; }
inline Jet operator+(const Jet& a, const Jet& b) { return {a.value + b.value, a.grad + b.grad}; }
inline Jet operator-(const Jet& a, const Jet& b) { return {a.value - b.value, a.grad - b.grad}; }
inline Jet operator*(const Jet& a, const Jet& b) {
  return {a.value * b.value, b.value * a.grad + a.value * b.grad};
}
inline Jet operator/(const Jet& a, const Jet& b) {
  const double q = a.value / b.value;
  return {q, (a.grad - q * b.grad) / b.value};
}

inline Jet operator+(const Jet& a, double b) { return {a.value + b, a.grad}; }
inline Jet operator+(double a, const Jet& b) { return {a + b.value, b.grad}; }
inline Jet operator-(const Jet& a, double b) { return {a.value - b, a.grad}; }
inline Jet operator-(double a, const Jet& b) { return {a - b.value, -b.grad}; }
inline Jet operator*(const Jet& a, double b) { return {a.value * b, a.grad * b}; }
inline Jet operator*(double a, const Jet& b) { return {a * b.value, a * b.grad}; }
inline Jet operator/(const Jet& a, double b) { return {a.value / b, a.grad / b}; }

// Chain rule helper: g(a) with g'(a) = slope.
inline Jet chain(const Jet& a, double value, double slope) { return {value, slope * a.grad}; }

inline Jet sin(const Jet& a) { return chain(a, std::sin(a.value), std::cos(a.value)); }
inline Jet cos(const Jet& a) { return chain(a, std::cos(a.value), -std::sin(a.value)); }
inline Jet tan(const Jet& a) {
  const double t = std::tan(a.value);
  return chain(a, t, 1.0 + t * t);
}
inline Jet exp(const Jet& a) {
  const double e = std::exp(a.value);
  return chain(a, e, e);
}
inline Jet log(const Jet& a) { return chain(a, std::log(a.value), 1.0 / a.value); }
inline Jet sqrt(const Jet& a) {
  const double s = std::sqrt(a.value);
  return chain(a, s, 0.5 / s);
}
// Subgradient 0 at the kink.
inline Jet abs(const Jet& a) {
  const double sign = a.value > 0.0 ? 1.0 : (a.value < 0.0 ? -1.0 : 0.0);
  return chain(a, std::abs(a.value), sign);
}

/// a^b for a jet base and jet exponent. Callers are responsible for domain
/// checks (negative base with non-integer exponent).
inline Jet pow(const Jet& a, const Jet& b) {
  const double v = std::pow(a.value, b.value);
  Jet::Gradient g = b.value * std::pow(a.value, b.value - 1.0) * a.grad;
  if (!b.grad.isZero(0.0)) {
    // d/db a^b = a^b log a, only meaningful for a > 0.
    if (a.value > 0.0) g += v * std::log(a.value) * b.grad;
  }
  return {v, std::move(g)};
}

}  // namespace conefield
