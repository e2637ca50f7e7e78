#pragma once

#include <exception>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "conefield/fixed_point.hpp"
#include "conefield/laplace.hpp"
#include "conefield/limit_cycle.hpp"

namespace conefield {

enum class ModeKind { FixedPoint, CycleAngle, CycleTransverse };

const char* to_string(ModeKind kind);

/// One eigenfunction resolved at one point.
struct ModeValue {
  Complex value;          // φ(x)
  CRowVec gradient;       // ∂φ(x)
  RowVec angle_gradient;  // ∂∠φ(x), angle mode only
  double residual = 0.0;  // convergence residual of the average
  double horizon = 0.0;   // averaging horizon used
};

struct KoopmanConfig {
  // Fixed-point modes: ΔT, T_max, tol as plain time units.
  AverageConfig fixed_point{};
  // Cycle modes: windows are whole periods. The transverse average multiplies
  // trajectory errors by e^{-λ2 t}, hence the tighter tolerance.
  IntegratorConfig angle_integrator{Method::DormandPrince45, 1e-2, 1e-20, 1e-11};
  IntegratorConfig transverse_integrator{Method::DormandPrince45, 1e-2, 1e-20, 1e-13};
  double angle_skip_periods = 2.0;
  double angle_max_periods = 40.0;
  double angle_tol = 1e-6;
  double angle_accept_tol = 1e-4;
  double transverse_skip_periods = 0.5;
  double transverse_accept_tol = 1e-2;  // largest accepted extrapolation correction
  double min_modulus = 1e-8;            // |φ_raw(x)| / |φ_raw(anchor)| below this: angle undefined
  bool memoize = true;
};

/// Computes every mode at a point from shared trajectories and memoizes the
/// result keyed by the exact point. Thread-safe.
class KoopmanEngine {
 public:
  virtual ~KoopmanEngine() = default;

  /// All modes at x; failures (e.g. angle undefined) are cached and rethrown.
  std::shared_ptr<const std::vector<ModeValue>> evaluate(const Vec& x) const;
  const SystemSpec& system() const { return *spec_; }
  int dimension() const { return spec_->dimension(); }
  std::size_t cache_size() const;

 protected:
  KoopmanEngine(std::shared_ptr<const SystemSpec> spec, bool memoize) : spec_(std::move(spec)), memoize_(memoize) {}
  virtual std::vector<ModeValue> compute(const Vec& x) const = 0;

  std::shared_ptr<const SystemSpec> spec_;

 private:
  bool memoize_;
  mutable std::mutex mutex_;
  struct Entry {
    std::shared_ptr<const std::vector<ModeValue>> values;
    std::exception_ptr error;
  };
  mutable std::unordered_map<std::string, Entry> cache_;
};

/// λ plus evaluators for φ_λ and ∂φ_λ, backed by a shared engine.
class KoopmanEigenpair {
 public:
  KoopmanEigenpair(std::shared_ptr<const KoopmanEngine> engine, int index, Complex lambda, ModeKind kind,
                   std::string observable, double scale);

  Complex lambda() const { return lambda_; }
  ModeKind kind() const { return kind_; }
  int index() const { return index_; }
  const std::string& observable() const { return observable_; }
  /// Normalization factor applied to the raw average.
  double scale() const { return scale_; }
  int dimension() const { return engine_->dimension(); }
  const SystemSpec& system() const { return engine_->system(); }
  const std::shared_ptr<const KoopmanEngine>& engine() const { return engine_; }

  ModeValue evaluate(const Vec& x) const;
  Complex phi(const Vec& x) const { return evaluate(x).value; }
  CRowVec gradient(const Vec& x) const { return evaluate(x).gradient; }
  /// ∂∠φ(x); only for the cycle angle mode.
  RowVec angle_gradient(const Vec& x) const;

 private:
  std::shared_ptr<const KoopmanEngine> engine_;
  int index_;
  Complex lambda_;
  ModeKind kind_;
  std::string observable_;
  double scale_;
};

struct EigenpairSet {
  std::vector<KoopmanEigenpair> pairs;  // descending Re λ
  std::vector<std::string> warnings;
  bool angle_dominant() const { return !pairs.empty() && pairs.front().kind() == ModeKind::CycleAngle; }
  const KoopmanEigenpair& operator[](std::size_t i) const { return pairs[i]; }
  std::size_t size() const { return pairs.size(); }
};

/// Modes φ_j built from g_j = v_jᵀ(x - x*), normalized so ∂φ_j(x*) = v_jᵀ.
/// Refuses a complex dominant eigenvalue or an unstable fixed point; warns
/// when 2 Re λ1 < Re λj < Re λ1 fails for some j >= 2.
EigenpairSet eigenpairs_fixed_point(const SystemSpec& spec, const FixedPointModel& fp,
                                    const KoopmanConfig& cfg = {});

/// Angle mode (λ1 = iω, g = x1, unit modulus, φ(anchor) = 1) and transverse
/// mode (λ2 = Floquet exponent, g = ξ(ρ(x))ᵀ(x - ρ(x))). Planar cycles only.
EigenpairSet eigenpairs_limit_cycle(const SystemSpec& spec, const LimitCycleModel& lc,
                                    const KoopmanConfig& cfg = {});

/// |∂φ(x)·f(x) - λφ(x)| / (|λ||φ(x)| + floor); +∞ when φ cannot be resolved.
double generator_residual(const SystemSpec& spec, const KoopmanEigenpair& pair, const Vec& x);

/// CSV: x1..xn, Re(phi), Im(phi), Re(dphi_1), Im(dphi_1), ..., residual, horizon.
/// Unresolved points are skipped.
void write_eigenpair_csv(std::ostream& out, const KoopmanEigenpair& pair, const std::vector<Vec>& points);

}  // namespace conefield
