#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conefield/cone.hpp"
#include "conefield/grid.hpp"
#include "conefield/koopman.hpp"
#include "conefield/pf.hpp"

namespace conefield {

enum class PipelineMode { Auto, FixedPoint, LimitCycle };
const char* to_string(PipelineMode m);

/// Everything a run depends on. Keys (see `keys()`) are flat dotted paths
/// shared by the config file and command-line overrides.
struct AnalysisConfig {
  std::string builtin;
  std::string system_file;
  std::string system_text;
  PipelineMode mode = PipelineMode::Auto;
  GridSpec grid;

  IntegratorConfig integrator{Method::DormandPrince45, 1e-2, 1e-14, 1e-11};
  AverageConfig averaging;

  int rays = 16;
  std::vector<double> horizons{0.5, 1.0, 2.0};
  double slack = 1e-6;
  double strict_T = 0.0;  // 0: 2 time units (fixed point) or one period (cycle)
  double eps_min = 1e-3;
  std::string cones_file;  // user-supplied cone rows for `verify`

  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int workers = 0;  // 0: hardware concurrency

  std::vector<double> trace_x0;
  double trace_t = 10.0;
  bool trace_frames = false;

  int pf_curves = 5;
  double pf_curve_length = 1.0;
  double pf_curve_step = 0.05;

  /// Sets one key; throws InvalidArgument for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// `key = value` lines; `#` starts a comment.
  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin = "config");
  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  static std::vector<std::string> keys();
  void validate() const;
  int effective_workers() const;
};

SystemSpec load_system(const AnalysisConfig& cfg);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

/// Resolved dynamics: which pipeline ran and its eigenpairs.
struct PipelineModel {
  explicit PipelineModel(SystemSpec s) : spec(std::move(s)) {}
  SystemSpec spec;
  PipelineMode mode = PipelineMode::Auto;
  std::optional<FixedPointModel> fixed_point;
  std::optional<LimitCycleModel> cycle;
  EigenpairSet pairs;
  std::vector<std::string> notes;
};

/// Probes (auto mode), locates the attractor and builds eigenpairs. Refusals
/// and other failures propagate as Error.
PipelineModel build_model(const AnalysisConfig& cfg, std::vector<StageTiming>& timings);

struct ResidualStats {
  std::size_t resolved = 0;
  std::size_t below_1e3 = 0;  // generator residual < 1e-3
  double max = 0.0;
  double median = 0.0;
};

struct PFStats {
  std::size_t resolved = 0;
  double max_relative_residual = 0.0;  // |∂φ_j·w| / |∂φ_j|
  double min_margin = 0.0;
  double max_adjacent_angle = 0.0;
};

struct RunResult {
  std::string command;
  int exit_status = 3;
  std::string error;
  std::optional<PositivityReport> report;
  std::vector<ResidualStats> residuals;  // per mode (analyze)
  std::optional<PFStats> pf;
  std::vector<StageTiming> timings;
  std::vector<std::string> artifacts;
  std::vector<std::string> notes;
};

/// Exit status for a verdict: 0 strictly positive, 1 positive, 2
/// counterexamples, 3 unresolved.
int exit_status(Verdict v);

/// Full pipeline with all exports into cfg.out_dir.
RunResult run_analyze(const AnalysisConfig& cfg);
/// Positivity and strictness only; computed cones or cfg.cones_file.
RunResult run_verify(const AnalysisConfig& cfg);
/// Trajectory (and optionally prolonged frames) from cfg.trace_x0.
RunResult run_trace(const AnalysisConfig& cfg);
/// Cone grid, PF field, eigenfunction levels and PF curves without verification.
RunResult run_export_grid(const AnalysisConfig& cfg);

/// Structured text report of a positivity run.
std::string format_report(const AnalysisConfig& cfg, const PipelineModel* model, const Grid& grid,
                          const PositivityReport& rep, const RunResult& run);

}  // namespace conefield
