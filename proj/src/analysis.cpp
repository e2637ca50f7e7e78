#include "conefield/analysis.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "conefield/csv.hpp"
#include "conefield/error.hpp"
#include "conefield/integrator.hpp"
#include "conefield/parallel.hpp"
#include "json.hpp"

namespace conefield {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, key + ": expected a number, got '" + v + "'");
  }
}

long long parse_integer(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, key + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorKind::InvalidArgument, key + ": expected true/false, got '" + v + "'");
}

std::vector<double> parse_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, item));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt17(v[i]);
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct Key {
  const char* name;
  std::function<void(AnalysisConfig&, const std::string&)> set;
  std::function<std::string(const AnalysisConfig&)> get;
};

const std::vector<Key>& key_table() {
  using C = AnalysisConfig;
  static const std::vector<Key> table = {
      {"system.builtin", [](C& c, const std::string& v) { c.builtin = v; }, [](const C& c) { return c.builtin; }},
      {"system.file", [](C& c, const std::string& v) { c.system_file = v; }, [](const C& c) { return c.system_file; }},
      {"system.text", [](C& c, const std::string& v) { c.system_text = v; }, [](const C& c) { return c.system_text; }},
      {"mode",
       [](C& c, const std::string& v) {
         if (v == "auto") {
           c.mode = PipelineMode::Auto;
         } else if (v == "fixed-point") {
           c.mode = PipelineMode::FixedPoint;
         } else if (v == "limit-cycle") {
           c.mode = PipelineMode::LimitCycle;
         } else {
           throw Error(ErrorKind::InvalidArgument, "mode: expected auto | fixed-point | limit-cycle, got '" + v + "'");
         }
       },
       [](const C& c) { return std::string(to_string(c.mode)); }},
      {"grid",
       [](C& c, const std::string& v) {
         const double r = c.grid.exclude_disk;
         c.grid = GridSpec::parse(v);
         c.grid.exclude_disk = r;
       },
       [](const C& c) { return c.grid.to_string(); }},
      {"grid.exclude_disk", [](C& c, const std::string& v) { c.grid.exclude_disk = parse_real("grid.exclude_disk", v); },
       [](const C& c) { return fmt17(c.grid.exclude_disk); }},
      {"integrator.method",
       [](C& c, const std::string& v) {
         if (v == "dp45") {
           c.integrator.method = Method::DormandPrince45;
         } else if (v == "rk4") {
           c.integrator.method = Method::RK4;
         } else {
           throw Error(ErrorKind::InvalidArgument, "integrator.method: expected dp45 | rk4, got '" + v + "'");
         }
       },
       [](const C& c) { return std::string(c.integrator.method == Method::RK4 ? "rk4" : "dp45"); }},
      {"integrator.initial_step",
       [](C& c, const std::string& v) { c.integrator.initial_step = parse_real("integrator.initial_step", v); },
       [](const C& c) { return fmt17(c.integrator.initial_step); }},
      {"integrator.abs_tol", [](C& c, const std::string& v) { c.integrator.abs_tol = parse_real("integrator.abs_tol", v); },
       [](const C& c) { return fmt17(c.integrator.abs_tol); }},
      {"integrator.rel_tol", [](C& c, const std::string& v) { c.integrator.rel_tol = parse_real("integrator.rel_tol", v); },
       [](const C& c) { return fmt17(c.integrator.rel_tol); }},
      {"integrator.max_steps",
       [](C& c, const std::string& v) { c.integrator.max_steps = parse_integer("integrator.max_steps", v); },
       [](const C& c) { return std::to_string(c.integrator.max_steps); }},
      {"integrator.divergence_radius",
       [](C& c, const std::string& v) { c.integrator.divergence_radius = parse_real("integrator.divergence_radius", v); },
       [](const C& c) { return fmt17(c.integrator.divergence_radius); }},
      {"averaging.window", [](C& c, const std::string& v) { c.averaging.window = parse_real("averaging.window", v); },
       [](const C& c) { return fmt17(c.averaging.window); }},
      {"averaging.max_horizon",
       [](C& c, const std::string& v) { c.averaging.max_horizon = parse_real("averaging.max_horizon", v); },
       [](const C& c) { return fmt17(c.averaging.max_horizon); }},
      {"averaging.tol", [](C& c, const std::string& v) { c.averaging.tol = parse_real("averaging.tol", v); },
       [](const C& c) { return fmt17(c.averaging.tol); }},
      {"averaging.accept_tol",
       [](C& c, const std::string& v) { c.averaging.accept_tol = parse_real("averaging.accept_tol", v); },
       [](const C& c) { return fmt17(c.averaging.accept_tol); }},
      {"verify.rays", [](C& c, const std::string& v) { c.rays = static_cast<int>(parse_integer("verify.rays", v)); },
       [](const C& c) { return std::to_string(c.rays); }},
      {"verify.horizons", [](C& c, const std::string& v) { c.horizons = parse_reals("verify.horizons", v); },
       [](const C& c) { return join(c.horizons); }},
      {"verify.slack", [](C& c, const std::string& v) { c.slack = parse_real("verify.slack", v); },
       [](const C& c) { return fmt17(c.slack); }},
      {"verify.strict_T", [](C& c, const std::string& v) { c.strict_T = parse_real("verify.strict_T", v); },
       [](const C& c) { return fmt17(c.strict_T); }},
      {"verify.eps_min", [](C& c, const std::string& v) { c.eps_min = parse_real("verify.eps_min", v); },
       [](const C& c) { return fmt17(c.eps_min); }},
      {"verify.cones", [](C& c, const std::string& v) { c.cones_file = v; }, [](const C& c) { return c.cones_file; }},
      {"out", [](C& c, const std::string& v) { c.out_dir = v; }, [](const C& c) { return c.out_dir; }},
      {"seed",
       [](C& c, const std::string& v) {
         const long long s = parse_integer("seed", v);
         if (s < 0) throw Error(ErrorKind::InvalidArgument, "seed must be non-negative");
         c.seed = static_cast<std::uint64_t>(s);
       },
       [](const C& c) { return std::to_string(c.seed); }},
      {"workers", [](C& c, const std::string& v) { c.workers = static_cast<int>(parse_integer("workers", v)); },
       [](const C& c) { return std::to_string(c.workers); }},
      {"trace.x0", [](C& c, const std::string& v) { c.trace_x0 = parse_reals("trace.x0", v); },
       [](const C& c) { return join(c.trace_x0); }},
      {"trace.t_end", [](C& c, const std::string& v) { c.trace_t = parse_real("trace.t_end", v); },
       [](const C& c) { return fmt17(c.trace_t); }},
      {"trace.frames", [](C& c, const std::string& v) { c.trace_frames = parse_bool("trace.frames", v); },
       [](const C& c) { return std::string(c.trace_frames ? "true" : "false"); }},
      {"pf.curves", [](C& c, const std::string& v) { c.pf_curves = static_cast<int>(parse_integer("pf.curves", v)); },
       [](const C& c) { return std::to_string(c.pf_curves); }},
      {"pf.curve_length", [](C& c, const std::string& v) { c.pf_curve_length = parse_real("pf.curve_length", v); },
       [](const C& c) { return fmt17(c.pf_curve_length); }},
      {"pf.curve_step", [](C& c, const std::string& v) { c.pf_curve_step = parse_real("pf.curve_step", v); },
       [](const C& c) { return fmt17(c.pf_curve_step); }},
  };
  return table;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename Fn>
auto timed(std::vector<StageTiming>& timings, const std::string& stage, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  if constexpr (std::is_void_v<decltype(fn())>) {
    fn();
    timings.push_back({stage, seconds_since(t0)});
  } else {
    auto r = fn();
    timings.push_back({stage, seconds_since(t0)});
    return r;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class OutputDir {
 public:
  OutputDir(const std::string& dir, RunResult& run) : dir_(dir), run_(run) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create output directory '" + dir + "': " + ec.message());
  }
  template <typename Fn>
  void write(const std::string& name, Fn&& fn) {
    const fs::path p = fs::path(dir_) / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + p.string() + "'");
    fn(out);
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "write failed for '" + p.string() + "'");
    run_.artifacts.push_back(name);
  }
  const std::string& path() const { return dir_; }

 private:
  std::string dir_;
  RunResult& run_;
};

VerifyOptions verify_options(const AnalysisConfig& cfg) {
  VerifyOptions o;
  o.rays = cfg.rays;
  o.horizons = cfg.horizons;
  o.slack = cfg.slack;
  o.workers = cfg.effective_workers();
  o.seed = cfg.seed;
  o.integrator = cfg.integrator;
  return o;
}

KoopmanConfig koopman_config(const AnalysisConfig& cfg) {
  KoopmanConfig k;
  k.fixed_point.window = cfg.averaging.window;
  k.fixed_point.max_horizon = cfg.averaging.max_horizon;
  k.fixed_point.tol = cfg.averaging.tol;
  k.fixed_point.accept_tol = cfg.averaging.accept_tol;
  k.fixed_point.integrator.divergence_radius = cfg.integrator.divergence_radius;
  return k;
}

std::string complex_str(Complex z) {
  std::ostringstream s;
  s << fmt17(z.real());
  if (z.imag() != 0.0) s << (z.imag() < 0 ? " - " : " + ") << fmt17(std::abs(z.imag())) << "i";
  return s.str();
}

std::string vec_str(const Vec& v) {
  std::string s = "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt17(v[i]);
  return s + ")";
}

void write_margins_csv(std::ostream& out, const PositivityReport& rep, const StrictnessResult* strict, int n) {
  std::vector<std::string> header;
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  header.push_back("resolved");
  for (std::size_t h = 0; h < rep.horizons.size(); ++h) header.push_back("margin_t" + fmt17(rep.horizons[h]));
  header.push_back("worst");
  if (strict) header.push_back("strict_margin");
  csv_header(out, header);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < rep.points.size(); ++i) {
    const PointMargins& pm = rep.points[i];
    std::vector<double> row(pm.point.data(), pm.point.data() + pm.point.size());
    row.push_back(pm.resolved ? 1.0 : 0.0);
    for (std::size_t h = 0; h < rep.horizons.size(); ++h) row.push_back(pm.resolved ? pm.margins[h] : nan);
    row.push_back(pm.resolved ? pm.worst : nan);
    if (strict) row.push_back(strict->per_point[i]);
    csv_line(out, row);
  }
}

void write_counterexamples_csv(std::ostream& out, const PositivityReport& rep, int n) {
  std::vector<std::string> header;
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (int i = 1; i <= n; ++i) header.push_back("dx" + std::to_string(i));
  header.push_back("t");
  header.push_back("margin");
  csv_header(out, header);
  for (const Counterexample& c : rep.counterexamples) {
    std::vector<double> row(c.point.data(), c.point.data() + c.point.size());
    row.insert(row.end(), c.ray.data(), c.ray.data() + c.ray.size());
    row.push_back(c.time);
    row.push_back(c.margin);
    csv_line(out, row);
  }
}

double default_strict_T(const AnalysisConfig& cfg, const PipelineModel* model) {
  if (cfg.strict_T > 0.0) return cfg.strict_T;
  if (model && model->cycle) return model->cycle->period;
  return 2.0;
}

nlohmann::ordered_json manifest_json(const AnalysisConfig& cfg, const RunResult& run, const PipelineModel* model,
                                     const Grid* grid) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["tool"] = "conefield";
  j["command"] = run.command;
  j["versions"] = {{"conefield", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__},
                   {"cxx_standard", static_cast<long>(__cplusplus)}};
  ordered_json conf = ordered_json::object();
  for (const auto& [k, v] : cfg.entries()) conf[k] = v;
  conf["workers.effective"] = cfg.effective_workers();
  j["config"] = conf;
  j["exit_status"] = run.exit_status;
  if (!run.error.empty()) j["error"] = run.error;
  if (model) {
    ordered_json p;
    p["system"] = model->spec.name();
    p["definition"] = print_system(model->spec);
    p["dimension"] = model->spec.dimension();
    p["pipeline"] = to_string(model->mode);
    if (model->fixed_point) {
      const FixedPointModel& fp = *model->fixed_point;
      p["fixed_point"] = {{"point", std::vector<double>(fp.point.data(), fp.point.data() + fp.point.size())},
                          {"residual", fp.residual},
                          {"newton_iterations", fp.iterations},
                          {"eigenvector_condition", fp.eigen.condition}};
    }
    if (model->cycle) {
      const LimitCycleModel& lc = *model->cycle;
      ordered_json exps = ordered_json::array();
      for (Eigen::Index i = 0; i < lc.exponents.size(); ++i) {
        exps.push_back({lc.exponents[i].real(), lc.exponents[i].imag()});
      }
      p["limit_cycle"] = {{"period", lc.period},
                          {"anchor", std::vector<double>(lc.anchor.data(), lc.anchor.data() + lc.anchor.size())},
                          {"closure_error", lc.closure_error},
                          {"floquet_exponents", exps}};
    }
    ordered_json modes = ordered_json::array();
    for (std::size_t k = 0; k < model->pairs.size(); ++k) {
      const KoopmanEigenpair& e = model->pairs[k];
      ordered_json m = {{"index", k + 1},
                        {"lambda", {e.lambda().real(), e.lambda().imag()}},
                        {"kind", to_string(e.kind())},
                        {"observable", e.observable()},
                        {"scale", e.scale()}};
      if (k < run.residuals.size()) {
        const ResidualStats& r = run.residuals[k];
        m["generator_residual"] = {{"resolved", r.resolved},
                                   {"below_1e-3", r.below_1e3},
                                   {"max", r.max},
                                   {"median", r.median}};
      }
      modes.push_back(m);
    }
    p["eigenpairs"] = modes;
    p["warnings"] = model->pairs.warnings;
    p["notes"] = model->notes;
    j["model"] = p;
  }
  if (grid) {
    j["grid"] = {{"spec", grid->spec.to_string()},
                 {"exclude_disk", grid->spec.exclude_disk},
                 {"points", grid->points.size()},
                 {"excluded", grid->excluded}};
  }
  if (run.report) {
    const PositivityReport& r = *run.report;
    ordered_json v;
    v["verdict"] = to_string(r.verdict);
    v["rays"] = r.rays;
    v["horizons"] = r.horizons;
    v["slack"] = r.slack;
    v["resolved"] = r.resolved;
    v["skipped"] = r.skipped;
    v["worst_margin"] = std::isfinite(r.worst_margin) ? ordered_json(r.worst_margin) : ordered_json(nullptr);
    v["counterexamples"] = r.counterexample_count;
    if (r.strictness_evaluated) {
      v["strictness"] = {{"T", r.strict_T},
                         {"eps_min", r.eps_min},
                         {"epsilon_hat", std::isfinite(r.epsilon_hat) ? ordered_json(r.epsilon_hat) : ordered_json(nullptr)},
                         {"resolved", r.strict_resolved},
                         {"skipped", r.strict_skipped}};
    }
    j["verification"] = v;
  }
  if (run.pf) {
    j["pf"] = {{"resolved", run.pf->resolved},
               {"max_relative_residual", run.pf->max_relative_residual},
               {"min_margin", run.pf->min_margin},
               {"max_adjacent_angle", run.pf->max_adjacent_angle}};
  }
  ordered_json t = ordered_json::object();
  for (const StageTiming& s : run.timings) t[s.stage] = s.seconds;
  j["timings_seconds"] = t;
  j["notes"] = run.notes;
  j["artifacts"] = run.artifacts;
  return j;
}

void finish(const AnalysisConfig& cfg, RunResult& run, const PipelineModel* model, const Grid* grid) {
  try {
    OutputDir out(cfg.out_dir, run);
    run.artifacts.push_back("manifest.json");
    const std::string text = manifest_json(cfg, run, model, grid).dump(2) + "\n";
    const fs::path p = fs::path(cfg.out_dir) / "manifest.json";
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw Error(ErrorKind::Io, "cannot write '" + p.string() + "'");
  } catch (const Error& e) {
    if (run.error.empty()) run.error = e.what();
    run.exit_status = 3;
  }
}

std::string error_text(const Error& e) { return std::string(to_string(e.kind())) + ": " + e.what(); }

std::vector<ResidualStats> residual_stats(const PipelineModel& model, const Grid& grid, int workers) {
  std::vector<ResidualStats> out;
  for (std::size_t k = 0; k < model.pairs.size(); ++k) {
    std::vector<double> r(grid.points.size());
    parallel_for(grid.points.size(), workers,
                 [&](std::size_t i) { r[i] = generator_residual(model.spec, model.pairs[k], grid.points[i]); });
    ResidualStats s;
    std::vector<double> finite;
    for (double v : r) {
      if (!std::isfinite(v)) continue;
      finite.push_back(v);
      if (v < 1e-3) ++s.below_1e3;
      s.max = std::max(s.max, v);
    }
    s.resolved = finite.size();
    if (!finite.empty()) {
      std::nth_element(finite.begin(), finite.begin() + static_cast<long>(finite.size() / 2), finite.end());
      s.median = finite[finite.size() / 2];
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::optional<PFVector>> pf_full_grid(const PipelineModel& model, const Grid& grid, int workers,
                                                  PFStats& stats) {
  const auto kept = pf_field(model.pairs, grid.points, workers);
  std::vector<std::optional<PFVector>> full(static_cast<std::size_t>(grid.nx * grid.ny));
  stats = PFStats{};
  stats.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (!kept[i]) continue;
    full[static_cast<std::size_t>(grid.full_index[i])] = kept[i];
    ++stats.resolved;
    stats.min_margin = std::min(stats.min_margin, kept[i]->margin);
    for (double r : kept[i]->relative_residuals) stats.max_relative_residual = std::max(stats.max_relative_residual, r);
  }
  if (stats.resolved == 0) stats.min_margin = 0.0;
  stats.max_adjacent_angle = max_adjacent_angle(full, grid.nx, grid.ny);
  return kept;
}

void write_levels_csv(std::ostream& out, const PipelineModel& model, const Grid& grid, int workers) {
  const int n = model.spec.dimension();
  std::vector<std::string> header;
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (std::size_t k = 1; k <= model.pairs.size(); ++k) {
    header.push_back("phi_" + std::to_string(k) + "_re");
    header.push_back("phi_" + std::to_string(k) + "_im");
  }
  header.push_back("dominant_magnitude");
  header.push_back("dominant_angle");
  csv_header(out, header);
  std::vector<std::optional<CVec>> vals(grid.points.size());
  parallel_for(grid.points.size(), workers, [&](std::size_t i) {
    try {
      CVec v(static_cast<Eigen::Index>(model.pairs.size()));
      for (std::size_t k = 0; k < model.pairs.size(); ++k) v[static_cast<Eigen::Index>(k)] = model.pairs[k].phi(grid.points[i]);
      vals[i] = v;
    } catch (const Error&) {
    }
  });
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < grid.points.size(); ++i) {
    std::vector<double> row(grid.points[i].data(), grid.points[i].data() + n);
    for (std::size_t k = 0; k < model.pairs.size(); ++k) {
      row.push_back(vals[i] ? (*vals[i])[static_cast<Eigen::Index>(k)].real() : nan);
      row.push_back(vals[i] ? (*vals[i])[static_cast<Eigen::Index>(k)].imag() : nan);
    }
    row.push_back(vals[i] ? std::abs((*vals[i])[0]) : nan);
    row.push_back(vals[i] ? std::arg((*vals[i])[0]) : nan);
    csv_line(out, row);
  }
}

}  // namespace

const char* to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::Auto: return "auto";
    case PipelineMode::FixedPoint: return "fixed-point";
    case PipelineMode::LimitCycle: return "limit-cycle";
  }
  return "?";
}

// ---------------------------------------------------------------------------

void AnalysisConfig::set(const std::string& key, const std::string& value) {
  for (const Key& k : key_table()) {
    if (key == k.name) {
      k.set(*this, trim(value));
      return;
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
}

void AnalysisConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidArgument, origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.kind(), origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void AnalysisConfig::load_file(const std::string& path) { load_text(read_file(path), path); }

std::vector<std::pair<std::string, std::string>> AnalysisConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : key_table()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::vector<std::string> AnalysisConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.emplace_back(k.name);
  return out;
}

void AnalysisConfig::validate() const {
  grid.validate();
  integrator.validate();
  averaging.validate();
  if (rays < 2) throw Error(ErrorKind::InvalidArgument, "verify.rays must be at least 2");
  if (horizons.empty()) throw Error(ErrorKind::InvalidArgument, "verify.horizons must not be empty");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0) || (i > 0 && !(horizons[i] > horizons[i - 1]))) {
      throw Error(ErrorKind::InvalidArgument, "verify.horizons must be positive and increasing");
    }
  }
  if (!(slack >= 0.0)) throw Error(ErrorKind::InvalidArgument, "verify.slack must be non-negative");
  if (!(strict_T >= 0.0)) throw Error(ErrorKind::InvalidArgument, "verify.strict_T must be non-negative");
  if (workers < 0) throw Error(ErrorKind::InvalidArgument, "workers must be non-negative");
  if (pf_curves < 0 || !(pf_curve_length >= 0.0) || !(pf_curve_step > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "pf curve settings out of range");
  }
  for (const std::string* f : {&system_file, &cones_file}) {
    if (!f->empty() && !fs::exists(*f)) throw Error(ErrorKind::Io, "file not found: '" + *f + "'");
  }
}

int AnalysisConfig::effective_workers() const {
  if (workers > 0) return workers;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

SystemSpec load_system(const AnalysisConfig& cfg) {
  const int sources = !cfg.builtin.empty() + !cfg.system_file.empty() + !cfg.system_text.empty();
  if (sources == 0) throw Error(ErrorKind::InvalidArgument, "no system given (use --builtin or --system-file)");
  if (sources > 1) throw Error(ErrorKind::InvalidArgument, "give exactly one of builtin, system file, system text");
  if (!cfg.builtin.empty()) return builtin(cfg.builtin);
  if (!cfg.system_file.empty()) return parse_system(read_file(cfg.system_file), cfg.system_file);
  return parse_system(cfg.system_text, "inline");
}

PipelineModel build_model(const AnalysisConfig& cfg, std::vector<StageTiming>& timings) {
  PipelineModel model(load_system(cfg));
  const SystemSpec& spec = model.spec;
  const int n = spec.dimension();
  const KoopmanConfig kcfg = koopman_config(cfg);
  const Vec center = cfg.grid.center(n);

  std::optional<FixedPointModel> fp;
  std::string fp_failure;
  if (cfg.mode != PipelineMode::LimitCycle) {
    try {
      fp = timed(timings, "fixed_point", [&] { return find_fixed_point(spec, center); });
    } catch (const Error& e) {
      if (cfg.mode == PipelineMode::FixedPoint) throw;
      fp_failure = error_text(e);
    }
  } else {
    try {
      fp = find_fixed_point(spec, center);
    } catch (const Error&) {
    }
  }

  if (cfg.mode == PipelineMode::FixedPoint || (cfg.mode == PipelineMode::Auto && fp)) {
    try {
      model.pairs = timed(timings, "eigenpairs", [&] { return eigenpairs_fixed_point(spec, *fp, kcfg); });
      model.mode = PipelineMode::FixedPoint;
      model.fixed_point = fp;
      model.notes.push_back("fixed point at " + vec_str(fp->point));
      return model;
    } catch (const Error& e) {
      if (cfg.mode == PipelineMode::FixedPoint || e.kind() != ErrorKind::Refusal) throw;
      model.notes.push_back("auto: fixed-point pipeline " + std::string(e.what()) + "; trying the limit-cycle pipeline");
    }
  } else if (cfg.mode == PipelineMode::Auto) {
    model.notes.push_back("auto: no fixed point near the grid center (" + fp_failure + "); trying the limit-cycle pipeline");
  }

  Vec start = fp ? fp->point : center;
  start[0] += 0.05 * (cfg.grid.hi1 - cfg.grid.lo1);
  model.cycle.emplace(timed(timings, "limit_cycle", [&] { return find_limit_cycle(spec, start); }));
  model.pairs = timed(timings, "eigenpairs", [&] { return eigenpairs_limit_cycle(spec, *model.cycle, kcfg); });
  model.mode = PipelineMode::LimitCycle;
  model.notes.push_back("limit cycle with period " + fmt17(model.cycle->period) + " from start " + vec_str(start));
  return model;
}

int exit_status(Verdict v) {
  switch (v) {
    case Verdict::StrictlyPositive: return 0;
    case Verdict::Positive: return 1;
    case Verdict::Counterexamples: return 2;
    case Verdict::Unresolved: return 3;
  }
  return 3;
}

std::string format_report(const AnalysisConfig& cfg, const PipelineModel* model, const Grid& grid,
                          const PositivityReport& rep, const RunResult& run) {
  std::ostringstream o;
  o << "conefield positivity report\n";
  o << "command: " << run.command << "\n";
  if (model) {
    o << "system: " << model->spec.name() << " (n = " << model->spec.dimension() << ")\n";
    o << "pipeline: " << to_string(model->mode) << "\n";
    if (model->fixed_point) o << "fixed_point: " << vec_str(model->fixed_point->point) << "\n";
    if (model->cycle) {
      o << "period: " << fmt17(model->cycle->period) << "\n";
      for (Eigen::Index i = 0; i < model->cycle->exponents.size(); ++i) {
        o << "floquet_exponent_" << i + 2 << ": " << complex_str(model->cycle->exponents[i]) << "\n";
      }
    }
    o << "\n[eigenpairs]\n";
    for (std::size_t k = 0; k < model->pairs.size(); ++k) {
      const KoopmanEigenpair& e = model->pairs[k];
      o << "mode_" << k + 1 << ": lambda = " << complex_str(e.lambda()) << ", kind = " << to_string(e.kind())
        << ", observable = " << e.observable() << ", scale = " << fmt17(e.scale()) << "\n";
      if (k < run.residuals.size()) {
        const ResidualStats& r = run.residuals[k];
        o << "mode_" << k + 1 << "_generator_residual: below 1e-3 at " << r.below_1e3 << "/" << r.resolved
          << " resolved points, median " << fmt17(r.median) << ", max " << fmt17(r.max) << "\n";
      }
    }
    for (const std::string& w : model->pairs.warnings) o << "warning: " << w << "\n";
    for (const std::string& s : model->notes) o << "note: " << s << "\n";
  } else {
    o << "cones: " << cfg.cones_file << "\n";
  }
  o << "\n[grid]\n";
  o << "grid: " << grid.spec.to_string() << "\n";
  o << "exclude_disk: " << fmt17(grid.spec.exclude_disk) << "\n";
  o << "points: " << grid.points.size() << " (excluded " << grid.excluded << ")\n";

  o << "\n[positivity]\n";
  o << "rays: " << rep.rays << "\n";
  o << "horizons: " << join(rep.horizons) << "\n";
  o << "slack: " << fmt17(rep.slack) << "\n";
  o << "resolved: " << rep.resolved << "\n";
  o << "skipped: " << rep.skipped << "\n";
  std::map<std::string, int> reasons;
  for (const PointMargins& pm : rep.points) {
    if (!pm.resolved) reasons[pm.skip_reason.substr(0, pm.skip_reason.find(':'))]++;
  }
  for (const auto& [r, c] : reasons) o << "skipped_reason: " << r << " x " << c << "\n";
  o << "worst_margin: " << (rep.resolved ? fmt17(rep.worst_margin) : "n/a") << "\n";
  o << "counterexamples: " << rep.counterexample_count << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(rep.counterexamples.size(), 10); ++i) {
    const Counterexample& c = rep.counterexamples[i];
    o << "counterexample: x = " << vec_str(c.point) << ", dx = " << vec_str(c.ray) << ", t = " << fmt17(c.time)
      << ", margin = " << fmt17(c.margin) << "\n";
  }
  if (rep.strictness_evaluated) {
    o << "\n[strictness]\n";
    o << "T: " << fmt17(rep.strict_T) << "\n";
    o << "eps_min: " << fmt17(rep.eps_min) << "\n";
    o << "epsilon_hat: " << (rep.strict_resolved ? fmt17(rep.epsilon_hat) : "n/a") << "\n";
    o << "resolved: " << rep.strict_resolved << "\n";
    o << "skipped: " << rep.strict_skipped << "\n";
  }
  if (run.pf) {
    o << "\n[perron_frobenius]\n";
    o << "resolved: " << run.pf->resolved << "\n";
    o << "max_relative_residual: " << fmt17(run.pf->max_relative_residual) << "\n";
    o << "min_margin: " << fmt17(run.pf->min_margin) << "\n";
    o << "max_adjacent_angle: " << fmt17(run.pf->max_adjacent_angle) << "\n";
    if (run.pf->max_adjacent_angle > 1.5707963267948966) {
      o << "warning: PF direction turns by more than pi/2 between adjacent grid points (orientation flip or unresolved rapid rotation)\n";
    }
  }
  o << "\nverdict: " << to_string(rep.verdict) << "\n";
  o << "exit_status: " << exit_status(rep.verdict) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------

RunResult run_analyze(const AnalysisConfig& cfg) {
  RunResult run;
  run.command = "analyze";
  std::optional<PipelineModel> model;
  std::optional<Grid> grid;
  try {
    cfg.validate();
    OutputDir out(cfg.out_dir, run);
    const int workers = cfg.effective_workers();
    model.emplace(build_model(cfg, run.timings));
    const int n = model->spec.dimension();
    grid.emplace(make_grid(cfg.grid, n, model->fixed_point ? model->fixed_point->point : Vec()));
    const EigenConeField field(model->pairs);
    const VerifyOptions opts = verify_options(cfg);
    const double T = default_strict_T(cfg, &*model);

    PositivityReport rep = timed(run.timings, "positivity", [&] { return verify_positivity(model->spec, field, grid->points, opts); });
    const StrictnessResult strict = timed(run.timings, "strictness", [&] {
      return verify_strictness(model->spec, field, grid->points, T, cfg.eps_min, opts);
    });
    rep.strictness_evaluated = true;
    rep.strict_T = T;
    rep.eps_min = cfg.eps_min;
    rep.epsilon_hat = strict.epsilon_hat;
    rep.strict_resolved = strict.resolved;
    rep.strict_skipped = strict.skipped;
    if (rep.verdict == Verdict::Positive && strict.strict) rep.verdict = Verdict::StrictlyPositive;
    run.report = rep;

    run.residuals = timed(run.timings, "residuals", [&] { return residual_stats(*model, *grid, workers); });
    PFStats pfs;
    const auto pf = timed(run.timings, "pf_field", [&] { return pf_full_grid(*model, *grid, workers, pfs); });
    run.pf = pfs;

    timed(run.timings, "export", [&] {
      if (n == 2) out.write("cone_grid.csv", [&](std::ostream& s) { write_cone_grid_csv(s, field, grid->points, workers); });
      out.write("pf_field.csv", [&](std::ostream& s) { write_pf_field_csv(s, pf); });
      for (std::size_t k = 0; k < model->pairs.size(); ++k) {
        out.write("eigenpair_" + std::to_string(k + 1) + ".csv",
                  [&](std::ostream& s) { write_eigenpair_csv(s, model->pairs[k], grid->points); });
      }
      out.write("margins.csv", [&](std::ostream& s) { write_margins_csv(s, rep, &strict, n); });
      out.write("counterexamples.csv", [&](std::ostream& s) { write_counterexamples_csv(s, rep, n); });
    });
    run.exit_status = exit_status(rep.verdict);
    out.write("report.txt", [&](std::ostream& s) { s << format_report(cfg, &*model, *grid, rep, run); });
  } catch (const Error& e) {
    run.error = error_text(e);
    run.exit_status = 3;
  }
  finish(cfg, run, model ? &*model : nullptr, grid ? &*grid : nullptr);
  return run;
}

RunResult run_verify(const AnalysisConfig& cfg) {
  RunResult run;
  run.command = "verify";
  std::optional<PipelineModel> model;
  std::optional<Grid> grid;
  try {
    cfg.validate();
    OutputDir out(cfg.out_dir, run);
    std::unique_ptr<ConeField> field;
    std::optional<SystemSpec> user_spec;
    if (!cfg.cones_file.empty()) {
      user_spec.emplace(load_system(cfg));
      field = std::make_unique<TabulatedConeField>(TabulatedConeField::parse_csv(read_file(cfg.cones_file)));
      run.notes.push_back("cones from user rows file " + cfg.cones_file);
    } else {
      model.emplace(build_model(cfg, run.timings));
      field = std::make_unique<EigenConeField>(model->pairs);
    }
    const SystemSpec& spec = model ? model->spec : *user_spec;
    const int n = spec.dimension();
    grid.emplace(make_grid(cfg.grid, n, model && model->fixed_point ? model->fixed_point->point : Vec()));
    const VerifyOptions opts = verify_options(cfg);
    const double T = default_strict_T(cfg, model ? &*model : nullptr);
    PositivityReport rep = timed(run.timings, "positivity", [&] { return verify_positivity(spec, *field, grid->points, opts); });
    const StrictnessResult strict = timed(run.timings, "strictness", [&] {
      return verify_strictness(spec, *field, grid->points, T, cfg.eps_min, opts);
    });
    rep.strictness_evaluated = true;
    rep.strict_T = T;
    rep.eps_min = cfg.eps_min;
    rep.epsilon_hat = strict.epsilon_hat;
    rep.strict_resolved = strict.resolved;
    rep.strict_skipped = strict.skipped;
    if (rep.verdict == Verdict::Positive && strict.strict) rep.verdict = Verdict::StrictlyPositive;
    run.report = rep;
    out.write("margins.csv", [&](std::ostream& s) { write_margins_csv(s, rep, &strict, n); });
    out.write("counterexamples.csv", [&](std::ostream& s) { write_counterexamples_csv(s, rep, n); });
    run.exit_status = exit_status(rep.verdict);
    out.write("report.txt", [&](std::ostream& s) { s << format_report(cfg, model ? &*model : nullptr, *grid, rep, run); });
  } catch (const Error& e) {
    run.error = error_text(e);
    run.exit_status = 3;
  }
  finish(cfg, run, model ? &*model : nullptr, grid ? &*grid : nullptr);
  return run;
}

RunResult run_trace(const AnalysisConfig& cfg) {
  RunResult run;
  run.command = "trace";
  try {
    cfg.integrator.validate();
    OutputDir out(cfg.out_dir, run);
    const SystemSpec spec = load_system(cfg);
    const int n = spec.dimension();
    if (static_cast<int>(cfg.trace_x0.size()) != n) {
      throw Error(ErrorKind::DimensionMismatch,
                  "trace needs x0 with " + std::to_string(n) + " components, got " + std::to_string(cfg.trace_x0.size()));
    }
    const Vec x0 = Eigen::Map<const Vec>(cfg.trace_x0.data(), n);
    std::vector<std::string> header{"t"};
    for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
    if (cfg.trace_frames) {
      for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= n; ++j) header.push_back("m" + std::to_string(i) + std::to_string(j));
      }
    }
    try {
      if (cfg.trace_frames) {
        const TangentTrajectory tr = timed(run.timings, "integrate", [&] {
          return integrate_prolonged(spec, x0, Mat::Identity(n, n), cfg.trace_t, cfg.integrator);
        });
        out.write("trace.csv", [&](std::ostream& s) {
          csv_header(s, header);
          for (std::size_t k = 0; k < tr.times.size(); ++k) {
            std::vector<double> row{tr.times[k]};
            row.insert(row.end(), tr.states[k].data(), tr.states[k].data() + n);
            for (int i = 0; i < n; ++i) {
              for (int j = 0; j < n; ++j) row.push_back(tr.frames[k](i, j));
            }
            csv_line(s, row);
          }
        });
      } else {
        const Trajectory tr = timed(run.timings, "integrate", [&] { return integrate(spec, x0, cfg.trace_t, cfg.integrator); });
        out.write("trace.csv", [&](std::ostream& s) {
          csv_header(s, header);
          for (std::size_t k = 0; k < tr.times.size(); ++k) {
            std::vector<double> row{tr.times[k]};
            row.insert(row.end(), tr.states[k].data(), tr.states[k].data() + n);
            csv_line(s, row);
          }
        });
      }
    } catch (const DivergenceError& e) {
      throw Error(ErrorKind::Divergence, std::string(e.what()) + "; last state " + vec_str(e.last_state()) +
                                             " at t = " + fmt17(e.time()));
    }
    run.exit_status = 0;
  } catch (const Error& e) {
    run.error = error_text(e);
    run.exit_status = 3;
  }
  finish(cfg, run, nullptr, nullptr);
  return run;
}

RunResult run_export_grid(const AnalysisConfig& cfg) {
  RunResult run;
  run.command = "export-grid";
  std::optional<PipelineModel> model;
  std::optional<Grid> grid;
  try {
    cfg.validate();
    OutputDir out(cfg.out_dir, run);
    const int workers = cfg.effective_workers();
    model.emplace(build_model(cfg, run.timings));
    const int n = model->spec.dimension();
    grid.emplace(make_grid(cfg.grid, n, model->fixed_point ? model->fixed_point->point : Vec()));
    const EigenConeField field(model->pairs);
    PFStats pfs;
    const auto pf = timed(run.timings, "pf_field", [&] { return pf_full_grid(*model, *grid, workers, pfs); });
    run.pf = pfs;
    timed(run.timings, "export", [&] {
      if (n == 2) out.write("cone_grid.csv", [&](std::ostream& s) { write_cone_grid_csv(s, field, grid->points, workers); });
      out.write("pf_field.csv", [&](std::ostream& s) { write_pf_field_csv(s, pf); });
      out.write("levels.csv", [&](std::ostream& s) { write_levels_csv(s, *model, *grid, workers); });
    });
    // PF curves through seeds on the vertical midline of the grid.
    std::vector<Vec> seeds;
    for (int k = 0; k < cfg.pf_curves; ++k) {
      Vec x = cfg.grid.center(n);
      if (model->fixed_point) {
        for (int i = 2; i < n; ++i) x[i] = model->fixed_point->point[i];
      }
      x[1] = cfg.grid.lo2 + (cfg.grid.hi2 - cfg.grid.lo2) * (k + 1.0) / (cfg.pf_curves + 1.0);
      if (std::hypot(x[0], x[1]) < cfg.grid.exclude_disk) x[0] += cfg.grid.exclude_disk;
      seeds.push_back(x);
    }
    std::vector<PFCurve> curves(seeds.size());
    timed(run.timings, "pf_curves", [&] {
      parallel_for(seeds.size(), workers, [&](std::size_t k) {
        const PFCurve back = pf_curve(model->pairs, seeds[k], -cfg.pf_curve_length, cfg.pf_curve_step);
        const PFCurve fwd = pf_curve(model->pairs, seeds[k], cfg.pf_curve_length, cfg.pf_curve_step);
        PFCurve c;
        for (std::size_t i = back.points.size(); i-- > 1;) {
          c.s.push_back(back.s[i]);
          c.points.push_back(back.points[i]);
          c.phi.push_back(back.phi[i]);
        }
        c.s.insert(c.s.end(), fwd.s.begin(), fwd.s.end());
        c.points.insert(c.points.end(), fwd.points.begin(), fwd.points.end());
        c.phi.insert(c.phi.end(), fwd.phi.begin(), fwd.phi.end());
        c.complete = back.complete && fwd.complete;
        c.status = back.status.empty() ? fwd.status : back.status;
        curves[k] = std::move(c);
      });
    });
    for (std::size_t k = 0; k < curves.size(); ++k) {
      if (!curves[k].complete) run.notes.push_back("pf curve " + std::to_string(k + 1) + " stopped early: " + curves[k].status);
      out.write("pf_curve_" + std::to_string(k + 1) + ".csv", [&](std::ostream& s) { write_pf_curve_csv(s, curves[k]); });
    }
    run.exit_status = 0;
  } catch (const Error& e) {
    run.error = error_text(e);
    run.exit_status = 3;
  }
  finish(cfg, run, model ? &*model : nullptr, grid ? &*grid : nullptr);
  return run;
}

}  // namespace conefield
