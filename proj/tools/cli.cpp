#include "cli.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <memory>

#include "CLI11.hpp"
#include "conefield/analysis.hpp"
#include "conefield/error.hpp"

namespace conefield {

namespace {

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

// Flags shared by all commands, mapped onto config keys.
const Flag kCommonFlags[] = {
    {"--builtin", "system.builtin", "builtin system (fixedpoint-example, vanderpol, linear-diag(a,b), ...)"},
    {"--system-file", "system.file", "system definition file"},
    {"--system", "system.text", "inline system definition"},
    {"--mode", "mode", "auto | fixed-point | limit-cycle"},
    {"--grid", "grid", "lo1:hi1:lo2:hi2:res"},
    {"--exclude-disk", "grid.exclude_disk", "drop grid points with |(x1,x2)| < r"},
    {"--rays", "verify.rays", "rays per grid point"},
    {"--horizons", "verify.horizons", "comma-separated propagation horizons"},
    {"--strict-T", "verify.strict_T", "strictness horizon (default: 2, or one period)"},
    {"--eps-min", "verify.eps_min", "strictness threshold"},
    {"--out", "out", "output directory"},
    {"--seed", "seed", "random seed"},
    {"--workers", "workers", "worker threads (0: all cores)"},
};

struct Command {
  CLI::App* app = nullptr;
  std::map<std::string, std::string> values;  // key -> raw value
  std::string config_file;
  std::vector<std::string> sets;
};

void add_common(Command& c) {
  c.app->add_option("--config", c.config_file, "config file with key = value lines")->check(CLI::ExistingFile);
  c.app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
  for (const Flag& f : kCommonFlags) c.app->add_option(f.name, c.values[f.key], f.help);
}

void add_option(Command& c, const char* name, const char* key, const char* help) {
  c.app->add_option(name, c.values[key], help);
}

AnalysisConfig build_config(const Command& c) {
  AnalysisConfig cfg;
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  for (const auto& [key, value] : c.values) {
    // Only flags actually given on the command line override the file.
    if (!value.empty()) cfg.set(key, value);
  }
  for (const std::string& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

void summarize(const RunResult& run, const AnalysisConfig& cfg) {
  if (!run.error.empty()) std::cerr << "error: " << run.error << "\n";
  if (run.report) {
    const PositivityReport& r = *run.report;
    std::cout << "verdict: " << to_string(r.verdict) << "\n";
    std::cout << "resolved " << r.resolved << ", skipped " << r.skipped << ", counterexamples "
              << r.counterexample_count << ", worst margin " << r.worst_margin << ", epsilon_hat " << r.epsilon_hat
              << " (T = " << r.strict_T << ")\n";
  }
  if (!run.artifacts.empty()) std::cout << "artifacts in " << cfg.out_dir << ":";
  for (const std::string& a : run.artifacts) std::cout << " " << a;
  if (!run.artifacts.empty()) std::cout << "\n";
  std::cout << "exit status " << run.exit_status << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"conefield: cone fields and Perron-Frobenius vectors from Koopman eigenfunctions"};
  app.require_subcommand(1);

  Command analyze, verify, trace, export_grid;
  analyze.app = app.add_subcommand("analyze", "full pipeline: eigenpairs, cones, positivity, PF field");
  verify.app = app.add_subcommand("verify", "positivity and strictness only (computed or user cones)");
  trace.app = app.add_subcommand("trace", "dump a trajectory (and prolonged frames)");
  export_grid.app = app.add_subcommand("export-grid", "cone grid, PF field, eigenfunction levels, PF curves");
  for (Command* c : {&analyze, &verify, &trace, &export_grid}) add_common(*c);
  add_option(verify, "--cones", "verify.cones", "cone rows CSV (x1,x2,dom_1,dom_2,sub_re_1,sub_re_2,sub_im_1,sub_im_2)");
  add_option(trace, "--x0", "trace.x0", "initial state, comma-separated");
  add_option(trace, "--t-end", "trace.t_end", "final time (negative: backward)");
  bool frames = false;
  trace.app->add_flag("--frames", frames, "also integrate the prolonged system from the identity");
  add_option(export_grid, "--curves", "pf.curves", "number of PF curves");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  Command* chosen = nullptr;
  for (Command* c : {&analyze, &verify, &trace, &export_grid}) {
    if (c->app->parsed()) chosen = c;
  }
  AnalysisConfig cfg;
  try {
    cfg = build_config(*chosen);
    if (frames) cfg.trace_frames = true;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 3;
  }
  RunResult run;
  if (chosen == &analyze) {
    run = run_analyze(cfg);
  } else if (chosen == &verify) {
    run = run_verify(cfg);
  } else if (chosen == &trace) {
    run = run_trace(cfg);
  } else {
    run = run_export_grid(cfg);
  }
  summarize(run, cfg);
  return run.exit_status;
}

}  // namespace conefield
