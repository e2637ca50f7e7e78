#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "conefield/analysis.hpp"
#include "conefield/error.hpp"
#include "doctest.h"

using namespace conefield;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("conefield_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> r;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) r.push_back(std::stod(cell));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("grid spec parsing and exclusion") {
  const GridSpec g = GridSpec::parse("-3:3:-2:2:5");
  CHECK(g.lo1 == -3.0);
  CHECK(g.hi2 == 2.0);
  CHECK(g.res == 5);
  CHECK_THROWS_AS(GridSpec::parse("1:0:0:1:3"), Error);
  CHECK_THROWS_AS(GridSpec::parse("0:1:0:1"), Error);
  CHECK_THROWS_AS(GridSpec::parse("0:1:0:1:1"), Error);
  CHECK_THROWS_AS(GridSpec::parse("0:1:0:x:3"), Error);

  GridSpec h = GridSpec::parse("-1:1:-1:1:3");
  CHECK(make_grid(h, 2).points.size() == 9);
  h.exclude_disk = 0.5;
  const Grid grid = make_grid(h, 2);
  CHECK(grid.points.size() == 8);
  CHECK(grid.excluded == 1);
  CHECK(grid.full_index[4] == 5);
}

TEST_CASE("config keys, file loading and overrides") {
  AnalysisConfig cfg;
  cfg.load_text("# comment\nsystem.builtin = vanderpol\ngrid = -3:3:-3:3:9\ngrid.exclude_disk = 0.3\n"
                "verify.horizons = 0.5, 1.5\nseed = 7\n");
  CHECK(cfg.builtin == "vanderpol");
  CHECK(cfg.grid.res == 9);
  CHECK(cfg.grid.exclude_disk == 0.3);
  REQUIRE(cfg.horizons.size() == 2);
  CHECK(cfg.horizons[1] == 1.5);
  CHECK(cfg.seed == 7);
  cfg.set("grid", "-1:1:-1:1:3");
  CHECK(cfg.grid.exclude_disk == 0.3);  // the disk survives a grid override
  CHECK_THROWS_AS(cfg.set("no.such.key", "1"), Error);
  CHECK_THROWS_AS(cfg.set("verify.rays", "many"), Error);
  CHECK_THROWS_AS(cfg.set("mode", "sideways"), Error);
  CHECK_THROWS_AS(cfg.load_text("justtext\n"), Error);

  // Every key round-trips through entries().
  AnalysisConfig copy;
  for (const auto& [k, v] : cfg.entries()) copy.set(k, v);
  CHECK(copy.entries() == cfg.entries());
  CHECK(AnalysisConfig::keys().size() == cfg.entries().size());
}

TEST_CASE("command-line flags override the config file") {
  const fs::path dir = scratch("override");
  const fs::path conf = dir / "run.conf";
  std::ofstream(conf) << "system.builtin = linear-diag(-1,-2)\ntrace.x0 = 5,5\ntrace.t_end = 1\n";
  const int rc = run_cli({"trace", "--config", conf.string(), "--x0", "1,1", "--out", (dir / "o").string()});
  CHECK(rc == 0);
  const auto rows = read_csv(dir / "o" / "trace.csv");
  REQUIRE(!rows.empty());
  CHECK(rows.front()[1] == 1.0);
  CHECK(std::abs(rows.back()[0] - 1.0) < 1e-15);
}

TEST_CASE("trace: linear final state and frames") {
  const fs::path dir = scratch("trace_lin");
  const int rc = run_cli({"trace", "--builtin", "linear-diag(-1,-2)", "--x0", "1,1", "--t-end", "1", "--frames", "--out",
                          dir.string()});
  CHECK(rc == 0);
  const auto rows = read_csv(dir / "trace.csv");
  REQUIRE(rows.size() > 2);
  const auto& last = rows.back();
  REQUIRE(last.size() == 7);
  CHECK(std::abs(last[1] - std::exp(-1.0)) < 1e-8);
  CHECK(std::abs(last[2] - std::exp(-2.0)) < 1e-8);
  CHECK(std::abs(last[3] - std::exp(-1.0)) < 1e-8);  // frame = diag(e^{-t}, e^{-2t})
  CHECK(std::abs(last[4]) < 1e-12);
  CHECK(std::abs(last[6] - std::exp(-2.0)) < 1e-8);
}

TEST_CASE("trace: Van der Pol times are monotone") {
  const fs::path dir = scratch("trace_vdp");
  CHECK(run_cli({"trace", "--builtin", "vanderpol", "--x0", "2,0", "--t-end", "20", "--out", dir.string()}) == 0);
  const auto rows = read_csv(dir / "trace.csv");
  REQUIRE(rows.size() > 10);
  CHECK(rows.front()[0] == 0.0);
  CHECK(rows.back()[0] == doctest::Approx(20.0).epsilon(1e-14));
  bool monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) monotone = monotone && rows[i][0] > rows[i - 1][0];
  CHECK(monotone);
}

TEST_CASE("trace: divergence is reported with exit 3") {
  AnalysisConfig cfg;
  cfg.system_text = "n=1; f1=x1^3";
  cfg.trace_x0 = {1.0};
  cfg.trace_t = 5.0;
  cfg.out_dir = scratch("trace_div").string();
  const RunResult run = run_trace(cfg);
  CHECK(run.exit_status == 3);
  CHECK(run.error.find("divergence") != std::string::npos);
  CHECK(run.error.find("last state") != std::string::npos);
  CHECK(fs::exists(fs::path(cfg.out_dir) / "manifest.json"));
}

TEST_CASE("exit status contract") {
  CHECK(exit_status(Verdict::StrictlyPositive) == 0);
  CHECK(exit_status(Verdict::Positive) == 1);
  CHECK(exit_status(Verdict::Counterexamples) == 2);
  CHECK(exit_status(Verdict::Unresolved) == 3);
  CHECK(run_cli({"analyze", "--no-such-flag"}) == 3);
  CHECK(run_cli({"analyze", "--builtin", "nosuch", "--out", scratch("nosuch").string()}) == 3);
  CHECK(run_cli({"analyze", "--builtin", "vanderpol", "--grid", "1:0:0:1:3"}) == 3);
}

TEST_CASE("analyze: equal eigenvalues are positive but not strict") {
  const fs::path dir = scratch("lin11");
  CHECK(run_cli({"analyze", "--builtin", "linear-diag(-1,-1)", "--grid", "-1:1:-1:1:5", "--out", dir.string()}) == 1);
  for (const char* f : {"cone_grid.csv", "pf_field.csv", "margins.csv", "counterexamples.csv", "report.txt",
                        "manifest.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
}

TEST_CASE("analyze: forcing the fixed-point pipeline on Van der Pol is refused") {
  AnalysisConfig cfg;
  cfg.builtin = "vanderpol";
  cfg.mode = PipelineMode::FixedPoint;
  cfg.grid = GridSpec::parse("-1:1:-1:1:3");
  cfg.out_dir = scratch("vdp_refuse").string();
  const RunResult run = run_analyze(cfg);
  CHECK(run.exit_status == 3);
  CHECK(run.error.find("refus") != std::string::npos);
  CHECK(run.error.find("complex") != std::string::npos);
}

TEST_CASE("verify: swapped user rows give counterexamples, malformed rows give exit 3") {
  const fs::path dir = scratch("swapped");
  AnalysisConfig cfg;
  cfg.builtin = "fixedpoint-example";
  cfg.grid = GridSpec::parse("-1:1:-1:1:5");
  cfg.out_dir = (dir / "a").string();
  REQUIRE(run_export_grid(cfg).exit_status == 0);

  // Swap the dominant and subordinate real rows.
  std::ifstream in(dir / "a" / "cone_grid.csv");
  std::ofstream out(dir / "swapped.csv");
  std::string line;
  std::getline(in, line);
  out << line << "\n";
  while (std::getline(in, line)) {
    std::vector<std::string> c;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    std::swap(c[2], c[4]);
    std::swap(c[3], c[5]);
    for (std::size_t i = 0; i < c.size(); ++i) out << (i ? "," : "") << c[i];
    out << "\n";
  }
  out.close();

  cfg.cones_file = (dir / "swapped.csv").string();
  cfg.out_dir = (dir / "b").string();
  const RunResult run = run_verify(cfg);
  CHECK(run.exit_status == 2);
  REQUIRE(run.report);
  CHECK(run.report->counterexample_count > 0);
  const auto ce = read_csv(dir / "b" / "counterexamples.csv");
  REQUIRE(!ce.empty());
  CHECK(ce.front().size() == 6);  // x1, x2, dx1, dx2, t, margin
  CHECK(ce.front()[5] < 0.0);

  std::ofstream(dir / "bad.csv") << "x1,x2\n1,2,3\n";
  cfg.cones_file = (dir / "bad.csv").string();
  cfg.out_dir = (dir / "c").string();
  const RunResult bad = run_verify(cfg);
  CHECK(bad.exit_status == 3);
  CHECK(bad.error.find("malformed") != std::string::npos);
}

TEST_CASE("verify: Van der Pol grid through the origin skips it and still decides") {
  AnalysisConfig cfg;
  cfg.builtin = "vanderpol";
  cfg.grid = GridSpec::parse("-1:1:-1:1:3");
  cfg.out_dir = scratch("vdp_origin").string();
  const RunResult run = run_verify(cfg);
  REQUIRE(run.report);
  CHECK(run.report->skipped > 0);
  CHECK(run.report->resolved == 8);
  CHECK(run.exit_status <= 2);
}

TEST_CASE("determinism: repeated runs give byte-identical CSVs") {
  const fs::path dir = scratch("det");
  auto run = [&](const std::string& sub, const std::string& workers) {
    return run_cli({"analyze", "--builtin", "fixedpoint-example", "--grid", "-1:1:-1:1:5", "--seed", "3", "--workers",
                    workers, "--out", (dir / sub).string()});
  };
  CHECK(run("a", "1") == 0);
  CHECK(run("b", "1") == 0);
  CHECK(run("c", "3") == 0);
  int compared = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    if (e.path().extension() != ".csv") continue;
    const std::string a = slurp(e.path());
    CHECK_MESSAGE(a == slurp(dir / "b" / e.path().filename()), e.path().filename().string());
    CHECK_MESSAGE(a == slurp(dir / "c" / e.path().filename()), e.path().filename().string());
    ++compared;
  }
  CHECK(compared >= 5);
}

TEST_CASE("export-grid writes levels and PF curves") {
  const fs::path dir = scratch("export");
  CHECK(run_cli({"export-grid", "--builtin", "fixedpoint-example", "--grid", "-1:1:-1:1:5", "--curves", "2", "--out",
                 dir.string()}) == 0);
  CHECK(fs::exists(dir / "levels.csv"));
  CHECK(fs::exists(dir / "pf_curve_1.csv"));
  CHECK(fs::exists(dir / "pf_curve_2.csv"));
  CHECK(!fs::exists(dir / "pf_curve_3.csv"));
  CHECK(fs::exists(dir / "manifest.json"));
}
