#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "qgi/cli.hpp"
#include "qgi/errors.hpp"
#include "qgi/phases.hpp"

using namespace qgi;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qgi_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig cfg_from(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// data rows of a CSV written by the pipeline: comment lines and the header skipped
std::vector<std::vector<double>> rows(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::vector<std::vector<double>> out;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
    out.push_back(r);
  }
  return out;
}

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run_binary(const std::string& args) {
  const int st = std::system((std::string(QGI_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST_CASE("config parsing with units in key names") {
  const auto c = cfg_from(
      "[timings]\ntwo_t_us = 1000, 1500\nt_kick_us = 70\n"
      "[currents]\ni_hold_ma = 23.5\nz_hold_um = -100\n"
      "[run]\nseed = 42\ndt_us = 0.25\n");
  REQUIRE(c.two_T.size() == 2);
  CHECK(c.two_T[1] == doctest::Approx(1.5e-3));
  CHECK(c.T_kick == doctest::Approx(70e-6));
  CHECK(c.I_hold == doctest::Approx(23.5e-3));
  CHECK(c.z_hold == doctest::Approx(-100e-6));
  CHECK(c.seed == 42);
  CHECK(c.dt == doctest::Approx(0.25e-6));
  const auto r = cfg_from("[timings]\ntwo_t_start_us = 1000\ntwo_t_stop_us = 2000\ntwo_t_step_us = 250\n");
  CHECK(r.two_T.size() == 5);
  CHECK(r.two_T.back() == doctest::Approx(2e-3));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(cfg_from("[timings]\ntwo_t_ms = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("[magic]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("[physics]\ng_m_s2 = fast\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("[timings]\ntwo_t_us = 1000\ntwo_t_start_us = 500\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("[timings]\ntwo_t_us = 100\n"), ConfigError);  // T_h < 0
  CHECK_THROWS_AS(cfg_from("[fringe]\nvis_start = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("[run]\nthreads = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_command("launch"), ConfigError);
}

TEST_CASE("config hash is FNV-1a of the canonical form") {
  RunConfig a;
  CHECK(config_hash(a) == fnv1a(a.canonical()));
  RunConfig b = a;
  b.out_dir = "elsewhere";
  b.threads = 8;
  CHECK(config_hash(b) == config_hash(a));
  b.seed = 2;
  CHECK(config_hash(b) != config_hash(a));
  RunConfig c = a;
  c.T_d = 78e-6;
  CHECK(config_hash(c) != config_hash(a));
  // reference vector of the hash itself
  CHECK(fnv1a("a") == "af63dc4c8601ec8c");
}

TEST_CASE("phases table matches the closed form") {
  RunConfig c;
  c.out_dir = scratch("phases").string();
  c.two_T = {1.0e-3, 2.426e-3};
  const auto res = run_pipeline(c, Command::phases);
  const auto t = rows(fs::path(c.out_dir) / "phases.csv");
  REQUIRE(t.size() == 2);
  for (size_t i = 0; i < t.size(); ++i) {
    Timings tm = Timings::paper(c.two_T[i]);
    CHECK(t[i][1] == doctest::Approx(analytic_qgi_phase(tm, c.g_eff, Species::rubidium87())).epsilon(1e-11));
    CHECK(t[i][7] < 1e-6);
  }
  CHECK(t[1][1] == doctest::Approx(81.7).epsilon(0.1));
  CHECK(slurp(res.files[0]).rfind(provenance_line(c, Command::phases), 0) == 0);
}

TEST_CASE("calibrate reports a holding current in the expected range") {
  RunConfig c;
  c.out_dir = scratch("calibrate").string();
  run_pipeline(c, Command::calibrate);
  const auto t = rows(fs::path(c.out_dir) / "calibration.csv");
  REQUIRE(t.size() == 1);
  CHECK(t[0][1] > 20.0);
  CHECK(t[0][1] < 27.0);
  CHECK(std::abs(t[0][2]) < 1e-4);
  CHECK(t[0][4] == doctest::Approx(t[0][1]).epsilon(0.01));
}

TEST_CASE("fringes then analyze recovers the cubic from a noiseless scan") {
  RunConfig c;
  c.out_dir = scratch("roundtrip").string();
  c.amp_sigma = 0.0;
  run_pipeline(c, Command::fringes);
  c.scan_csv = (fs::path(c.out_dir) / "scan.csv").string();
  run_pipeline(c, Command::analyze);
  const std::string txt = slurp(fs::path(c.out_dir) / "phase_fit.txt");
  const auto pos = txt.find("phase_cubic_raw = [");
  REQUIRE(pos != std::string::npos);
  std::stringstream ss(txt.substr(pos + 19));
  std::vector<double> cubic(4);
  char sep;
  ss >> cubic[0] >> sep >> cubic[1] >> sep >> cubic[2] >> sep >> cubic[3];
  const double K = Species::rubidium87().mass_kg * c.g_eff * c.g_eff / (3 * Constants{}.hbar);
  CHECK(std::abs(cubic[3] / (K / 8) - 1) < 5e-3);
  for (const char* f : {"fit.svg", "phase.svg", "phase_fit.csv", "phase_sigma_poly.csv"})
    CHECK(fs::exists(fs::path(c.out_dir) / f));
}

TEST_CASE("identical config and seed give byte-identical outputs") {
  RunConfig c;
  c.out_dir = scratch("det_a").string();
  run_pipeline(c, Command::fringes);
  RunConfig d = c;
  d.out_dir = scratch("det_b").string();
  run_pipeline(d, Command::fringes);
  CHECK(slurp(fs::path(c.out_dir) / "scan.csv") == slurp(fs::path(d.out_dir) / "scan.csv"));
  RunConfig e = c;
  e.seed = 2;
  e.out_dir = scratch("det_c").string();
  run_pipeline(e, Command::fringes);
  CHECK(slurp(fs::path(c.out_dir) / "scan.csv") != slurp(fs::path(e.out_dir) / "scan.csv"));
}

TEST_CASE("sweep merges worker results deterministically") {
  RunConfig c;
  c.two_T = {2.0e-3, 1.4e-3};
  c.dt = 1e-6;
  c.I_hold = 23.56e-3;
  c.out_dir = scratch("sweep1").string();
  c.threads = 1;
  run_pipeline(c, Command::sweep);
  RunConfig d = c;
  d.out_dir = scratch("sweep3").string();
  d.threads = 3;
  run_pipeline(d, Command::sweep);
  const auto a = slurp(fs::path(c.out_dir) / "sweep.csv");
  CHECK(a == slurp(fs::path(d.out_dir) / "sweep.csv"));
  const auto t = rows(fs::path(c.out_dir) / "sweep.csv");
  REQUIRE(t.size() == 2);
  CHECK(t[0][0] < t[1][0]);  // sorted by 2T
  for (const auto& r : t) {
    CHECK(r[3] <= r[2]);
    CHECK(r[4] >= r[2]);
    CHECK(r[4] - r[3] < 0.5);
    CHECK(std::abs(r[2] / r[1] - 1) < 0.05);
  }
  CHECK(fs::exists(fs::path(c.out_dir) / "sweep_points" / "point_1400us.csv"));
}

TEST_CASE("simulate writes trajectories, widths and overlap with provenance") {
  RunConfig c;
  c.out_dir = scratch("simulate").string();
  const auto res = run_pipeline(c, Command::simulate);
  for (const auto& f : res.files) {
    const auto body = slurp(f);
    CHECK(body.find("config_hash=" + config_hash(c)) != std::string::npos);
    CHECK(body.find("seed=1") != std::string::npos);
  }
  const auto ov = rows(fs::path(c.out_dir) / "overlap.csv");
  REQUIRE(ov.size() == 1);
  CHECK(ov[0][1] > 0.9);
  CHECK(std::abs(ov[0][4]) < 2.0);
  CHECK(std::abs(ov[0][6]) < 1e-6);  // arms close in position
}

TEST_CASE("error records and exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(NumericalError("x", "extraction")) == 3);
  CHECK(exit_code_for(std::runtime_error("x")) == 3);
  const auto j = nlohmann::json::parse(error_record(NumericalError("too few", "extraction"), "analyze"));
  CHECK(j["kind"] == "extraction");
  CHECK(j["exit_code"] == 3);
  CHECK(j["command"] == "analyze");
}

TEST_CASE("binary exit codes and error file") {
  const auto dir = scratch("binary");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.ini") << "[timings]\nnot_a_key = 1\n";
  CHECK(run_binary("phases --config " + (dir / "bad.ini").string() + " --out " + dir.string()) == 2);
  const auto j = nlohmann::json::parse(slurp(dir / "error.json"));
  CHECK(j["kind"] == "config");
  // a flat scan has no fringes to extract
  std::ofstream(dir / "flat.csv") << "two_T_us,population,sem\n";
  {
    std::ofstream f(dir / "flat.csv", std::ios::app);
    for (int i = 0; i < 100; ++i) f << 200 + 5 * i << ",0.5,0.01\n";
  }
  CHECK(run_binary("analyze --scan " + (dir / "flat.csv").string() + " --out " + dir.string()) == 3);
  CHECK(nlohmann::json::parse(slurp(dir / "error.json"))["kind"] == "extraction");
  CHECK(run_binary("phases --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "phases.csv"));
}
